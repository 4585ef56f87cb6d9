"""Run reports derived exclusively from the ledger.

The ledger is the single source of truth: convergence series, lineage
graph, and the final summary are all reconstructed from the event stream,
never from in-memory state, so a report regenerated later is byte-identical
to the one written when the run finished.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from mles.ledger import LedgerEvent, ReplayState, replay

THOUGHT_EXCERPT_CHARS = 120


@dataclass(frozen=True)
class ConvergencePoint:
    cumulative_resets: int
    best_score: float
    generation: int


def convergence_series(events: list[LedgerEvent]) -> list[ConvergencePoint]:
    """Best-so-far score against cumulative environment resets.

    One point per generation that consumed resets; the series is strictly
    increasing in resets and non-decreasing in score.
    """
    points: list[ConvergencePoint] = []
    for ev in events:
        if ev.kind != "generation_summary":
            continue
        d = ev.data
        point = ConvergencePoint(
            cumulative_resets=d["resets_used"],
            best_score=d["best_score_so_far"],
            generation=d["generation"],
        )
        if points and point.cumulative_resets <= points[-1].cumulative_resets:
            # a generation that evaluated nothing contributes no new point;
            # keep the latest score at this reset count
            points[-1] = ConvergencePoint(
                cumulative_resets=points[-1].cumulative_resets,
                best_score=point.best_score,
                generation=point.generation,
            )
            continue
        points.append(point)
    return points


def convergence_csv(events: list[LedgerEvent]) -> str:
    lines = ["cumulative_resets,best_score,generation"]
    for p in convergence_series(events):
        lines.append(f"{p.cumulative_resets},{p.best_score!r},{p.generation}")
    return "\n".join(lines) + "\n"


def _admitted_individuals(events: list[LedgerEvent], state: ReplayState) -> list[dict]:
    """Individuals that were admitted to the pool at any point, ledger order."""
    ever_admitted: list[str] = []
    seen = set()
    for ev in events:
        if ev.kind == "pool_admitted":
            for ind_id in ev.data["admitted_ids"]:
                if ind_id not in seen:
                    seen.add(ind_id)
                    ever_admitted.append(ind_id)
    return [state.individuals[i] for i in ever_admitted]


@dataclass(frozen=True)
class LineageExport:
    nodes: tuple[dict, ...]
    edges: tuple[dict, ...]


def lineage_export(events: list[LedgerEvent]) -> LineageExport:
    """Ancestor graph over admitted individuals, labeled by operator."""
    state = replay(events)
    nodes = []
    node_ids = set()
    for ind in _admitted_individuals(events, state):
        nodes.append(
            {
                "id": ind["id"],
                "generation": ind["origin"]["generation"],
                "score": ind["metrics"]["aggregate_score"],
                "thought": ind["thought"][:THOUGHT_EXCERPT_CHARS],
            }
        )
        node_ids.add(ind["id"])
    edges = []
    for node in nodes:
        ind = state.individuals[node["id"]]
        for parent in ind["origin"]["parent_ids"]:
            if parent in node_ids:
                edges.append(
                    {"from": parent, "to": ind["id"], "operator": ind["origin"]["operator"]}
                )
    return LineageExport(nodes=tuple(nodes), edges=tuple(edges))


def lineage_json(events: list[LedgerEvent]) -> str:
    exp = lineage_export(events)
    return json.dumps(
        {"nodes": list(exp.nodes), "edges": list(exp.edges)}, sort_keys=True, indent=1
    ) + "\n"


def lineage_dot(events: list[LedgerEvent]) -> str:
    exp = lineage_export(events)
    lines = ["digraph lineage {", "  rankdir=LR;"]
    for node in exp.nodes:
        label = f"{node['id']}\\n{node['score']:.4g}"
        lines.append(f'  "{node["id"]}" [label="{label}"];')
    for edge in exp.edges:
        lines.append(
            f'  "{edge["from"]}" -> "{edge["to"]}" [label="{edge["operator"]}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def run_summary(events: list[LedgerEvent]) -> dict:
    state = replay(events)
    best = state.pool_members[0] if state.pool_member_ids else None
    return {
        "task": state.config.get("task"),
        "generations": state.generation,
        "queries_used": state.queries_used,
        "resets_used": state.resets_used,
        "pool_size": len(state.pool_member_ids),
        "best": None
        if best is None
        else {
            "id": best["id"],
            "score": best["metrics"]["aggregate_score"],
            "thought": best["thought"],
            "code": best["code"],
        },
        "halted": state.halted,
    }


def summary_json(events: list[LedgerEvent]) -> str:
    return json.dumps(run_summary(events), sort_keys=True, indent=1) + "\n"


def write_reports(run_dir: Path, events: list[LedgerEvent]) -> list[Path]:
    run_dir = Path(run_dir)
    outputs = {
        "convergence.csv": convergence_csv(events),
        "lineage.json": lineage_json(events),
        "lineage.dot": lineage_dot(events),
        "summary.json": summary_json(events),
    }
    written = []
    for name, text in outputs.items():
        path = run_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
