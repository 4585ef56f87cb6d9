"""Domain types shared by every engine module.

All types here are immutable value objects and may be shared freely across
workers. Construction-time validation enforces the cheap invariants; the
expensive ones (aggregate recomputation, lineage DAG shape) are checked by
the modules that own the corresponding operations.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

from mles.errors import EmptyCode

_WS_RUN = re.compile(r"[ \t]+")
_DEF_TEMPLATE = r"^[ \t]*def[ \t]+{name}[ \t]*\("


def normalize_code(code: str) -> str:
    """Whitespace-normal form of policy source.

    Line endings become ``\\n``, runs of spaces/tabs collapse to one space,
    trailing whitespace is stripped, and blank lines are dropped. Two codes
    differing only in whitespace share a normal form (and a fingerprint).
    """
    text = code.replace("\r\n", "\n").replace("\r", "\n")
    lines = [_WS_RUN.sub(" ", line).rstrip() for line in text.split("\n")]
    return "\n".join(line for line in lines if line)


def fingerprint(code: str) -> str:
    """Content hash of the whitespace-normalized code.

    Raises:
        EmptyCode: if the input is empty or all whitespace.
    """
    normal = normalize_code(code)
    if not normal:
        raise EmptyCode("policy code is empty or all whitespace")
    return hashlib.sha256(normal.encode("utf-8")).hexdigest()


def count_entry_point_defs(code: str, entry_point: str) -> int:
    """Number of top-level-ish definitions of the entry-point function."""
    pattern = re.compile(_DEF_TEMPLATE.format(name=re.escape(entry_point)), re.MULTILINE)
    return len(pattern.findall(code))


@dataclass(frozen=True)
class InstanceMetrics:
    """Outcome of one episode on one training/test instance.

    Exactly one task-specific group is populated: (fuel, success) for the
    lander task, completion for the racing task. reward and steps are common.
    """

    instance_id: str
    reward: float
    steps: int
    fuel: float | None = None
    success: bool | None = None
    completion: float | None = None

    def __post_init__(self) -> None:
        lander = self.fuel is not None or self.success is not None
        racing = self.completion is not None
        if lander == racing:
            raise ValueError(
                f"instance {self.instance_id!r}: exactly one task field group "
                f"must be populated (lander={lander}, racing={racing})"
            )
        if lander and (self.fuel is None or self.success is None):
            raise ValueError(f"instance {self.instance_id!r}: partial lander field group")
        if self.fuel is not None and self.fuel < 0:
            raise ValueError("fuel must be non-negative")
        if self.completion is not None and not 0.0 <= self.completion <= 100.0:
            raise ValueError("completion must lie in [0, 100]")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    @property
    def task_kind(self) -> str:
        return "racing" if self.completion is not None else "lander"


@dataclass(frozen=True)
class QuantitativeMetrics:
    """Aggregate score plus the per-instance evidence it was computed from."""

    aggregate_score: float
    per_instance: tuple[InstanceMetrics, ...]
    resets_used: int

    def __post_init__(self) -> None:
        if self.resets_used < 0:
            raise ValueError("resets_used must be non-negative")


@dataclass(frozen=True)
class IBEArtifactRef:
    """Pointer to one piece of behavioral evidence in the artifact store."""

    kind: str  # frame_stack_image | trajectory_map_image | text_state_trace
    instance_id: str
    content_ref: str
    media_type: str  # image/png | text/plain

    KINDS = ("frame_stack_image", "trajectory_map_image", "text_state_trace")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown IBE kind {self.kind!r}")
        is_text = self.kind == "text_state_trace"
        if is_text != (self.media_type == "text/plain"):
            raise ValueError("kind=text_state_trace iff media_type is text/plain")

    @property
    def is_image(self) -> bool:
        return self.media_type != "text/plain"


INIT_OPERATOR = "INIT"


@dataclass(frozen=True)
class LineageRecord:
    """Where an individual came from: parents, operator, generation."""

    parent_ids: tuple[str, ...]
    operator: str
    generation: int
    llm_response_hash: str | None = None

    def __post_init__(self) -> None:
        if self.generation < 0:
            raise ValueError("generation must be non-negative")
        evolutionary = self.operator != INIT_OPERATOR
        if evolutionary and not self.parent_ids:
            raise ValueError(f"operator {self.operator} requires parents")
        if not evolutionary and self.parent_ids:
            raise ValueError("initial individuals have no parents")


@dataclass(frozen=True)
class PolicyIndividual:
    """The evolved unit: code, thought, metrics, evidence, lineage."""

    id: str
    code: str
    thought: str
    metrics: QuantitativeMetrics | None
    ibe: tuple[IBEArtifactRef, ...]
    origin: LineageRecord
    fingerprint: str = field(default="")
    eval_status: str = "ok"  # ok | policy_error | timeout

    def __post_init__(self) -> None:
        if not self.fingerprint:
            object.__setattr__(self, "fingerprint", fingerprint(self.code))

    @property
    def evaluated(self) -> bool:
        return self.metrics is not None

    @property
    def aggregate_score(self) -> float:
        if self.metrics is None:
            raise ValueError(f"individual {self.id} is not evaluated")
        return self.metrics.aggregate_score

    def with_metrics(self, metrics: QuantitativeMetrics, eval_status: str = "ok") -> "PolicyIndividual":
        return replace(self, metrics=metrics, eval_status=eval_status)


def validate_entry_point(code: str, entry_point: str) -> None:
    """Enforce the exactly-one-entry-point invariant for candidate code."""
    n = count_entry_point_defs(code, entry_point)
    if n != 1:
        raise ValueError(f"code must define {entry_point!r} exactly once, found {n}")


# serialization helpers --------------------------------------------------------

def instance_metrics_to_dict(m: InstanceMetrics) -> dict:
    out: dict = {"instance_id": m.instance_id, "reward": m.reward, "steps": m.steps}
    if m.completion is not None:
        out["completion"] = m.completion
    else:
        out["fuel"] = m.fuel
        out["success"] = m.success
    return out


def instance_metrics_from_dict(d: dict) -> InstanceMetrics:
    return InstanceMetrics(
        instance_id=str(d["instance_id"]),
        reward=float(d["reward"]),
        steps=int(d["steps"]),
        fuel=None if d.get("fuel") is None else float(d["fuel"]),
        success=None if d.get("success") is None else bool(d["success"]),
        completion=None if d.get("completion") is None else float(d["completion"]),
    )


def metrics_to_dict(m: QuantitativeMetrics) -> dict:
    return {
        "aggregate_score": m.aggregate_score,
        "per_instance": [instance_metrics_to_dict(i) for i in m.per_instance],
        "resets_used": m.resets_used,
    }


def metrics_from_dict(d: dict) -> QuantitativeMetrics:
    return QuantitativeMetrics(
        aggregate_score=float(d["aggregate_score"]),
        per_instance=tuple(instance_metrics_from_dict(i) for i in d["per_instance"]),
        resets_used=int(d["resets_used"]),
    )


def individual_to_dict(ind: PolicyIndividual) -> dict:
    return {
        "id": ind.id,
        "code": ind.code,
        "thought": ind.thought,
        "metrics": None if ind.metrics is None else metrics_to_dict(ind.metrics),
        "ibe": [
            {
                "kind": r.kind,
                "instance_id": r.instance_id,
                "content_ref": r.content_ref,
                "media_type": r.media_type,
            }
            for r in ind.ibe
        ],
        "origin": {
            "parent_ids": list(ind.origin.parent_ids),
            "operator": ind.origin.operator,
            "generation": ind.origin.generation,
            "llm_response_hash": ind.origin.llm_response_hash,
        },
        "fingerprint": ind.fingerprint,
        "eval_status": ind.eval_status,
    }


def individual_from_dict(d: dict) -> PolicyIndividual:
    return PolicyIndividual(
        id=str(d["id"]),
        code=d["code"],
        thought=d["thought"],
        metrics=None if d.get("metrics") is None else metrics_from_dict(d["metrics"]),
        ibe=tuple(
            IBEArtifactRef(
                kind=r["kind"],
                instance_id=str(r["instance_id"]),
                content_ref=r["content_ref"],
                media_type=r["media_type"],
            )
            for r in d.get("ibe", [])
        ),
        origin=LineageRecord(
            parent_ids=tuple(d["origin"]["parent_ids"]),
            operator=d["origin"]["operator"],
            generation=int(d["origin"]["generation"]),
            llm_response_hash=d["origin"].get("llm_response_hash"),
        ),
        fingerprint=d.get("fingerprint", ""),
        eval_status=d.get("eval_status", "ok"),
    )
