"""Append-only run ledger and its replay.

The ledger is the single source of truth for a run: every LLM call, parse
or evaluation failure, admission batch, and checkpoint is an event. Replaying
the event stream reconstructs the pool and budget counters exactly, which is
what the reporting layer and the resume tests build on.

Serialization is canonical (sorted keys, compact separators, no timestamps),
so two identical runs produce byte-identical ``ledger.jsonl`` files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from mles.errors import SequenceGap

LEDGER_FILENAME = "ledger.jsonl"


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    kind: str
    data: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "data": self.data},
            sort_keys=True,
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(line: str) -> "LedgerEvent":
        obj = json.loads(line)
        return LedgerEvent(seq=int(obj["seq"]), kind=str(obj["kind"]), data=obj["data"])


class RunLedger:
    """Single-writer append-only event log, optionally mirrored to a file."""

    def __init__(self, path: Path | None = None):
        self._events: list[LedgerEvent] = []
        self._path = path
        self._sink = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._sink = open(path, "a", encoding="utf-8")

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[LedgerEvent]:
        return iter(self._events)

    @property
    def events(self) -> tuple[LedgerEvent, ...]:
        return tuple(self._events)

    def append(self, event: LedgerEvent) -> "RunLedger":
        """Append one event; its sequence number must equal the ledger length."""
        if event.seq != len(self._events):
            raise SequenceGap(
                f"event seq {event.seq} does not continue ledger of length {len(self._events)}"
            )
        self._events.append(event)
        if self._sink is not None:
            self._sink.write(event.to_json() + "\n")
            self._sink.flush()
        return self

    def record(self, kind: str, **data: Any) -> LedgerEvent:
        """Build the next event in sequence and append it."""
        event = LedgerEvent(seq=len(self._events), kind=kind, data=data)
        self.append(event)
        return event

    def close(self) -> None:
        if self._sink is not None:
            self._sink.close()
            self._sink = None

    @classmethod
    def open_existing(cls, path: Path, events: list[LedgerEvent]) -> "RunLedger":
        """Continue an existing ledger file whose events are already loaded."""
        ledger = cls(path)
        ledger._events = list(events)
        return ledger

    @staticmethod
    def load_events(path: Path) -> list[LedgerEvent]:
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(LedgerEvent.from_json(line))
        for i, ev in enumerate(events):
            if ev.seq != i:
                raise SequenceGap(f"ledger file {path} has seq {ev.seq} at position {i}")
        return events


@dataclass
class ReplayState:
    """State reconstructed by replaying a ledger."""

    config: dict[str, Any] = field(default_factory=dict)
    individuals: dict[str, dict] = field(default_factory=dict)
    pool_member_ids: list[str] = field(default_factory=list)
    queries_used: int = 0
    resets_used: int = 0
    generation: int = 0
    best_score: float | None = None
    summaries: list[dict] = field(default_factory=list)
    halted: str | None = None

    @property
    def pool_members(self) -> list[dict]:
        return [self.individuals[i] for i in self.pool_member_ids]


def replay(events: Iterable[LedgerEvent], on_event: Callable[[LedgerEvent], None] | None = None) -> ReplayState:
    """Reconstruct pool membership and budget counters from an event stream.

    The admission events record the pool member ids after each batch, so the
    replayed pool is exactly the live pool (the live admission path asserts
    the same ordering invariants before recording).
    """
    state = ReplayState()
    for ev in events:
        if on_event is not None:
            on_event(ev)
        d = ev.data
        if ev.kind == "run_start":
            state.config = d["config"]
        elif ev.kind == "candidate_evaluated":
            ind = d["individual"]
            state.individuals[ind["id"]] = ind
            state.resets_used = d["resets_used_after"]
        elif ev.kind in ("llm_generate", "llm_describe"):
            state.queries_used = d["queries_used_after"]
        elif ev.kind == "pool_admitted":
            state.pool_member_ids = list(d["members_after"])
            state.generation = d["generation"]
            if state.pool_member_ids:
                state.best_score = state.individuals[state.pool_member_ids[0]]["metrics"][
                    "aggregate_score"
                ]
        elif ev.kind == "generation_summary":
            state.summaries.append(d)
            state.generation = d["generation"]
        elif ev.kind == "budget_halt":
            state.halted = d["which"]
    return state
