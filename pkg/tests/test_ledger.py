from __future__ import annotations

from pathlib import Path

import pytest

from mles.config import default_stub_config, stub_evaluator_cmd
from mles.errors import SequenceGap
from mles.ledger import LedgerEvent, RunLedger, replay
from mles.model import individual_from_dict
from mles.orchestrator import run_generation, start_run
from mles.pool import PolicyPool


class TestAppend:
    def test_append_semantics(self, tmp_path):
        ledger = RunLedger(tmp_path / "ledger.jsonl")
        ledger.append(LedgerEvent(0, "run_start", {"config": {}}))
        assert len(ledger) == 1

    def test_sequence_gap(self):
        ledger = RunLedger()
        ledger.record("a")
        ledger.record("b")
        ledger.record("c")
        with pytest.raises(SequenceGap):
            ledger.append(LedgerEvent(5, "d", {}))

    def test_file_mirror_and_reload(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        ledger = RunLedger(path)
        ledger.record("one", value=1)
        ledger.record("two", value={"nested": [1, 2]})
        ledger.close()
        events = RunLedger.load_events(path)
        assert events == list(ledger.events)

    def test_loader_rejects_gaps(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        path.write_text(
            LedgerEvent(0, "a", {}).to_json() + "\n" + LedgerEvent(2, "b", {}).to_json() + "\n"
        )
        with pytest.raises(SequenceGap):
            RunLedger.load_events(path)


def _stub_run(tmp_path: Path, generations: int, seed: int = 5):
    config = default_stub_config(
        query_budget=16 * generations + 16,
        reset_budget=100_000,
        seed=seed,
        evaluator_cmd=stub_evaluator_cmd(),
    )
    state = start_run(config, tmp_path / "run")
    for _ in range(generations):
        run_generation(state)
    return state


class TestReplay:
    def test_replay_reconstructs_three_generation_run(self, tmp_path):
        # Replay oracle: the state rebuilt from the event stream must match
        # the live run snapshot field-for-field.
        state = _stub_run(tmp_path, 3)
        try:
            replayed = replay(state.ledger.events)
            assert replayed.queries_used == state.budget.queries_used
            assert replayed.resets_used == state.budget.resets_used
            assert replayed.generation == state.generation
            assert list(replayed.pool_member_ids) == list(state.pool.member_ids)
            # field-for-field: rebuild individuals and re-run admissions
            rebuilt = PolicyPool(capacity=state.config.pool_capacity)
            by_id = {
                i: individual_from_dict(d) for i, d in replayed.individuals.items()
            }
            for ev in state.ledger.events:
                if ev.kind == "pool_admitted":
                    cands = [by_id[c] for c in ev.data["candidate_ids"]]
                    rebuilt, _ = rebuilt.admit_offspring(cands)
                    assert list(rebuilt.member_ids) == ev.data["members_after"]
            assert rebuilt == state.pool
        finally:
            state.close()

    def test_counters_never_exceed_caps_at_any_event(self, tmp_path):
        state = _stub_run(tmp_path, 2)
        try:
            q_cap = state.config.query_budget
            r_cap = state.config.reset_budget
            for ev in state.ledger.events:
                q = ev.data.get("queries_used_after")
                r = ev.data.get("resets_used_after")
                assert q is None or q <= q_cap
                assert r is None or r <= r_cap
        finally:
            state.close()
