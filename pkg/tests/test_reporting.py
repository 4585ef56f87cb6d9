from __future__ import annotations

import json
import sys
import textwrap
from pathlib import Path

import pytest

from mles import cli
from mles.config import default_stub_config, stub_evaluator_cmd
from mles.ledger import RunLedger, replay
from mles.orchestrator import run_search, start_run
from mles.reporting import (
    convergence_csv,
    convergence_series,
    lineage_export,
    run_summary,
    write_reports,
)

BASE_CODE = "def choose_action(s, last_action, s_pre):\n    return 0\n"


@pytest.fixture(scope="module")
def stub_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("runs") / "r"
    config = default_stub_config(
        query_budget=64, reset_budget=100_000, seed=17, evaluator_cmd=stub_evaluator_cmd()
    )
    run_search(start_run(config, run_dir))
    events = RunLedger.load_events(run_dir / "ledger.jsonl")
    write_reports(run_dir, events)
    return run_dir, events


class TestConvergence:
    def test_four_rows_monotone(self, stub_run):
        run_dir, events = stub_run
        series = convergence_series(events)
        assert len(series) == 4  # 64 queries / 16 per generation
        resets = [p.cumulative_resets for p in series]
        scores = [p.best_score for p in series]
        assert resets == sorted(resets) and len(set(resets)) == len(resets)
        assert scores == sorted(scores)

    def test_csv_regeneration_byte_identical(self, stub_run):
        run_dir, events = stub_run
        on_disk = (run_dir / "convergence.csv").read_bytes()
        regenerated = convergence_csv(RunLedger.load_events(run_dir / "ledger.jsonl"))
        assert on_disk == regenerated.encode()

    def test_csv_shape(self, stub_run):
        run_dir, _ = stub_run
        lines = (run_dir / "convergence.csv").read_text().splitlines()
        assert lines[0] == "cumulative_resets,best_score,generation"
        assert len(lines) == 5


class TestLineage:
    def test_graph_is_dag_rooted_at_generation_zero(self, stub_run):
        _, events = stub_run
        exp = lineage_export(events)
        nodes = {n["id"]: n for n in exp.nodes}
        children = {}
        for e in exp.edges:
            children.setdefault(e["from"], []).append(e["to"])
            assert nodes[e["to"]]["generation"] > nodes[e["from"]]["generation"]
        # best policy's ancestry reaches a generation-0 node
        state = replay(events)
        best = state.pool_members[0]
        seen = set()
        frontier = [best["id"]]
        while frontier:
            cur = frontier.pop()
            if cur in seen:
                continue
            seen.add(cur)
            frontier.extend(state.individuals[cur]["origin"]["parent_ids"])
        assert any(state.individuals[i]["origin"]["generation"] == 0 for i in seen)

    def test_node_count_equals_admitted(self, stub_run):
        _, events = stub_run
        exp = lineage_export(events)
        admitted = set()
        for ev in events:
            if ev.kind == "pool_admitted":
                admitted.update(ev.data["admitted_ids"])
        assert {n["id"] for n in exp.nodes} == admitted

    def test_non_initial_nodes_have_in_edges(self, stub_run):
        _, events = stub_run
        exp = lineage_export(events)
        targets = {e["to"] for e in exp.edges}
        for n in exp.nodes:
            if n["generation"] > 0:
                assert n["id"] in targets

    def test_thought_excerpt_truncated(self, stub_run):
        _, events = stub_run
        for n in lineage_export(events).nodes:
            assert len(n["thought"]) <= 120

    def test_dot_output_parses_as_graph(self, stub_run):
        run_dir, _ = stub_run
        dot = (run_dir / "lineage.dot").read_text()
        assert dot.startswith("digraph lineage {") and dot.rstrip().endswith("}")


class TestSummary:
    def test_summary_contents(self, stub_run):
        run_dir, events = stub_run
        summary = run_summary(events)
        assert summary["queries_used"] == 64
        assert summary["best"]["code"]
        assert summary["pool_size"] >= 1
        on_disk = json.loads((run_dir / "summary.json").read_text())
        assert on_disk == json.loads(json.dumps(summary))


class TestCli:
    def test_run_and_report_roundtrip(self, tmp_path):
        run_dir = tmp_path / "cli-run"
        assert cli.main([
            "run", str(run_dir), "--stub-llm", "--stub-eval",
            "--query-budget", "32", "--seed", "5",
        ]) == 0
        assert (run_dir / "run.toml").is_file()
        assert (run_dir / "ledger.jsonl").is_file()
        assert (run_dir / "convergence.csv").is_file()
        before = (run_dir / "convergence.csv").read_bytes()
        assert cli.main(["report", str(run_dir)]) == 0
        assert (run_dir / "convergence.csv").read_bytes() == before

    def test_missing_api_key_names_variable(self, tmp_path, capsys):
        run_dir = tmp_path / "live"
        run_dir.mkdir()
        (run_dir / "run.toml").write_text(
            textwrap.dedent(
                """\
                [task]
                name = "stub"
                [gateway]
                stub = false
                [[gateway.endpoints]]
                base_url = "https://api.example.invalid/v1"
                model_name = "some-model"
                api_key_env_var = "MLES_TEST_MISSING_KEY"
                [evaluator]
                stub = true
                """
            )
        )
        code = cli.main(["run", str(run_dir)])
        err = capsys.readouterr().err
        assert code == 2
        assert "MLES_TEST_MISSING_KEY" in err

    def test_report_without_ledger_is_config_error(self, tmp_path):
        assert cli.main(["report", str(tmp_path / "nowhere")]) == 2

    def test_resume_cli(self, tmp_path):
        run_dir = tmp_path / "resumable"
        assert cli.main([
            "run", str(run_dir), "--stub-llm", "--stub-eval",
            "--query-budget", "32", "--seed", "6",
        ]) == 0
        # budget is exhausted, so resume exits 3
        assert cli.main(["resume", str(run_dir), "--stub-llm", "--stub-eval"]) == 3


class TestEnsembleCli:
    def _run(self, tmp_path) -> Path:
        run_dir = tmp_path / "ens-run"
        assert cli.main([
            "run", str(run_dir), "--stub-llm", "--stub-eval",
            "--query-budget", "32", "--seed", "8",
        ]) == 0
        return run_dir

    def test_ensemble_writes_per_seed_and_mean(self, tmp_path):
        run_dir = self._run(tmp_path)
        assert cli.main([
            "ensemble", str(run_dir), "--stub-llm", "--stub-eval", "--seeds", "0,1,2,3",
        ]) == 0
        doc = json.loads((run_dir / "ensemble.json").read_text())
        assert len(doc["per_seed"]) == 4
        mean = sum(p["score"] for p in doc["per_seed"]) / 4
        assert doc["mean_score"] == pytest.approx(mean, abs=1e-12)
        assert doc["policies"] >= 1

    def test_pool_of_one_ensemble_equals_single_policy(self, tmp_path):
        # degenerate ensemble: scores equal the single policy's evaluation
        run_dir = tmp_path / "one"
        config = default_stub_config(
            query_budget=4,
            reset_budget=100,
            seed=2,
            evaluator_cmd=stub_evaluator_cmd(),
            seed_policies=(BASE_CODE,),
        )
        state = start_run(config, run_dir)  # generation 0 only: pool of one
        state.close()
        assert len(state.pool) == 1
        (run_dir / "run.toml").write_text(
            "[task]\nname = \"stub\"\n[gateway]\nstub = true\n[evaluator]\nstub = true\n"
        )
        assert cli.main([
            "ensemble", str(run_dir), "--stub-llm", "--stub-eval", "--seeds", "0,1",
        ]) == 0
        doc = json.loads((run_dir / "ensemble.json").read_text())

        from mles.evalbridge import EvalLimits, EvalRequest, EvaluatorHandle, evaluate_policy
        from mles.gateway import BudgetLedger

        handle = EvaluatorHandle(list(stub_evaluator_cmd()))
        try:
            single = evaluate_policy(
                handle,
                EvalRequest(
                    request_id="single",
                    kind="evaluate",
                    task="stub",
                    instance_ids=("0", "1"),
                    seeds=(0, 1),
                    code=BASE_CODE,
                    limits=EvalLimits(),
                ),
                BudgetLedger(query_budget=0, reset_budget=10),
            )
        finally:
            handle.shutdown()
        assert doc["aggregate_score"] == pytest.approx(
            single.report.aggregate_score, abs=1e-12
        )
        singles = {m.instance_id: m.reward for m in single.report.per_instance}
        for entry in doc["per_seed"]:
            assert entry["metrics"]["reward"] == pytest.approx(
                singles[entry["instance"]], abs=1e-12
            )

    def test_capability_negotiation_exit_4(self, tmp_path, monkeypatch):
        run_dir = self._run(tmp_path)
        script = tmp_path / "no_ensemble_eval.py"
        script.write_text(
            textwrap.dedent(
                """\
                import json, sys
                print(json.dumps({
                    "type": "hello", "schema": "mles-eval/1", "tasks": ["stub"],
                    "ibe_kinds": [], "capabilities": ["evaluate"], "versions": {}
                }), flush=True)
                for line in sys.stdin:
                    break
                """
            )
        )
        (run_dir / "run.toml").write_text(
            "[task]\nname = \"stub\"\n[gateway]\nstub = true\n"
            f"[evaluator]\nstub = false\ncmd = [\"{sys.executable}\", \"{script}\"]\n"
        )
        assert cli.main(["ensemble", str(run_dir), "--stub-llm"]) == 4
