"""Command-line front end: run, resume, report, ensemble.

Exit codes: 0 success, 2 configuration error, 3 budget exhausted at start,
4 evaluator unavailable.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from mles import orchestrator, reporting
from mles.config import ConfigError, load_run_config
from mles.errors import AllSeedsFailed, EvaluatorCrashed, EvaluatorTimeout
from mles.evalbridge import EvalLimits, EvalRequest, EvaluatorHandle, evaluate_policy
from mles.gateway import BudgetLedger
from mles.ledger import LEDGER_FILENAME, RunLedger, replay
from mles.model import instance_metrics_to_dict
from mles.evalbridge import compute_nws

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_EVALUATOR = 4

DEFAULT_CONFIG_TEMPLATE = """\
[task]
name = "{task}"

[pool]
capacity = 16
parents = 2

[operators]
enabled = ["E1", "E2", "M1_M", "M2_M"]
offspring_per_operator = 4

[gateway]
stub = {stub_llm}
temperature = 1.0

[budgets]
queries = {queries}
resets = {resets}

[evaluator]
stub = {stub_eval}
parallelism = 1
episode_max_steps = 1000
wall_clock_seconds = 60.0

[run]
seed = {seed}
checkpoint_every = 10
"""


def _collect_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "stub_llm", False):
        overrides["stub_llm"] = True
    if getattr(args, "stub_eval", False):
        overrides["stub_eval"] = True
    for key in ("seed", "query_budget", "reset_budget", "task"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _ensure_config(run_dir: Path, args) -> Path:
    config_path = run_dir / "run.toml"
    if args.config:
        src = Path(args.config)
        if not src.is_file():
            raise ConfigError(f"config file not found: {src}")
        run_dir.mkdir(parents=True, exist_ok=True)
        if config_path.resolve() != src.resolve():
            shutil.copyfile(src, config_path)
    elif not config_path.is_file():
        if not (args.stub_llm and args.stub_eval):
            raise ConfigError(
                f"{config_path} does not exist; provide --config or use --stub-llm --stub-eval"
            )
        run_dir.mkdir(parents=True, exist_ok=True)
        config_path.write_text(
            DEFAULT_CONFIG_TEMPLATE.format(
                task=args.task or "stub",
                stub_llm="true",
                stub_eval="true",
                queries=args.query_budget or 64,
                resets=args.reset_budget or 10_000,
                seed=args.seed or 0,
            ),
            encoding="utf-8",
        )
    return config_path


def cmd_run(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        config_path = _ensure_config(run_dir, args)
        config = load_run_config(config_path, _collect_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.query_budget <= 0 or config.reset_budget <= 0:
        print("budget exhausted at start", file=sys.stderr)
        return EXIT_BUDGET
    try:
        state = orchestrator.start_run(config, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluatorCrashed, EvaluatorTimeout, FileNotFoundError) as exc:
        print(f"evaluator unavailable: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except AllSeedsFailed as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    orchestrator.run_search(state)
    events = RunLedger.load_events(run_dir / LEDGER_FILENAME)
    reporting.write_reports(run_dir, events)
    summary = reporting.run_summary(events)
    best = summary["best"]
    print(
        f"run complete: {summary['generations']} generations, "
        f"{summary['queries_used']} queries, {summary['resets_used']} resets, "
        f"best score {best['score'] if best else 'n/a'}"
    )
    return EXIT_OK


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        config = load_run_config(run_dir / "run.toml", _collect_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        state = orchestrator.resume(
            config, run_dir, Path(args.checkpoint) if args.checkpoint else None
        )
    except (EvaluatorCrashed, EvaluatorTimeout, FileNotFoundError) as exc:
        print(f"evaluator unavailable: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if state.budgets_exhausted:
        state.close()
        print("budget exhausted at start", file=sys.stderr)
        return EXIT_BUDGET
    orchestrator.run_search(state)
    events = RunLedger.load_events(run_dir / LEDGER_FILENAME)
    reporting.write_reports(run_dir, events)
    print(f"resumed run complete at generation {state.generation}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    ledger_path = run_dir / LEDGER_FILENAME
    if not ledger_path.is_file():
        print(f"config error: no ledger at {ledger_path}", file=sys.stderr)
        return EXIT_CONFIG
    events = RunLedger.load_events(ledger_path)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = reporting.write_reports(out_dir, events)
    for path in written:
        print(path)
    return EXIT_OK


def _per_seed_score(task: str, metrics) -> float:
    if task == "car_racing":
        return metrics.completion
    return compute_nws(metrics.reward, metrics.fuel, 1.0 if metrics.success else 0.0)


def cmd_ensemble(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        config = load_run_config(run_dir / "run.toml", _collect_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ledger_path = run_dir / LEDGER_FILENAME
    if not ledger_path.is_file():
        print(f"config error: no ledger at {ledger_path}", file=sys.stderr)
        return EXIT_CONFIG
    state = replay(RunLedger.load_events(ledger_path))
    codes = [m["code"] for m in state.pool_members]
    if not codes:
        print("config error: final pool is empty", file=sys.stderr)
        return EXIT_CONFIG
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    try:
        handle = EvaluatorHandle(list(config.evaluator_cmd))
    except (EvaluatorCrashed, EvaluatorTimeout, FileNotFoundError) as exc:
        print(f"evaluator unavailable: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    try:
        if "ensemble_evaluate" not in handle.capabilities:
            print("evaluator unavailable: no ensemble support", file=sys.stderr)
            return EXIT_EVALUATOR
        budget = BudgetLedger(query_budget=1, reset_budget=len(seeds))
        req = EvalRequest(
            request_id="ensemble",
            kind="ensemble_evaluate",
            task=config.task.task_name,
            instance_ids=tuple(str(s) for s in seeds),
            seeds=tuple(seeds),
            codes=tuple(codes),
            limits=config.limits,
        )
        response = evaluate_policy(handle, req, budget)
    finally:
        handle.shutdown()
    if not response.ok:
        print(f"ensemble evaluation failed: {response.error_detail}", file=sys.stderr)
        return EXIT_EVALUATOR
    per_seed = [
        {
            "instance": m.instance_id,
            "score": _per_seed_score(config.task.task_name, m),
            "metrics": instance_metrics_to_dict(m),
        }
        for m in response.report.per_instance
    ]
    mean_score = sum(p["score"] for p in per_seed) / len(per_seed)
    document = {
        "task": config.task.task_name,
        "policies": len(codes),
        "seeds": seeds,
        "per_seed": per_seed,
        "mean_score": mean_score,
        "aggregate_score": response.report.aggregate_score,
    }
    out = Path(args.out) if args.out else run_dir / "ensemble.json"
    out.write_text(json.dumps(document, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mles", description="Evolve programmatic control policies with multimodal LLMs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("run_dir", help="run directory")
        p.add_argument("--stub-llm", action="store_true", help="use the deterministic LLM stub")
        p.add_argument("--stub-eval", action="store_true", help="use the stub evaluator")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--query-budget", type=int, default=None, dest="query_budget")
        p.add_argument("--reset-budget", type=int, default=None, dest="reset_budget")
        p.add_argument("--task", default=None)

    p_run = sub.add_parser("run", help="start a search run")
    add_common(p_run)
    p_run.add_argument("--config", default=None, help="run.toml to copy into the run dir")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="resume from a checkpoint")
    add_common(p_resume)
    p_resume.add_argument("--checkpoint", default=None)
    p_resume.set_defaults(func=cmd_resume)

    p_report = sub.add_parser("report", help="regenerate reports from the ledger")
    p_report.add_argument("run_dir")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=cmd_report)

    p_ens = sub.add_parser("ensemble", help="population-ensemble evaluation")
    add_common(p_ens)
    p_ens.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    p_ens.add_argument("--out", default=None)
    p_ens.set_defaults(func=cmd_ensemble)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
