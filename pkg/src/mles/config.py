"""Run configuration: run.toml parsing, defaults, validation, hashing."""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from mles import _toml
from mles.errors import ConfigError
from mles.evalbridge import EvalLimits
from mles.gateway import EndpointConfig, GatewayConfig
from mles.operators import DEFAULT_OPERATORS, REGISTRY
from mles.tasks import TaskSpec, get_task

DEFAULT_QUERY_BUDGET = 2000
DEFAULT_POOL_CAPACITY = 16
DEFAULT_PARENTS = 2
DEFAULT_TEMPERATURE = 1.0


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    pool_capacity: int = DEFAULT_POOL_CAPACITY
    parents_m: int = DEFAULT_PARENTS
    enabled_operators: tuple[str, ...] = DEFAULT_OPERATORS
    offspring_per_operator: int = 4
    query_budget: int = DEFAULT_QUERY_BUDGET
    reset_budget: int = 10_000
    seed: int = 0
    eval_parallelism: int = 1
    ibe_max_images: int | None = None  # None: one per training instance
    checkpoint_every: int = 10
    admit_failures: bool = True
    stub_llm: bool = False
    stub_eval: bool = False
    gateway: GatewayConfig | None = None
    evaluator_cmd: tuple[str, ...] = ()
    limits: EvalLimits = field(default_factory=EvalLimits)
    seed_policies: tuple[str, ...] = ()  # empty: the task's code template

    def __post_init__(self) -> None:
        if self.pool_capacity < 1 or self.parents_m < 1:
            raise ConfigError("pool capacity and parent count must be positive")
        if self.query_budget < 1 or self.reset_budget < 1:
            raise ConfigError("budgets must be positive")
        if not self.enabled_operators:
            raise ConfigError("at least one operator must be enabled")
        for name in self.enabled_operators:
            if name not in REGISTRY:
                raise ConfigError(f"unknown operator {name!r}")
        if self.offspring_per_operator < 1:
            raise ConfigError("offspring_per_operator must be positive")
        if self.eval_parallelism < 1:
            raise ConfigError("eval_parallelism must be positive")

    @property
    def max_ibe_images(self) -> int:
        if self.ibe_max_images is not None:
            return self.ibe_max_images
        return len(self.task.train_instances)

    @property
    def ibe_kinds_needed(self) -> tuple[str, ...]:
        kinds = []
        for name in self.enabled_operators:
            op = REGISTRY[name]
            if op.uses_ibe == "image" and self.task.ibe_image_kind not in kinds:
                kinds.append(self.task.ibe_image_kind)
            if op.uses_ibe == "text" and "text_state_trace" not in kinds:
                kinds.append("text_state_trace")
        return tuple(kinds)

    def effective_seed_policies(self) -> tuple[str, ...]:
        return self.seed_policies or (self.task.code_template,)

    def to_dict(self) -> dict:
        return {
            "task": self.task.task_name,
            "train_instances": list(self.task.train_instances),
            "pool_capacity": self.pool_capacity,
            "parents_m": self.parents_m,
            "enabled_operators": list(self.enabled_operators),
            "offspring_per_operator": self.offspring_per_operator,
            "query_budget": self.query_budget,
            "reset_budget": self.reset_budget,
            "seed": self.seed,
            "eval_parallelism": self.eval_parallelism,
            "ibe_max_images": self.max_ibe_images,
            "checkpoint_every": self.checkpoint_every,
            "admit_failures": self.admit_failures,
            "stub_llm": self.stub_llm,
            "stub_eval": self.stub_eval,
            "evaluator_cmd": list(self.evaluator_cmd),
            "limits": {
                "max_steps_per_episode": self.limits.max_steps_per_episode,
                "wall_clock_seconds": self.limits.wall_clock_seconds,
            },
            "failure_score": self.task.failure_score,
            "seed_policy_count": len(self.effective_seed_policies()),
        }

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def default_stub_config(**overrides) -> RunConfig:
    base = dict(
        task=get_task("stub"),
        stub_llm=True,
        stub_eval=True,
        checkpoint_every=50,
    )
    base.update(overrides)
    return RunConfig(**base)


def stub_evaluator_cmd() -> tuple[str, ...]:
    return (sys.executable, "-m", "mles.stub_evaluator")


def load_run_config(path: Path, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a run.toml file plus CLI overrides."""
    try:
        raw = _toml.load_path(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (_toml.TomlError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    overrides = overrides or {}

    task_tbl = raw.get("task", {})
    pool_tbl = raw.get("pool", {})
    ops_tbl = raw.get("operators", {})
    gateway_tbl = raw.get("gateway", {})
    budget_tbl = raw.get("budgets", {})
    eval_tbl = raw.get("evaluator", {})
    run_tbl = raw.get("run", {})

    task_name = overrides.get("task") or task_tbl.get("name", "stub")
    try:
        task = get_task(str(task_name))
    except KeyError as exc:
        raise ConfigError(str(exc))

    stub_llm = bool(overrides.get("stub_llm", gateway_tbl.get("stub", False)))
    stub_eval = bool(overrides.get("stub_eval", eval_tbl.get("stub", False)))

    gateway = None
    if not stub_llm:
        endpoints = []
        for ep in gateway_tbl.get("endpoints", []):
            try:
                endpoints.append(
                    EndpointConfig(
                        base_url=str(ep["base_url"]),
                        model_name=str(ep["model_name"]),
                        api_key_env_var=str(ep["api_key_env_var"]),
                        supports_images=bool(ep.get("supports_images", True)),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"endpoint entry missing key {exc}")
        if not endpoints:
            raise ConfigError("no gateway endpoints configured and stub mode is off")
        for ep in endpoints:
            if not os.environ.get(ep.api_key_env_var):
                raise ConfigError(
                    f"API key environment variable {ep.api_key_env_var} is not set"
                )
        gateway = GatewayConfig(
            endpoints=tuple(endpoints),
            temperature=float(gateway_tbl.get("temperature", DEFAULT_TEMPERATURE)),
            max_retries=int(gateway_tbl.get("max_retries", 3)),
            request_timeout=float(gateway_tbl.get("request_timeout", 60.0)),
        )

    evaluator_cmd: tuple[str, ...] = ()
    if stub_eval:
        evaluator_cmd = stub_evaluator_cmd()
    else:
        cmd = eval_tbl.get("cmd", [])
        if not cmd:
            raise ConfigError("no evaluator command configured and stub mode is off")
        evaluator_cmd = tuple(str(c) for c in cmd)

    seed_paths = run_tbl.get("seed_policies", [])
    seed_policies = []
    for rel in seed_paths:
        p = Path(rel)
        if not p.is_absolute():
            p = path.parent / p
        if not p.is_file():
            raise ConfigError(f"seed policy file not found: {p}")
        seed_policies.append(p.read_text(encoding="utf-8"))

    try:
        return RunConfig(
            task=task,
            pool_capacity=int(pool_tbl.get("capacity", DEFAULT_POOL_CAPACITY)),
            parents_m=int(pool_tbl.get("parents", DEFAULT_PARENTS)),
            enabled_operators=tuple(
                str(o) for o in ops_tbl.get("enabled", list(DEFAULT_OPERATORS))
            ),
            offspring_per_operator=int(ops_tbl.get("offspring_per_operator", 4)),
            query_budget=int(
                overrides.get("query_budget", budget_tbl.get("queries", DEFAULT_QUERY_BUDGET))
            ),
            reset_budget=int(
                overrides.get("reset_budget", budget_tbl.get("resets", 10_000))
            ),
            seed=int(overrides.get("seed", run_tbl.get("seed", 0))),
            eval_parallelism=int(eval_tbl.get("parallelism", 1)),
            ibe_max_images=(
                int(ops_tbl["ibe_max_images"]) if "ibe_max_images" in ops_tbl else None
            ),
            checkpoint_every=int(run_tbl.get("checkpoint_every", 10)),
            admit_failures=bool(run_tbl.get("admit_failures", True)),
            stub_llm=stub_llm,
            stub_eval=stub_eval,
            gateway=gateway,
            evaluator_cmd=evaluator_cmd,
            limits=EvalLimits(
                max_steps_per_episode=int(eval_tbl.get("episode_max_steps", 1000)),
                wall_clock_seconds=float(eval_tbl.get("wall_clock_seconds", 60.0)),
            ),
            seed_policies=tuple(seed_policies),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}")
