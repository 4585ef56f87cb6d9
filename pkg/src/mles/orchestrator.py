"""The generational evolutionary loop.

Each generation runs two phases over a pool snapshot taken at generation
start: a prompt/LLM/parse phase that turns operator invocations into
candidate programs, and an evaluation phase that scores them; all surviving
offspring are then admitted in one batch (synchronous generations). Every
step is a ledger event, budget reservations gate both phases, and the run
halts cleanly mid-generation when a reservation fails, admitting whatever
completed.

Determinism: one root seed; the RNG stream for each (generation, operator,
invocation) triple is derived independently, so execution order cannot
perturb sampling and two stub-backed runs produce byte-identical ledgers.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from mles.artifacts import ArtifactStore
from mles.config import RunConfig
from mles.errors import (
    AllSeedsFailed,
    BudgetExhausted,
    ConfigError,
    CorruptCheckpoint,
    EndpointFailure,
    MissingIBE,
    MlesError,
    SchemaMismatch,
)
from mles.evalbridge import (
    EvalRequest,
    EvaluatorHandle,
    evaluate_policy,
    request_timeout,
    verify_response,
)
from mles.gateway import BudgetLedger, GatewayConfig, HttpBackend, LlmGateway, bundle_hash
from mles.ledger import LEDGER_FILENAME, LedgerEvent, RunLedger
from mles.model import (
    INIT_OPERATOR,
    IBEArtifactRef,
    LineageRecord,
    PolicyIndividual,
    QuantitativeMetrics,
    individual_to_dict,
    validate_entry_point,
)
from mles.operators import (
    IBE_NONE,
    IBE_TEXT,
    Operator,
    get_operator,
    parse_response,
    render_prompt,
    stage_one_describe,
)
from mles.pool import PolicyPool, pool_from_dict, pool_to_dict

CHECKPOINT_SCHEMA = "mles-checkpoint/1"
RUN_SCHEMA = "mles-run/1"


@dataclass
class GenerationSummary:
    generation: int
    per_operator: dict[str, dict[str, int]]
    best_score_so_far: float
    queries_used: int
    resets_used: int

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "per_operator": self.per_operator,
            "best_score_so_far": self.best_score_so_far,
            "queries_used": self.queries_used,
            "resets_used": self.resets_used,
        }

    @property
    def requested(self) -> int:
        return sum(c["requested"] for c in self.per_operator.values())


def _counts() -> dict[str, int]:
    return {
        "requested": 0,
        "parsed": 0,
        "evaluated": 0,
        "admitted": 0,
        "parse_failures": 0,
        "eval_failures": 0,
    }


@dataclass
class RunState:
    config: RunConfig
    run_dir: Path
    store: ArtifactStore
    ledger: RunLedger
    budget: BudgetLedger
    pool: PolicyPool
    gateway: LlmGateway
    handles: list[EvaluatorHandle]
    generation: int = 0
    halted: str | None = None
    summaries: list[GenerationSummary] = field(default_factory=list)

    def derive_rng(self, generation: int, operator: str, invocation: int) -> random.Random:
        return random.Random(f"{self.config.seed}:{generation}:{operator}:{invocation}")

    @property
    def budgets_exhausted(self) -> bool:
        return self.budget.queries_remaining <= 0 or self.budget.resets_remaining <= 0

    def close(self) -> None:
        for handle in self.handles:
            handle.shutdown()
        self.handles.clear()
        self.ledger.close()


@dataclass(frozen=True)
class _PendingCandidate:
    invocation: int
    operator: Operator
    candidate_id: str
    code: str
    thought: str
    parent_ids: tuple[str, ...]
    response_hash: str


def build_gateway(config: RunConfig, store: ArtifactStore, seed_table: dict | None = None) -> LlmGateway:
    if config.stub_llm:
        return LlmGateway.stub(
            seed_table,
            temperature=config.gateway.temperature if config.gateway else 1.0,
        )
    assert config.gateway is not None
    backends = []
    for ep in config.gateway.endpoints:
        try:
            backends.append(HttpBackend(ep, store.load))
        except KeyError as exc:
            raise ConfigError(f"API key environment variable {exc.args[0]} is not set")
    return LlmGateway(backends, config.gateway)


def start_run(
    config: RunConfig,
    run_dir: Path,
    *,
    seed_table: dict | None = None,
) -> RunState:
    """Create the run directory, spawn backends, and seed the population."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = run_dir / LEDGER_FILENAME
    if ledger_path.exists() and ledger_path.stat().st_size > 0:
        raise ConfigError(f"{ledger_path} already exists; use resume")
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    store = ArtifactStore(run_dir)
    ledger = RunLedger(ledger_path)
    budget = BudgetLedger(query_budget=config.query_budget, reset_budget=config.reset_budget)
    gateway = build_gateway(config, store, seed_table)
    handles = [
        EvaluatorHandle(list(config.evaluator_cmd))
        for _ in range(config.eval_parallelism)
    ]
    state = RunState(
        config=config,
        run_dir=run_dir,
        store=store,
        ledger=ledger,
        budget=budget,
        pool=PolicyPool(capacity=config.pool_capacity),
        gateway=gateway,
        handles=handles,
    )
    ledger.record(
        "run_start",
        schema=RUN_SCHEMA,
        config=config.to_dict(),
        config_hash=config.content_hash(),
    )
    initialize_population(state)
    return state


def _floor_metrics(config: RunConfig, resets: int) -> QuantitativeMetrics:
    return QuantitativeMetrics(
        aggregate_score=config.task.failure_score, per_instance=(), resets_used=resets
    )


def _store_ibe(state: RunState, payloads) -> tuple[IBEArtifactRef, ...]:
    refs = []
    for p in payloads:
        data = base64.b64decode(p.content_b64)
        ext = "txt" if p.media_type == "text/plain" else "png"
        ref = state.store.put(data, ext)
        refs.append(
            IBEArtifactRef(
                kind=p.kind, instance_id=p.instance_id, content_ref=ref, media_type=p.media_type
            )
        )
    return tuple(refs)


def _eval_request(state: RunState, request_id: str, code: str) -> EvalRequest:
    task = state.config.task
    return EvalRequest(
        request_id=request_id,
        kind="evaluate",
        task=task.task_name,
        instance_ids=task.train_instances,
        seeds=tuple(int(i) if i.isdigit() else idx for idx, i in enumerate(task.train_instances)),
        code=code,
        ibe_kinds=state.config.ibe_kinds_needed,
        limits=state.config.limits,
    )


def _evaluate_code(
    state: RunState, handle: EvaluatorHandle, candidate_id: str, code: str
):
    """Returns (metrics, ibe_refs, eval_status) applying the failure-score rule."""
    req = _eval_request(state, candidate_id, code)
    response = evaluate_policy(handle, req, state.budget)
    if response.ok:
        return response.report, _store_ibe(state, response.ibe_payloads), "ok"
    status = response.status if response.status in ("policy_error", "timeout") else "policy_error"
    return _floor_metrics(state.config, len(req.instance_ids)), (), status


def initialize_population(state: RunState) -> None:
    """Evaluate the seed policies and admit them as generation zero."""
    seeds = state.config.effective_seed_policies()
    individuals: list[PolicyIndividual] = []
    any_ok = False
    any_evaluated = False
    for i, code in enumerate(seeds):
        candidate_id = f"g0.{i:02d}"
        try:
            metrics, ibe_refs, status = _evaluate_code(state, state.handles[0], candidate_id, code)
        except BudgetExhausted:
            state.halted = "resets"
            state.ledger.record("budget_halt", generation=0, which="resets")
            break
        any_evaluated = True
        individual = PolicyIndividual(
            id=candidate_id,
            code=code,
            thought="Seed policy provided at initialization.",
            metrics=metrics,
            ibe=ibe_refs,
            origin=LineageRecord(parent_ids=(), operator=INIT_OPERATOR, generation=0),
            eval_status=status,
        )
        any_ok = any_ok or status == "ok"
        keep = status == "ok" or state.config.admit_failures
        state.ledger.record(
            "candidate_evaluated",
            generation=0,
            operator=INIT_OPERATOR,
            invocation=i,
            individual=individual_to_dict(individual),
            eval_status=status,
            admitted_candidate=keep,
            resets_used_after=state.budget.resets_used,
        )
        if keep:
            individuals.append(individual)
    if any_evaluated and not any_ok:
        raise AllSeedsFailed("every seed policy failed evaluation")
    state.pool, outcome = state.pool.admit_offspring(individuals)
    state.ledger.record(
        "pool_admitted",
        generation=0,
        candidate_ids=[ind.id for ind in individuals],
        admitted_ids=list(outcome.admitted_ids),
        evicted_ids=list(outcome.evicted_ids),
        duplicates=list(outcome.duplicates),
        members_after=list(state.pool.member_ids),
    )


def _select_ibe(state: RunState, op: Operator, parent: PolicyIndividual) -> list[IBEArtifactRef]:
    if op.uses_ibe == IBE_NONE:
        return []
    if op.uses_ibe == IBE_TEXT:
        wanted = [r for r in parent.ibe if r.kind == "text_state_trace"]
    else:
        wanted = [r for r in parent.ibe if r.kind == state.config.task.ibe_image_kind]
    wanted.sort(key=lambda r: r.instance_id)
    return wanted[: state.config.max_ibe_images]


def run_generation(state: RunState) -> GenerationSummary:
    """Run one synchronous generation; returns its summary."""
    generation = state.generation + 1
    snapshot = state.pool
    config = state.config
    per_op = {name: _counts() for name in config.enabled_operators}
    pending: list[_PendingCandidate] = []

    # Phase 1: selection, prompt, LLM, parse.
    halted = False
    invocation = -1
    for op_name in config.enabled_operators:
        if halted:
            break
        op = get_operator(op_name)
        counts = per_op[op_name]
        for j in range(config.offspring_per_operator):
            invocation += 1
            rng = state.derive_rng(generation, op_name, j)
            parents = snapshot.select_parents(op.effective_arity(config.parents_m), rng)
            parent_ids = tuple(p.id for p in parents)
            ibe_sel = _select_ibe(state, op, parents[0])
            try:
                if op.uses_ibe != IBE_NONE and not ibe_sel:
                    raise MissingIBE(
                        f"parent {parents[0].id} carries no {op.uses_ibe} evidence"
                    )
                descriptions = None
                if op.two_stage:
                    descriptions = stage_one_describe(
                        state.gateway, op, config.task, ibe_sel, state.budget
                    )
                    state.ledger.record(
                        "llm_describe",
                        generation=generation,
                        operator=op_name,
                        invocation=invocation,
                        k=len(descriptions),
                        queries_used_after=state.budget.queries_used,
                    )
                bundle = render_prompt(
                    op,
                    config.task,
                    parents,
                    ibe_sel,
                    m=config.parents_m,
                    store=state.store,
                    ibe_descriptions=descriptions,
                )
            except BudgetExhausted:
                state.ledger.record("budget_halt", generation=generation, which="queries")
                halted = True
                break
            except MlesError as exc:
                state.ledger.record(
                    "render_failure",
                    generation=generation,
                    operator=op_name,
                    invocation=invocation,
                    error=f"{type(exc).__name__}: {exc}",
                )
                continue

            try:
                results = state.gateway.generate(bundle, 1, state.budget)
            except BudgetExhausted:
                state.ledger.record("budget_halt", generation=generation, which="queries")
                halted = True
                break
            counts["requested"] += 1
            result = results[0]
            if isinstance(result, EndpointFailure):
                state.ledger.record(
                    "generate_failure",
                    generation=generation,
                    operator=op_name,
                    invocation=invocation,
                    prompt_hash=bundle_hash(bundle),
                    error=str(result),
                    queries_used_after=state.budget.queries_used,
                )
                continue
            raw = result
            response_ref = state.store.put_text(raw)
            response_hash = hashlib.sha256(raw.encode()).hexdigest()
            state.ledger.record(
                "llm_generate",
                generation=generation,
                operator=op_name,
                invocation=invocation,
                parent_ids=list(parent_ids),
                prompt_hash=bundle_hash(bundle),
                k=1,
                response_hashes=[response_hash],
                response_refs=[response_ref],
                queries_used_after=state.budget.queries_used,
            )
            try:
                parsed = parse_response(op, raw, entry_point=config.task.entry_point)
                validate_entry_point(parsed.code, config.task.entry_point)
            except (MlesError, ValueError) as exc:
                counts["parse_failures"] += 1
                state.ledger.record(
                    "parse_failure",
                    generation=generation,
                    operator=op_name,
                    invocation=invocation,
                    response_hash=response_hash,
                    error=f"{type(exc).__name__}: {exc}",
                )
                continue
            counts["parsed"] += 1
            pending.append(
                _PendingCandidate(
                    invocation=invocation,
                    operator=op,
                    candidate_id=f"g{generation}.{invocation:02d}",
                    code=parsed.code,
                    thought=parsed.thought,
                    parent_ids=parent_ids,
                    response_hash=response_hash,
                )
            )

    # Phase 2: reserve resets in invocation order, then evaluate.
    n_instances = len(config.task.train_instances)
    reserved: list[_PendingCandidate] = []
    resets_after: dict[str, int] = {}
    for cand in pending:
        try:
            state.budget.reserve_resets(n_instances)
        except BudgetExhausted:
            state.ledger.record("budget_halt", generation=generation, which="resets")
            halted = True
            break
        reserved.append(cand)
        resets_after[cand.candidate_id] = state.budget.resets_used

    def _run_eval(idx_cand):
        idx, cand = idx_cand
        handle = state.handles[idx % len(state.handles)]
        req = _eval_request(state, cand.candidate_id, cand.code)
        response = handle.roundtrip(req, request_timeout(req))
        return cand, verify_response(req, response)

    if len(state.handles) > 1 and len(reserved) > 1:
        with ThreadPoolExecutor(max_workers=len(state.handles)) as pool_exec:
            outcomes = list(pool_exec.map(_run_eval, enumerate(reserved)))
    else:
        outcomes = [_run_eval(pair) for pair in enumerate(reserved)]

    individuals: list[PolicyIndividual] = []
    for cand, response in outcomes:
        counts = per_op[cand.operator.name]
        if response.ok:
            expected = response.report
            metrics, ibe_refs, status = expected, _store_ibe(state, response.ibe_payloads), "ok"
        else:
            counts["eval_failures"] += 1
            metrics, ibe_refs, status = (
                _floor_metrics(config, n_instances),
                (),
                response.status if response.status in ("policy_error", "timeout") else "policy_error",
            )
        counts["evaluated"] += 1
        keep = status == "ok" or config.admit_failures
        individual = PolicyIndividual(
            id=cand.candidate_id,
            code=cand.code,
            thought=cand.thought,
            metrics=metrics,
            ibe=ibe_refs,
            origin=LineageRecord(
                parent_ids=cand.parent_ids,
                operator=cand.operator.name,
                generation=generation,
                llm_response_hash=cand.response_hash,
            ),
            eval_status=status,
        )
        state.ledger.record(
            "candidate_evaluated",
            generation=generation,
            operator=cand.operator.name,
            invocation=cand.invocation,
            individual=individual_to_dict(individual),
            eval_status=status,
            admitted_candidate=keep,
            resets_used_after=resets_after[cand.candidate_id],
        )
        if keep:
            individuals.append(individual)

    state.pool, outcome = state.pool.admit_offspring(individuals)
    for ind in individuals:
        if ind.id in outcome.admitted_ids:
            per_op[ind.origin.operator]["admitted"] += 1
    state.ledger.record(
        "pool_admitted",
        generation=generation,
        candidate_ids=[ind.id for ind in individuals],
        admitted_ids=list(outcome.admitted_ids),
        evicted_ids=list(outcome.evicted_ids),
        duplicates=list(outcome.duplicates),
        members_after=list(state.pool.member_ids),
    )
    summary = GenerationSummary(
        generation=generation,
        per_operator=per_op,
        best_score_so_far=state.pool.best_score,
        queries_used=state.budget.queries_used,
        resets_used=state.budget.resets_used,
    )
    state.ledger.record("generation_summary", **summary.to_dict())
    state.generation = generation
    state.summaries.append(summary)
    if halted and state.halted is None:
        state.halted = "budget"
    return summary


# checkpointing ------------------------------------------------------------------

def _checkpoint_payload(state: RunState) -> dict:
    return {
        "schema": CHECKPOINT_SCHEMA,
        "config_hash": state.config.content_hash(),
        "generation": state.generation,
        "pool": pool_to_dict(state.pool),
        "budget": {
            "queries_used": state.budget.queries_used,
            "resets_used": state.budget.resets_used,
            "query_budget": state.budget.query_budget,
            "reset_budget": state.budget.reset_budget,
        },
        "rng": {"root_seed": state.config.seed, "scheme": "derived-per-invocation"},
        # includes the checkpoint's own ledger event, appended right after
        # the file is written, so resume keeps the full prefix
        "ledger_length": len(state.ledger) + 1,
        "halted": state.halted,
    }


def write_checkpoint(state: RunState) -> Path:
    payload = _checkpoint_payload(state)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    content_hash = hashlib.sha256(canonical.encode()).hexdigest()
    document = dict(payload, content_hash=content_hash)
    path = state.run_dir / "checkpoints" / f"gen-{state.generation}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(document, sort_keys=True, indent=1), encoding="utf-8")
    tmp.replace(path)
    state.ledger.record(
        "checkpoint",
        generation=state.generation,
        path=str(path.relative_to(state.run_dir)),
        content_hash=content_hash,
    )
    return path


def read_checkpoint(path: Path) -> dict:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("schema") != CHECKPOINT_SCHEMA:
        raise SchemaMismatch(
            f"checkpoint schema {document.get('schema')!r} != {CHECKPOINT_SCHEMA!r}"
        )
    stated = document.pop("content_hash", None)
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    actual = hashlib.sha256(canonical.encode()).hexdigest()
    if stated != actual:
        raise CorruptCheckpoint(f"checkpoint {path} content hash mismatch")
    return document


def latest_checkpoint(run_dir: Path) -> Path | None:
    cp_dir = Path(run_dir) / "checkpoints"
    if not cp_dir.is_dir():
        return None
    best: tuple[int, Path] | None = None
    for p in cp_dir.glob("gen-*.json"):
        try:
            gen = int(p.stem.split("-", 1)[1])
        except ValueError:
            continue
        if best is None or gen > best[0]:
            best = (gen, p)
    return best[1] if best else None


def resume(
    config: RunConfig,
    run_dir: Path,
    checkpoint_path: Path | None = None,
    *,
    seed_table: dict | None = None,
) -> RunState:
    """Restore a RunState from a checkpoint and rewind the ledger to it.

    Events recorded after the checkpoint are discarded so that continuation
    reproduces the uninterrupted event stream.
    """
    run_dir = Path(run_dir)
    if checkpoint_path is None:
        checkpoint_path = latest_checkpoint(run_dir)
        if checkpoint_path is None:
            raise ConfigError(f"no checkpoint found under {run_dir}")
    document = read_checkpoint(checkpoint_path)
    if document["config_hash"] != config.content_hash():
        raise SchemaMismatch("checkpoint was written under a different configuration")

    ledger_path = run_dir / LEDGER_FILENAME
    events = RunLedger.load_events(ledger_path)
    keep = document["ledger_length"]
    if len(events) < keep:
        raise CorruptCheckpoint(
            f"ledger holds {len(events)} events, checkpoint expects at least {keep}"
        )
    if events[keep - 1].kind != "checkpoint":
        raise CorruptCheckpoint(
            f"ledger event {keep - 1} is {events[keep - 1].kind!r}, expected the checkpoint"
        )
    if len(events) > keep:
        with open(ledger_path, "w", encoding="utf-8") as fh:
            for ev in events[:keep]:
                fh.write(ev.to_json() + "\n")

    store = ArtifactStore(run_dir)
    ledger = RunLedger.open_existing(ledger_path, events[:keep])
    budget = BudgetLedger(
        query_budget=document["budget"]["query_budget"],
        reset_budget=document["budget"]["reset_budget"],
        queries_used=document["budget"]["queries_used"],
        resets_used=document["budget"]["resets_used"],
    )
    gateway = build_gateway(config, store, seed_table)
    handles = [
        EvaluatorHandle(list(config.evaluator_cmd))
        for _ in range(config.eval_parallelism)
    ]
    return RunState(
        config=config,
        run_dir=run_dir,
        store=store,
        ledger=ledger,
        budget=budget,
        pool=pool_from_dict(document["pool"]),
        gateway=gateway,
        handles=handles,
        generation=document["generation"],
        halted=document.get("halted"),
    )


def run_search(state: RunState) -> RunState:
    """Loop generations until a budget exhausts; checkpoint on the way."""
    try:
        while not state.budgets_exhausted and state.halted is None:
            run_generation(state)
            if state.generation % state.config.checkpoint_every == 0:
                write_checkpoint(state)
        write_checkpoint(state)
        state.ledger.record(
            "run_end",
            generations=state.generation,
            best_id=state.pool.best.id if len(state.pool) else None,
            best_score=state.pool.best_score if len(state.pool) else None,
            queries_used=state.budget.queries_used,
            resets_used=state.budget.resets_used,
        )
    except Exception:
        write_checkpoint(state)
        raise
    finally:
        state.close()
    return state
