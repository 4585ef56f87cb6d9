"""Engine side of the evaluator wire protocol, plus metric aggregation.

Evaluators are subprocesses speaking newline-delimited JSON frames over
stdin/stdout (protocol ``mles-eval/1``). The bridge reserves environment
resets before dispatch, re-derives the aggregate score from the per-instance
entries, and rejects evaluators whose aggregation drifts from the documented
rules.

The Lunar Lander aggregate is the normalized weight score

    NWS = R/200 * 0.6 + (1 - min(C/100, 1)) * 0.2 + S * 0.2

over the mean episode reward R, mean fuel consumption C, and success
fraction S; Car Racing aggregates the mean track completion percentage.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass, field

from mles.errors import (
    AggregateMismatch,
    DomainError,
    EvaluatorCrashed,
    EvaluatorTimeout,
    MixedTask,
)
from mles.gateway import BudgetLedger
from mles.model import (
    InstanceMetrics,
    QuantitativeMetrics,
    instance_metrics_from_dict,
    instance_metrics_to_dict,
)

PROTOCOL_VERSION = "mles-eval/1"
AGGREGATE_TOLERANCE = 1e-9


def compute_nws(reward: float, fuel: float, success: float) -> float:
    """Normalized weight score for the lander task.

    The reward term is not clamped: negative mean rewards produce negative
    scores.

    Raises:
        DomainError: fuel negative, or success outside [0, 1].
    """
    if fuel < 0:
        raise DomainError(f"fuel must be non-negative, got {fuel}")
    if not 0.0 <= success <= 1.0:
        raise DomainError(f"success rate must lie in [0, 1], got {success}")
    return reward / 200.0 * 0.6 + (1.0 - min(fuel / 100.0, 1.0)) * 0.2 + success * 0.2


def aggregate_lander(per_instance: list[InstanceMetrics]) -> QuantitativeMetrics:
    """Mean-aggregate lander episodes into one NWS-scored metric record."""
    if not per_instance:
        raise ValueError("no instances to aggregate")
    if any(m.task_kind != "lander" for m in per_instance):
        raise MixedTask("aggregate_lander received non-lander entries")
    n = len(per_instance)
    reward = sum(m.reward for m in per_instance) / n
    fuel = sum(m.fuel for m in per_instance) / n
    success = sum(1 for m in per_instance if m.success) / n
    return QuantitativeMetrics(
        aggregate_score=compute_nws(reward, fuel, success),
        per_instance=tuple(per_instance),
        resets_used=n,
    )


def aggregate_racing(per_instance: list[InstanceMetrics]) -> QuantitativeMetrics:
    """Mean track completion percentage across racing episodes."""
    if not per_instance:
        raise ValueError("no instances to aggregate")
    if any(m.task_kind != "racing" for m in per_instance):
        raise MixedTask("aggregate_racing received non-racing entries")
    n = len(per_instance)
    completion = sum(m.completion for m in per_instance) / n
    return QuantitativeMetrics(
        aggregate_score=completion, per_instance=tuple(per_instance), resets_used=n
    )


def aggregate_for_task(task_name: str, per_instance: list[InstanceMetrics]) -> QuantitativeMetrics:
    if task_name == "car_racing":
        return aggregate_racing(per_instance)
    return aggregate_lander(per_instance)


# wire protocol ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalLimits:
    max_steps_per_episode: int = 1000
    wall_clock_seconds: float = 60.0

    def __post_init__(self) -> None:
        if self.max_steps_per_episode <= 0 or self.wall_clock_seconds <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class EvalRequest:
    request_id: str
    kind: str  # evaluate | ensemble_evaluate | shutdown
    task: str
    instance_ids: tuple[str, ...] = ()
    seeds: tuple[int, ...] = ()
    code: str | None = None
    codes: tuple[str, ...] = ()
    ibe_kinds: tuple[str, ...] = ()
    limits: EvalLimits = field(default_factory=EvalLimits)

    def __post_init__(self) -> None:
        if self.kind in ("evaluate", "ensemble_evaluate"):
            if not self.instance_ids:
                raise ValueError("instance_ids must be non-empty")
            if len(self.seeds) != len(self.instance_ids):
                raise ValueError("seeds must align with instance_ids")

    def to_frame(self) -> dict:
        frame = {
            "type": self.kind,
            "request_id": self.request_id,
            "task": self.task,
            "instance_ids": list(self.instance_ids),
            "seeds": list(self.seeds),
            "ibe_kinds": list(self.ibe_kinds),
            "limits": {
                "max_steps_per_episode": self.limits.max_steps_per_episode,
                "wall_clock_seconds": self.limits.wall_clock_seconds,
            },
        }
        if self.kind == "evaluate":
            frame["code"] = self.code
        elif self.kind == "ensemble_evaluate":
            frame["codes"] = list(self.codes)
        return frame


@dataclass(frozen=True)
class IBEPayload:
    kind: str
    instance_id: str
    media_type: str
    content_b64: str


@dataclass(frozen=True)
class EvalResponse:
    request_id: str
    status: str  # ok | policy_error | timeout | protocol_error
    report: QuantitativeMetrics | None = None
    error_detail: str = ""
    ibe_payloads: tuple[IBEPayload, ...] = ()
    resets_performed: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def parse_response_frame(frame: dict, request_id: str) -> EvalResponse:
    status = frame.get("status", "protocol_error")
    report = None
    if status == "ok":
        rep = frame["report"]
        report = QuantitativeMetrics(
            aggregate_score=float(rep["aggregate_score"]),
            per_instance=tuple(instance_metrics_from_dict(d) for d in rep["per_instance"]),
            resets_used=int(rep["resets_used"]),
        )
    payloads = tuple(
        IBEPayload(
            kind=p["kind"],
            instance_id=str(p["instance_id"]),
            media_type=p["media_type"],
            content_b64=p["content_b64"],
        )
        for p in frame.get("ibe_payloads", [])
    )
    return EvalResponse(
        request_id=request_id,
        status=status,
        report=report,
        error_detail=frame.get("error_detail", ""),
        ibe_payloads=payloads,
        resets_performed=int(frame.get("resets_performed", 0)),
    )


class EvaluatorHandle:
    """One evaluator subprocess; requests on a handle are strictly sequential."""

    def __init__(self, cmd: list[str], handshake_timeout: float = 30.0):
        self.cmd = list(cmd)
        self.proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lock = threading.Lock()
        hello = self._read_frame(handshake_timeout)
        if hello is None or hello.get("type") != "hello" or hello.get("schema") != PROTOCOL_VERSION:
            self.close()
            raise EvaluatorCrashed(
                f"evaluator handshake failed or wrong schema: {hello!r}"
            )
        self.hello = hello

    @property
    def capabilities(self) -> list[str]:
        return list(self.hello.get("capabilities", []))

    @property
    def tasks(self) -> list[str]:
        return list(self.hello.get("tasks", []))

    def _write_frame(self, frame: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(frame, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise EvaluatorCrashed(f"evaluator pipe closed: {exc}") from exc

    def _read_frame(self, timeout: float) -> dict | None:
        result: dict = {}

        def reader():
            line = self.proc.stdout.readline()
            result["line"] = line

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        t.join(timeout)
        if t.is_alive():
            raise EvaluatorTimeout(f"no response frame within {timeout}s")
        line = result.get("line", "")
        if not line:
            raise EvaluatorCrashed("evaluator closed its output stream")
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
            return frame
        except ValueError:
            return None  # caller maps to protocol_error

    def roundtrip(self, req: EvalRequest, timeout: float) -> EvalResponse:
        with self._lock:
            self._write_frame(req.to_frame())
            try:
                frame = self._read_frame(timeout)
            except EvaluatorTimeout:
                self.close()
                raise
            if frame is None:
                return EvalResponse(
                    request_id=req.request_id,
                    status="protocol_error",
                    error_detail="malformed response frame",
                )
            return parse_response_frame(frame, req.request_id)

    def shutdown(self) -> None:
        try:
            self._write_frame({"type": "shutdown"})
            self.proc.wait(timeout=10)
        except Exception:
            self.close()

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()


def verify_response(req: EvalRequest, response: EvalResponse) -> EvalResponse:
    """Re-derive the aggregate and reject evaluators that drift from it."""
    if response.ok:
        expected = aggregate_for_task(req.task, list(response.report.per_instance))
        if abs(expected.aggregate_score - response.report.aggregate_score) > AGGREGATE_TOLERANCE:
            raise AggregateMismatch(
                f"evaluator reported {response.report.aggregate_score!r}, "
                f"recomputed {expected.aggregate_score!r}"
            )
        if response.report.resets_used != len(req.instance_ids):
            raise AggregateMismatch(
                f"evaluator reported {response.report.resets_used} resets for "
                f"{len(req.instance_ids)} instances"
            )
    return response


def request_timeout(req: EvalRequest) -> float:
    # generous margin over the evaluator's own wall clock so the subprocess
    # signals timeouts before the pipe read gives up
    return req.limits.wall_clock_seconds * max(1, len(req.instance_ids)) + 30.0


def evaluate_policy(
    handle: EvaluatorHandle, req: EvalRequest, budget: BudgetLedger
) -> EvalResponse:
    """Dispatch one evaluation, enforcing budget and aggregate invariants.

    Reserves one reset per instance before dispatch (raising BudgetExhausted
    untouched when they do not fit). On an ok response the aggregate is
    recomputed from the per-instance entries; drifting evaluators are
    rejected with AggregateMismatch.
    """
    budget.reserve_resets(len(req.instance_ids))
    response = handle.roundtrip(req, request_timeout(req))
    return verify_response(req, response)


def metrics_report_frame(metrics: QuantitativeMetrics) -> dict:
    return {
        "aggregate_score": metrics.aggregate_score,
        "per_instance": [instance_metrics_to_dict(m) for m in metrics.per_instance],
        "resets_used": metrics.resets_used,
    }
