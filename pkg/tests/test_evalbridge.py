from __future__ import annotations

import json
import sys
import textwrap

import pytest

from mles.config import stub_evaluator_cmd
from mles.errors import (
    AggregateMismatch,
    BudgetExhausted,
    DomainError,
    EvaluatorCrashed,
    MixedTask,
)
from mles.evalbridge import (
    EvalLimits,
    EvalRequest,
    EvaluatorHandle,
    aggregate_lander,
    aggregate_racing,
    compute_nws,
    evaluate_policy,
)
from mles.gateway import BudgetLedger
from mles.model import InstanceMetrics

CODE = "def choose_action(s, last_action, s_pre):\n    return 0\n"


class TestComputeNws:
    def test_tagged_examples_exact(self):
        assert compute_nws(200.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
        assert compute_nws(0.0, 150.0, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert compute_nws(100.0, 50.0, 0.5) == pytest.approx(0.5, abs=1e-12)
        assert compute_nws(-100.0, 200.0, 0.0) == pytest.approx(-0.3, abs=1e-12)

    def test_reward_term_not_clamped(self):
        assert compute_nws(-400.0, 0.0, 0.0) < 0

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            compute_nws(0.0, -1.0, 0.0)
        with pytest.raises(DomainError):
            compute_nws(0.0, 0.0, 1.5)
        with pytest.raises(DomainError):
            compute_nws(0.0, 0.0, -0.1)

    def test_affine_slope_in_reward_exact(self):
        # finite differences on the unclamped region: slope is 0.003 exactly
        # (base points chosen so the additive terms are rounding-free doubles)
        for fuel, success in ((50.0, 0.0), (99.0, 0.0), (99.0, 0.5)):
            hi = compute_nws(200.0, fuel, success)
            lo = compute_nws(0.0, fuel, success)
            assert (hi - lo) / 200.0 == 0.003

    def test_affine_slope_everywhere_at_tolerance(self):
        for fuel in (0.0, 25.0, 75.0):
            for success in (0.0, 0.5, 1.0):
                hi = compute_nws(321.0, fuel, success)
                lo = compute_nws(-321.0, fuel, success)
                assert (hi - lo) / 642.0 == pytest.approx(0.003, abs=1e-15)


def lander(reward, fuel, success, instance="i"):
    return InstanceMetrics(
        instance_id=instance, reward=reward, steps=100, fuel=fuel, success=success
    )


def racing(completion, instance="i"):
    return InstanceMetrics(
        instance_id=instance, reward=completion * 9, steps=100, completion=completion
    )


class TestAggregation:
    def test_identical_perfect_instances(self):
        metrics = aggregate_lander([lander(200.0, 0.0, True, f"i{k}") for k in range(5)])
        assert metrics.aggregate_score == pytest.approx(1.0, abs=1e-12)
        assert metrics.resets_used == 5

    def test_mixed_two_instance_example(self):
        metrics = aggregate_lander(
            [lander(300.0, 0.0, True, "a"), lander(100.0, 100.0, False, "b")]
        )
        # R=200, C=50, S=0.5 -> 0.6 + 0.1 + 0.1
        assert metrics.aggregate_score == pytest.approx(0.8, abs=1e-12)

    def test_single_instance_equals_pointwise(self):
        metrics = aggregate_lander([lander(123.0, 37.0, True)])
        assert metrics.aggregate_score == pytest.approx(compute_nws(123.0, 37.0, 1.0), abs=1e-15)

    def test_racing_examples(self):
        assert aggregate_racing([racing(100.0, f"t{k}") for k in range(4)]).aggregate_score == 100.0
        assert aggregate_racing([racing(80.0, "a"), racing(100.0, "b")]).aggregate_score == 90.0
        # tiles-visited ratio oracle: 732 of 800 tiles
        assert aggregate_racing([racing(732 / 800 * 100)]).aggregate_score == pytest.approx(91.5)

    def test_mixed_task_rejected(self):
        with pytest.raises(MixedTask):
            aggregate_lander([lander(1.0, 0.0, True), racing(50.0)])
        with pytest.raises(MixedTask):
            aggregate_racing([racing(50.0), lander(1.0, 0.0, True)])


def _request(code=CODE, n=5, kind="evaluate", task="stub", **kwargs):
    ids = tuple(f"s{i}" for i in range(1, n + 1))
    return EvalRequest(
        request_id="r1",
        kind=kind,
        task=task,
        instance_ids=ids,
        seeds=tuple(range(1, n + 1)),
        code=code if kind == "evaluate" else None,
        codes=kwargs.pop("codes", ()),
        ibe_kinds=kwargs.pop("ibe_kinds", ()),
        limits=EvalLimits(max_steps_per_episode=100, wall_clock_seconds=5.0),
    )


@pytest.fixture
def stub_handle():
    handle = EvaluatorHandle(list(stub_evaluator_cmd()))
    yield handle
    handle.shutdown()


class TestProtocol:
    def test_handshake(self, stub_handle):
        assert stub_handle.hello["schema"] == "mles-eval/1"
        assert "ensemble_evaluate" in stub_handle.capabilities

    def test_ok_path_counts_resets(self, stub_handle):
        led = BudgetLedger(query_budget=0, reset_budget=100)
        response = evaluate_policy(stub_handle, _request(), led)
        assert response.ok
        assert led.resets_used == 5
        assert response.report.resets_used == 5
        assert len(response.report.per_instance) == 5

    def test_policy_error_path(self, stub_handle):
        led = BudgetLedger(query_budget=0, reset_budget=100)
        code = CODE + "# RAISE_IN_EPISODE\n"
        response = evaluate_policy(stub_handle, _request(code), led)
        assert response.status == "policy_error"
        assert response.report is None
        assert led.resets_used == 5
        assert response.resets_performed == 5

    def test_budget_precondition(self, stub_handle):
        led = BudgetLedger(query_budget=0, reset_budget=3)
        with pytest.raises(BudgetExhausted):
            evaluate_policy(stub_handle, _request(n=5), led)
        assert led.resets_used == 0

    def test_ibe_payloads_delivered(self, stub_handle):
        led = BudgetLedger(query_budget=0, reset_budget=100)
        response = evaluate_policy(
            stub_handle,
            _request(ibe_kinds=("frame_stack_image", "text_state_trace")),
            led,
        )
        kinds = {p.kind for p in response.ibe_payloads}
        assert kinds == {"frame_stack_image", "text_state_trace"}
        assert len(response.ibe_payloads) == 10

    def test_ensemble_request(self, stub_handle):
        led = BudgetLedger(query_budget=0, reset_budget=100)
        req = _request(kind="ensemble_evaluate", codes=(CODE, CODE + "# b\n"))
        response = evaluate_policy(stub_handle, req, led)
        assert response.ok


def _fake_evaluator(tmp_path, body: str) -> list[str]:
    """Evaluator double whose per-request behavior is the given body."""
    script = tmp_path / "fake_eval.py"
    indented = textwrap.indent(textwrap.dedent(body), "    ")
    script.write_text(
        textwrap.dedent(
            """\
            import json, sys
            print(json.dumps({
                "type": "hello", "schema": "mles-eval/1", "tasks": ["stub"],
                "ibe_kinds": [], "capabilities": ["evaluate"], "versions": {}
            }), flush=True)
            for line in sys.stdin:
                frame = json.loads(line)
                if frame.get("type") == "shutdown":
                    break
            """
        )
        + indented
    )
    return [sys.executable, str(script)]


class TestProtocolDefense:
    def test_malformed_frame_is_protocol_error(self, tmp_path):
        cmd = _fake_evaluator(
            tmp_path,
            """\
                print("this is not json", flush=True)
            """,
        )
        handle = EvaluatorHandle(cmd)
        try:
            led = BudgetLedger(query_budget=0, reset_budget=100)
            response = evaluate_policy(handle, _request(), led)
            assert response.status == "protocol_error"
        finally:
            handle.close()

    def test_aggregate_mismatch_rejected(self, tmp_path):
        cmd = _fake_evaluator(
            tmp_path,
            """\
                print(json.dumps({
                    "type": "response", "request_id": frame["request_id"],
                    "status": "ok",
                    "report": {
                        "aggregate_score": 0.9,
                        "per_instance": [
                            {"instance_id": i, "reward": 10.0, "steps": 5,
                             "fuel": 0.0, "success": False}
                            for i in frame["instance_ids"]
                        ],
                        "resets_used": len(frame["instance_ids"]),
                    },
                    "resets_performed": len(frame["instance_ids"]),
                }), flush=True)
            """,
        )
        handle = EvaluatorHandle(cmd)
        try:
            led = BudgetLedger(query_budget=0, reset_budget=100)
            with pytest.raises(AggregateMismatch):
                evaluate_policy(handle, _request(), led)
        finally:
            handle.close()

    def test_evaluator_crash_detected(self, tmp_path):
        cmd = _fake_evaluator(
            tmp_path,
            """\
                sys.exit(9)
            """,
        )
        handle = EvaluatorHandle(cmd)
        try:
            led = BudgetLedger(query_budget=0, reset_budget=100)
            with pytest.raises(EvaluatorCrashed):
                evaluate_policy(handle, _request(), led)
        finally:
            handle.close()

    def test_bad_handshake_rejected(self, tmp_path):
        script = tmp_path / "bad_hello.py"
        script.write_text("print('{\"type\": \"hello\", \"schema\": \"other/9\"}', flush=True)\n")
        with pytest.raises(EvaluatorCrashed):
            EvaluatorHandle([sys.executable, str(script)])

    def test_nonobject_frame_from_evaluator(self, tmp_path):
        cmd = _fake_evaluator(
            tmp_path,
            """\
                print(json.dumps([1, 2, 3]), flush=True)
            """,
        )
        handle = EvaluatorHandle(cmd)
        try:
            led = BudgetLedger(query_budget=0, reset_budget=100)
            response = evaluate_policy(handle, _request(), led)
            assert response.status == "protocol_error"
        finally:
            handle.close()


def test_request_frame_shape():
    req = _request(n=2, ibe_kinds=("frame_stack_image",))
    frame = req.to_frame()
    parsed = json.loads(json.dumps(frame))
    assert parsed["type"] == "evaluate"
    assert parsed["instance_ids"] == ["s1", "s2"]
    assert parsed["limits"]["max_steps_per_episode"] == 100
