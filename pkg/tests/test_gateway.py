from __future__ import annotations

import re

import pytest

from mles.errors import BudgetExhausted, EndpointFailure, ImageUnsupported
from mles.gateway import (
    BudgetLedger,
    EndpointConfig,
    GatewayConfig,
    LlmGateway,
    StubBackend,
    bundle_hash,
)
from mles.model import IBEArtifactRef
from mles.operators import get_operator, parse_response, render_prompt
from mles.tasks import get_task
from tests.conftest import make_individual


def e1_bundle(code: str | None = None):
    task = get_task("lunar_lander")
    parents = [make_individual(0.5, code=code), make_individual(0.4, code=code)]
    return render_prompt(get_operator("E1"), task, parents, [], m=2), parents


def m1m_bundle():
    task = get_task("lunar_lander")
    parent = make_individual(0.5)
    ref = IBEArtifactRef("frame_stack_image", "i0", "artifacts/a.png", "image/png")
    return render_prompt(get_operator("M1_M"), task, [parent], [ref], m=2)


def budget(q=100, r=0):
    return BudgetLedger(query_budget=q, reset_budget=r)


class TestStubGateway:
    def test_counting_contract(self):
        gw = LlmGateway.stub()
        bundle, _ = e1_bundle()
        led = budget()
        results = gw.generate(bundle, 3, led)
        assert len(results) == 3
        assert all(isinstance(r, str) for r in results)
        assert led.queries_used == 3

    def test_budget_precondition(self):
        gw = LlmGateway.stub()
        bundle, _ = e1_bundle()
        led = budget(q=2)
        with pytest.raises(BudgetExhausted):
            gw.generate(bundle, 3, led)
        assert led.queries_used == 0

    def test_determinism(self):
        bundle, _ = e1_bundle()
        led = budget()
        first = LlmGateway.stub().generate(bundle, 1, led)[0]
        second = LlmGateway.stub().generate(bundle, 1, led)[0]
        assert first == second

    def test_index_salting(self):
        gw = LlmGateway.stub()
        bundle, _ = e1_bundle()
        a, b = gw.generate(bundle, 2, budget())
        assert a != b

    def test_seed_table_override(self):
        bundle, _ = e1_bundle()
        key = bundle_hash(bundle)
        gw = LlmGateway.stub({key: "CANNED {t} ```python\ndef f():\n    return 0\n```"})
        assert gw.generate(bundle, 1, budget())[0].startswith("CANNED")

    def test_default_response_mutates_one_numeric_literal(self):
        # diff oracle over parsed tokens: exactly one numeric literal differs
        code = (
            "def choose_action(s, last_action, s_pre):\n"
            "    angle = s[0] * 0.5 + s[2] * 1.0\n"
            "    if angle > 0.4:\n"
            "        angle = 0.4\n"
            "    return 2\n"
        )
        bundle, parents = e1_bundle(code)
        raw = LlmGateway.stub().generate(bundle, 1, budget())[0]
        parsed = parse_response(get_operator("E1"), raw, entry_point="choose_action")
        number = re.compile(r"(?<![\w.])(\d+\.\d+|\d+)(?![\w.])")
        orig_tokens = number.findall(parents[0].code)
        new_tokens = number.findall(parsed.code)
        assert len(orig_tokens) == len(new_tokens)
        diffs = [i for i, (a, b) in enumerate(zip(orig_tokens, new_tokens)) if a != b]
        assert len(diffs) == 1
        stripped_orig = number.sub("#", parents[0].code)
        stripped_new = number.sub("#", parsed.code)
        assert stripped_orig.strip() == stripped_new.strip()

    def test_stub_response_carries_operator_sections(self):
        bundle = m1m_bundle()
        raw = LlmGateway.stub().generate(bundle, 1, budget())[0]
        parsed = parse_response(get_operator("M1_M"), raw, entry_point="choose_action")
        assert parsed.description and parsed.analysis


class _FlakyBackend:
    supports_images = True
    name = "flaky"

    def __init__(self, failures_before_success: int):
        self.remaining_failures = failures_before_success
        self.calls = 0

    def complete(self, bundle, index, *, temperature, timeout):
        self.calls += 1
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise ConnectionError("transient")
        return "{ok} ```python\ndef choose_action(s, a, p):\n    return 0\n```"


class _DeadBackend:
    supports_images = False
    name = "dead"

    def complete(self, bundle, index, *, temperature, timeout):
        raise ConnectionError("always down")


def _config(max_retries=3):
    return GatewayConfig(
        endpoints=(EndpointConfig("http://x", "m", "KEY_VAR", True),),
        max_retries=max_retries,
    )


class TestRetries:
    def test_retry_replaces_attempt(self):
        backend = _FlakyBackend(2)
        gw = LlmGateway([backend], _config(max_retries=3))
        bundle, _ = e1_bundle()
        led = budget()
        results = gw.generate(bundle, 1, led)
        assert isinstance(results[0], str)
        assert led.queries_used == 1
        assert backend.calls == 3

    def test_failed_slot_yields_error_entry(self):
        gw = LlmGateway([_DeadBackend()], _config(max_retries=2))
        bundle, _ = e1_bundle()
        led = budget()
        results = gw.generate(bundle, 2, led)
        assert all(isinstance(r, EndpointFailure) for r in results)
        assert led.queries_used == 2  # reservation is consumption

    def test_round_robin_mixes_endpoints(self):
        ok = StubBackend()
        dead = _DeadBackend()
        gw = LlmGateway([dead, ok], _config(max_retries=2))
        bundle, _ = e1_bundle()
        results = gw.generate(bundle, 2, budget())
        # dead slots retry onto the healthy endpoint
        assert all(isinstance(r, str) for r in results)


class TestImages:
    def test_image_unsupported(self):
        gw = LlmGateway([_DeadBackend()], _config())
        bundle = m1m_bundle()
        with pytest.raises(ImageUnsupported):
            gw.generate(bundle, 1, budget())

    def test_stub_accepts_images(self):
        gw = LlmGateway.stub()
        bundle = m1m_bundle()
        assert isinstance(gw.generate(bundle, 1, budget())[0], str)


class TestBudgetLedger:
    def test_monotone_and_capped(self):
        led = BudgetLedger(query_budget=5, reset_budget=7)
        led.reserve_queries(3)
        led.reserve_resets(7)
        assert (led.queries_used, led.resets_used) == (3, 7)
        with pytest.raises(BudgetExhausted):
            led.reserve_queries(3)
        with pytest.raises(BudgetExhausted):
            led.reserve_resets(1)
        assert (led.queries_used, led.resets_used) == (3, 7)
