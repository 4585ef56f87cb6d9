from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mles.errors import EmptyCode
from mles.model import (
    IBEArtifactRef,
    InstanceMetrics,
    LineageRecord,
    fingerprint,
    individual_from_dict,
    individual_to_dict,
    normalize_code,
    validate_entry_point,
)
from tests.conftest import make_individual

BASE = "def f():\n return 0"


class TestFingerprint:
    def test_whitespace_only_edits_share_hash(self):
        assert fingerprint(BASE) == fingerprint("def f():\n return 0   \n\n")

    def test_distinct_content_distinct_hash(self):
        assert fingerprint(BASE) != fingerprint("def f():\n return 1")

    def test_empty_raises(self):
        with pytest.raises(EmptyCode):
            fingerprint("")
        with pytest.raises(EmptyCode):
            fingerprint("  \n\t \n")

    def test_line_ending_normalization(self):
        assert fingerprint("def f():\r\n return 0\r\n") == fingerprint(BASE)
        assert fingerprint("def f():\r return 0") == fingerprint(BASE)

    def test_ten_thousand_random_perturbations_one_hash(self):
        # Exhaustive perturbation oracle: every edit below preserves the
        # defined whitespace-normal form, so all hashes must collapse to one.
        code = (
            "def choose_action(s, last_action, s_pre):\n"
            "    angle = s[0] * 0.5 + s[2]\n"
            "\n"
            "    if angle > 0.4:\n"
            "        angle = 0.4\n"
            "    return 0\n"
        )
        rng = random.Random(20_240_511)
        hashes = set()
        for _ in range(10_000):
            hashes.add(fingerprint(_perturb_whitespace(code, rng)))
        assert hashes == {fingerprint(code)}


def _perturb_whitespace(code: str, rng: random.Random) -> str:
    lines = code.split("\n")
    out = []
    for line in lines:
        # extend existing space runs (never create new ones mid-token)
        chars = []
        for ch in line:
            chars.append(ch)
            if ch in (" ", "\t") and rng.random() < 0.3:
                chars.append(rng.choice([" ", "\t", "  "]))
        line = "".join(chars)
        if rng.random() < 0.3:
            line += rng.choice([" ", "\t", "   "])
        out.append(line)
        if rng.random() < 0.15:
            out.append(rng.choice(["", " ", "\t\t"]))
    text = "\n".join(out)
    if rng.random() < 0.3:
        text = text.replace("\n", "\r\n")
    if rng.random() < 0.3:
        text = "\n" + text
    if rng.random() < 0.3:
        text += "\n\n"
    return text


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=200))
@settings(max_examples=200)
def test_normalize_idempotent(text):
    assert normalize_code(normalize_code(text)) == normalize_code(text)


class TestDomainTypes:
    def test_instance_metrics_exactly_one_group(self):
        with pytest.raises(ValueError):
            InstanceMetrics(instance_id="a", reward=1.0, steps=1)
        with pytest.raises(ValueError):
            InstanceMetrics(
                instance_id="a", reward=1.0, steps=1, fuel=1.0, success=True, completion=50.0
            )
        lander = InstanceMetrics(instance_id="a", reward=1.0, steps=1, fuel=0.0, success=True)
        assert lander.task_kind == "lander"
        racing = InstanceMetrics(instance_id="a", reward=1.0, steps=1, completion=50.0)
        assert racing.task_kind == "racing"

    def test_lineage_invariants(self):
        with pytest.raises(ValueError):
            LineageRecord(parent_ids=(), operator="E1", generation=1)
        with pytest.raises(ValueError):
            LineageRecord(parent_ids=("a",), operator="INIT", generation=0)

    def test_ibe_ref_kind_media_coupling(self):
        with pytest.raises(ValueError):
            IBEArtifactRef("text_state_trace", "i", "artifacts/x.txt", "image/png")
        with pytest.raises(ValueError):
            IBEArtifactRef("frame_stack_image", "i", "artifacts/x.png", "text/plain")

    def test_entry_point_validation(self):
        validate_entry_point("def choose_action(s):\n    return 0", "choose_action")
        with pytest.raises(ValueError):
            validate_entry_point("def other(s):\n    return 0", "choose_action")
        with pytest.raises(ValueError):
            validate_entry_point(
                "def choose_action(s):\n    return 0\ndef choose_action(q):\n    return 1",
                "choose_action",
            )

    def test_individual_roundtrip(self):
        ind = make_individual(0.5, generation=2, parent_ids=("p1",), operator="M1_M")
        assert individual_from_dict(individual_to_dict(ind)) == ind

    def test_fingerprint_computed_on_build(self):
        ind = make_individual(0.1, code="def choose_action(s, a, p):\n    return 2\n")
        assert ind.fingerprint == fingerprint(ind.code)
