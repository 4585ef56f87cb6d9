from __future__ import annotations

import itertools

import pytest

from mles.model import (
    InstanceMetrics,
    LineageRecord,
    PolicyIndividual,
    QuantitativeMetrics,
)

_counter = itertools.count()


def make_individual(
    score: float,
    code: str | None = None,
    *,
    generation: int = 0,
    parent_ids: tuple[str, ...] = (),
    operator: str | None = None,
    thought: str = "a thought",
) -> PolicyIndividual:
    n = next(_counter)
    if code is None:
        code = f"def choose_action(s, last_action, s_pre):\n    return {n}\n"
    metrics = QuantitativeMetrics(
        aggregate_score=score,
        per_instance=(
            InstanceMetrics(
                instance_id="i0", reward=score * 1000 / 3, steps=10, fuel=100.0, success=False
            ),
        ),
        resets_used=1,
    )
    if operator is None:
        operator = "INIT" if not parent_ids else "E1"
    return PolicyIndividual(
        id=f"t{n}",
        code=code,
        thought=thought,
        metrics=metrics,
        ibe=(),
        origin=LineageRecord(
            parent_ids=parent_ids, operator=operator, generation=generation
        ),
    )


@pytest.fixture
def individual_factory():
    return make_individual
