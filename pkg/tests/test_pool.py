from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mles.errors import EmptyPool, UnevaluatedCandidate
from mles.model import PolicyIndividual
from mles.pool import PolicyPool, pool_from_dict, pool_to_dict, selection_weights
from tests.conftest import make_individual


def exact_weights(ranks: list[int], capacity: int) -> list[Fraction]:
    raw = [Fraction(1, r + capacity) for r in ranks]
    total = sum(raw)
    return [w / total for w in raw]


class TestSelectionWeights:
    def test_single_candidate(self):
        assert selection_weights([1], 1) == [1.0]

    def test_two_candidates_exact(self):
        # oracle: 1/3 and 1/4 normalize to 4/7 and 3/7
        expected = exact_weights([1, 2], 2)
        assert expected == [Fraction(4, 7), Fraction(3, 7)]
        got = selection_weights([1, 2], 2)
        assert got == pytest.approx([4 / 7, 3 / 7], abs=1e-15)

    def test_four_candidates_exact(self):
        expected = [float(w) for w in exact_weights([1, 2, 3, 4], 4)]
        got = selection_weights([1, 2, 3, 4], 4)
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx([0.3152, 0.2627, 0.2251, 0.1970], abs=5e-5)

    def test_empty_raises(self):
        with pytest.raises(EmptyPool):
            selection_weights([], 4)

    def test_strictly_decreasing_in_rank(self):
        w = selection_weights(list(range(1, 17)), 16)
        assert all(a > b for a, b in zip(w, w[1:]))

    def test_sum_one_over_full_grid(self):
        for capacity in range(1, 65):
            for n in range(1, 65):
                w = selection_weights(list(range(1, n + 1)), capacity)
                assert abs(sum(w) - 1.0) <= 1e-12
                assert all(x > 0 for x in w)

    def test_permutation_equivariance(self):
        rng = random.Random(3)
        ranks = list(range(1, 11))
        base = dict(zip(ranks, selection_weights(ranks, 16)))
        for _ in range(25):
            perm = ranks[:]
            rng.shuffle(perm)
            permuted = selection_weights(perm, 16)
            assert permuted == pytest.approx([base[r] for r in perm], abs=1e-15)

    def test_bad_ranks_rejected(self):
        with pytest.raises(ValueError):
            selection_weights([0, 1], 4)
        with pytest.raises(ValueError):
            selection_weights([1, 1], 4)
        with pytest.raises(ValueError):
            selection_weights([1, 3], 4)


def build_pool(scores: list[float], capacity: int = 16) -> PolicyPool:
    pool = PolicyPool(capacity=capacity)
    pool, _ = pool.admit_offspring([make_individual(s) for s in scores])
    return pool


class TestSelectParents:
    def test_pool_of_one_fills_with_replacement(self):
        pool = build_pool([0.5])
        parents = pool.select_parents(2, random.Random(0))
        assert len(parents) == 2
        assert parents[0] is parents[1]

    def test_pool_of_two_never_duplicates(self):
        pool = build_pool([0.5, 0.4])
        for seed in range(300):
            parents = pool.select_parents(2, random.Random(seed))
            assert {p.id for p in parents} == set(pool.member_ids)

    def test_empty_pool_raises(self):
        with pytest.raises(EmptyPool):
            PolicyPool(capacity=4).select_parents(2, random.Random(0))

    def test_first_draw_matches_analytic_law(self):
        # Monte-Carlo oracle against the analytic weights (lighter version of
        # the acceptance run).
        pool = build_pool([1.0 - i * 0.01 for i in range(16)])
        weights = selection_weights(list(range(1, 17)), 16)
        rng = random.Random(12345)
        draws = 30_000
        counts = {m.id: 0 for m in pool.members}
        for _ in range(draws):
            counts[pool.select_parents(2, rng)[0].id] += 1
        for member, expected in zip(pool.members, weights):
            assert counts[member.id] / draws == pytest.approx(expected, abs=0.01)

    def test_draw_order_is_result_order(self):
        pool = build_pool([0.9, 0.1])
        seen_orders = set()
        for seed in range(50):
            parents = pool.select_parents(2, random.Random(seed))
            seen_orders.add(tuple(p.id for p in parents))
        assert len(seen_orders) == 2  # both orders occur


class TestAdmitOffspring:
    def test_better_candidate_evicts_worst(self):
        pool = build_pool([0.9] + [0.5] * 14 + [0.3], capacity=16)
        worst_id = pool.members[-1].id
        newcomer = make_individual(0.95)
        pool2, outcome = pool.admit_offspring([newcomer])
        assert newcomer.id in pool2.member_ids
        assert worst_id not in pool2.member_ids
        assert outcome.evicted_ids == (worst_id,)
        assert len(pool2) == 16

    def test_duplicate_fingerprint_rejected(self):
        incumbent = make_individual(0.5, code="def f():\n return 7")
        pool, _ = PolicyPool(capacity=16).admit_offspring([incumbent])
        clone = make_individual(0.9, code="def f():\n  return  7\n\n")
        pool2, outcome = pool.admit_offspring([clone])
        assert pool2.member_ids == pool.member_ids
        assert outcome.duplicates[0]["id"] == clone.id
        assert outcome.duplicates[0]["thought"] == clone.thought

    def test_twenty_candidates_top_sixteen(self):
        # sort-and-slice oracle
        rng = random.Random(9)
        scores = [round(rng.random(), 6) for _ in range(20)]
        cands = [make_individual(s) for s in scores]
        pool, _ = PolicyPool(capacity=16).admit_offspring(cands)
        expected = sorted(scores, reverse=True)[:16]
        assert [m.aggregate_score for m in pool.members] == expected

    def test_ties_favor_earlier_admission(self):
        first = make_individual(0.5)
        pool, _ = PolicyPool(capacity=16).admit_offspring([first])
        second = make_individual(0.5)
        pool, _ = pool.admit_offspring([second])
        assert pool.member_ids == (first.id, second.id)

    def test_unevaluated_rejected(self):
        bare = PolicyIndividual(
            id="u1",
            code="def f():\n return 0",
            thought="t",
            metrics=None,
            ibe=(),
            origin=make_individual(0.1).origin,
        )
        with pytest.raises(UnevaluatedCandidate):
            PolicyPool(capacity=4).admit_offspring([bare])

    def test_dedup_within_batch_keeps_first(self):
        a = make_individual(0.3, code="def f():\n return 3")
        b = make_individual(0.8, code="def f():\n  return 3")  # same normal form
        pool, outcome = PolicyPool(capacity=16).admit_offspring([a, b])
        assert pool.member_ids == (a.id,)
        assert outcome.duplicate_ids == (b.id,)

    def test_serialization_roundtrip(self):
        pool = build_pool([0.4, 0.9, 0.1])
        assert pool_from_dict(pool_to_dict(pool)) == pool


@given(
    st.lists(
        st.lists(st.floats(min_value=-1, max_value=2, allow_nan=False), min_size=0, max_size=6),
        min_size=1,
        max_size=12,
    )
)
@settings(max_examples=150, deadline=None)
def test_elitism_and_capacity_property(batches):
    pool = PolicyPool(capacity=16)
    best = None
    for batch in batches:
        cands = [make_individual(s) for s in batch]
        pool, _ = pool.admit_offspring(cands)
        assert len(pool) <= 16
        if len(pool):
            if best is not None:
                assert pool.best_score >= best
            best = pool.best_score
        ids = [e.sort_key for e in pool.entries]
        assert ids == sorted(ids)
