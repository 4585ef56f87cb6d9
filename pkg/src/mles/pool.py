"""Population of evaluated policy individuals.

The pool is a fixed-capacity elitist repository: admission merges a batch of
offspring with the incumbents, drops fingerprint duplicates, re-ranks by
aggregate score (ties favor earlier admission), and truncates to capacity.
Parent selection draws without replacement under the rank-based law
p_i proportional to 1/(rank_i + N), N being the pool capacity.
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field

from mles.errors import EmptyPool, UnevaluatedCandidate
from mles.model import PolicyIndividual

DEFAULT_CAPACITY = 16


def selection_weights(ranks: list[int], capacity: int) -> list[float]:
    """Selection probabilities for 1-based ranks under p ~ 1/(rank + N).

    Args:
        ranks: distinct 1-based ranks, each at most ``len(ranks)``.
        capacity: the pool capacity N used in the weight law.

    Returns:
        Probabilities aligned with ``ranks``; positive, summing to 1.
    """
    if not ranks:
        raise EmptyPool("no ranks to weight")
    if capacity < 1:
        raise ValueError("capacity must be positive")
    n = len(ranks)
    seen = set()
    for r in ranks:
        if not isinstance(r, int) or r < 1 or r > n or r in seen:
            raise ValueError(f"ranks must be distinct 1-based integers <= {n}, got {ranks}")
        seen.add(r)
    raw = [1.0 / (r + capacity) for r in ranks]
    total = math.fsum(raw)
    return [w / total for w in raw]


@dataclass(frozen=True)
class _Entry:
    individual: PolicyIndividual
    admission_index: int

    @property
    def sort_key(self) -> tuple[float, int]:
        return (-self.individual.aggregate_score, self.admission_index)


@dataclass(frozen=True)
class AdmissionOutcome:
    """What one admit_offspring call did, for the ledger."""

    admitted_ids: tuple[str, ...]
    evicted_ids: tuple[str, ...]
    duplicate_ids: tuple[str, ...]
    duplicates: tuple[dict, ...]  # {id, fingerprint, thought} of dropped candidates


@dataclass(frozen=True)
class PolicyPool:
    """Immutable ranked population; operations return new pools."""

    capacity: int = DEFAULT_CAPACITY
    entries: tuple[_Entry, ...] = ()
    next_admission: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if len(self.entries) > self.capacity:
            raise ValueError("pool over capacity")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def members(self) -> tuple[PolicyIndividual, ...]:
        """Members in rank order (best first)."""
        return tuple(e.individual for e in self.entries)

    @property
    def member_ids(self) -> tuple[str, ...]:
        return tuple(e.individual.id for e in self.entries)

    @property
    def best(self) -> PolicyIndividual:
        if not self.entries:
            raise EmptyPool("pool is empty")
        return self.entries[0].individual

    @property
    def best_score(self) -> float:
        return self.best.aggregate_score

    def admission_indices(self) -> dict[str, int]:
        return {e.individual.id: e.admission_index for e in self.entries}

    def admit_offspring(self, candidates: list[PolicyIndividual]) -> tuple["PolicyPool", AdmissionOutcome]:
        """Merge candidates, dedup by fingerprint, re-rank, truncate to capacity."""
        for cand in candidates:
            if not cand.evaluated:
                raise UnevaluatedCandidate(f"candidate {cand.id} has no metrics")

        seen = {e.individual.fingerprint for e in self.entries}
        fresh: list[_Entry] = []
        duplicates: list[dict] = []
        admission = self.next_admission
        for cand in candidates:
            if cand.fingerprint in seen:
                duplicates.append(
                    {"id": cand.id, "fingerprint": cand.fingerprint, "thought": cand.thought}
                )
                continue
            seen.add(cand.fingerprint)
            fresh.append(_Entry(cand, admission))
            admission += 1

        merged = sorted(self.entries + tuple(fresh), key=lambda e: e.sort_key)
        kept = tuple(merged[: self.capacity])
        kept_ids = {e.individual.id for e in kept}
        admitted = tuple(e.individual.id for e in fresh if e.individual.id in kept_ids)
        evicted = tuple(
            e.individual.id for e in self.entries if e.individual.id not in kept_ids
        )
        dropped_overflow = tuple(
            e.individual.id for e in fresh if e.individual.id not in kept_ids
        )
        outcome = AdmissionOutcome(
            admitted_ids=admitted,
            evicted_ids=evicted,
            duplicate_ids=tuple(d["id"] for d in duplicates) + dropped_overflow,
            duplicates=tuple(duplicates),
        )
        pool = PolicyPool(capacity=self.capacity, entries=kept, next_admission=admission)
        return pool, outcome

    def select_parents(self, m: int, rng: random.Random) -> list[PolicyIndividual]:
        """Draw m parents by rank-weighted sampling.

        Draws are without replacement (renormalizing after each draw); when
        the pool holds fewer than m members, the remaining slots are filled
        by sampling with replacement from the full pool. Result order is
        draw order.
        """
        if not self.entries:
            raise EmptyPool("cannot select parents from an empty pool")
        if m < 1:
            raise ValueError("m must be positive")
        n = len(self.entries)
        ranks = list(range(1, n + 1))
        base_weights = selection_weights(ranks, self.capacity)

        chosen: list[int] = []
        available = list(range(n))
        weights = list(base_weights)
        for _ in range(min(m, n)):
            idx = _weighted_draw(available, weights, rng)
            pos = available.index(idx)
            available.pop(pos)
            weights.pop(pos)
            chosen.append(idx)
        for _ in range(m - n):
            chosen.append(_weighted_draw(list(range(n)), list(base_weights), rng))
        return [self.entries[i].individual for i in chosen]


def _weighted_draw(indices: list[int], weights: list[float], rng: random.Random) -> int:
    total = math.fsum(weights)
    cum: list[float] = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cum.append(acc)
    cum[-1] = 1.0
    return indices[bisect.bisect_left(cum, rng.random())]


def pool_to_dict(pool: PolicyPool) -> dict:
    from mles.model import individual_to_dict

    return {
        "capacity": pool.capacity,
        "next_admission": pool.next_admission,
        "entries": [
            {"individual": individual_to_dict(e.individual), "admission_index": e.admission_index}
            for e in pool.entries
        ],
    }


def pool_from_dict(d: dict) -> PolicyPool:
    from mles.model import individual_from_dict

    entries = tuple(
        _Entry(individual_from_dict(e["individual"]), int(e["admission_index"]))
        for e in d["entries"]
    )
    return PolicyPool(
        capacity=int(d["capacity"]),
        entries=entries,
        next_admission=int(d["next_admission"]),
    )
