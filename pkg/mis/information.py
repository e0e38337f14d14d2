"""
Object-pair information measures for one relation class.

Entropies are plug-in estimates in nats over pair frequencies. A selection
shares information with its pool through the pair types it covers: the
mutual information is the entropy of the pool seen with each covered type
kept apart and every uncovered type lumped together. It is 0 for an empty
selection and reaches the pool entropy once every type is covered.
"""
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.stats import entropy

from core.exceptions import InputError, OracleScaleError
from synthworld.world import RelationshipInstance

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]

MAX_ORACLE_SAMPLES = 64
MAX_ORACLE_PAIR_TYPES = 16


@dataclass(frozen=True, eq=False)
class PairPool:
    instances: Tuple[RelationshipInstance, ...]

    def __post_init__(self):
        labels = {i.relation_label for i in self.instances}
        if len(labels) > 1:
            raise InputError(f"a pair pool holds a single relation class, got {sorted(labels)}")

    @classmethod
    def of(cls, instances: Iterable[RelationshipInstance]) -> 'PairPool':
        return cls(tuple(sorted(instances, key=lambda i: i.instance_id)))

    @cached_property
    def pair_counts(self) -> Counter:
        return Counter(i.pair for i in self.instances)

    @property
    def pair_types(self) -> List[Pair]:
        return sorted(self.pair_counts)

    def __len__(self):
        return len(self.instances)


@dataclass
class InfoReport:
    entropy: float
    conditional_entropy: float
    mutual_information: float
    delta: Dict[Pair, float] = field(default_factory=dict)


def _pairs(selected: Iterable) -> Counter:
    return Counter(item.pair if hasattr(item, 'pair') else tuple(item) for item in selected)


def _remaining_counts(pool: PairPool, selected: Iterable) -> Counter:
    chosen = _pairs(selected)
    remaining = Counter(pool.pair_counts)
    for pair, count in chosen.items():
        if count > remaining.get(pair, 0):
            raise InputError(f"selection takes {count} of pair {pair} but the pool holds {remaining.get(pair, 0)}")
        remaining[pair] -= count
    return +remaining


def _counts_entropy(counts: Iterable[int]) -> float:
    values = np.array([c for c in counts if c > 0], dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(entropy(values))


def pair_entropy(pool: PairPool) -> float:
    if not len(pool):
        raise InputError("entropy of an empty pool is undefined")
    return _counts_entropy(pool.pair_counts.values())


def _covered(pool: PairPool, selected: Sequence) -> set:
    _remaining_counts(pool, selected)
    return set(_pairs(selected))


def conditional_entropy(pool: PairPool, selected: Sequence) -> float:
    """
    Entropy left in the pool pairs the selection does not represent: the mass
    of the uncovered pair types times the entropy among them. Removing the
    selected instances leaves the uncovered counts untouched, so the inner
    distribution is the same before and after removal.
    """
    if not len(pool):
        raise InputError("entropy of an empty pool is undefined")
    covered = _covered(pool, selected)
    uncovered = [c for pair, c in pool.pair_counts.items() if pair not in covered]
    return sum(uncovered) / len(pool) * _counts_entropy(uncovered)


def mutual_information(pool: PairPool, selected: Sequence) -> float:
    return pair_entropy(pool) - conditional_entropy(pool, selected)


def _coverage_entropy(pool: PairPool, covered: set) -> float:
    """Entropy of the pool with every covered type kept apart and the rest lumped together."""
    kept = [c for pair, c in pool.pair_counts.items() if pair in covered]
    return _counts_entropy(kept + [len(pool) - sum(kept)])


def information_gain(pool: PairPool, selected: Sequence, candidate: Pair) -> float:
    """Exact increase in mutual_information from adding one instance of `candidate`."""
    candidate = tuple(candidate)
    if candidate not in pool.pair_counts:
        raise InputError(f"pair {candidate} does not occur in the pool")
    covered = _covered(pool, selected)
    if candidate in covered:
        return 0.0
    return _coverage_entropy(pool, covered | {candidate}) - _coverage_entropy(pool, covered)


def _pointwise_term(counts: Counter, pair: Pair) -> float:
    """p(mu,nu) * log(p(mu,nu) / (p(mu) p(nu))) under the frequencies in `counts`; 0 when undefined."""
    total = sum(counts.values())
    joint = counts.get(pair, 0)
    if total == 0 or joint == 0:
        return 0.0
    subject_mass = sum(c for (s, _), c in counts.items() if s == pair[0])
    object_mass = sum(c for (_, o), c in counts.items() if o == pair[1])
    p_joint = joint / total
    return p_joint * math.log(p_joint / ((subject_mass / total) * (object_mass / total)))


def delta_information(pool: PairPool, selected: Sequence, candidate: Pair) -> float:
    """
    Estimated gain of adding `candidate`: the pointwise dependence term under
    the remaining pool frequencies plus the same term under the selection's
    frequencies. Reported alongside the exact `information_gain`; for pools
    where each subject class forms a single pair it ranks types by p log(1/p)
    rather than by how much they split the pool.
    """
    candidate = tuple(candidate)
    if candidate not in pool.pair_counts:
        raise InputError(f"pair {candidate} does not occur in the pool")
    remaining = _remaining_counts(pool, selected)
    return _pointwise_term(remaining, candidate) + _pointwise_term(_pairs(selected), candidate)


def info_report(pool: PairPool, selected: Sequence) -> InfoReport:
    h = pair_entropy(pool)
    h_cond = conditional_entropy(pool, selected)
    return InfoReport(
        entropy=h,
        conditional_entropy=h_cond,
        mutual_information=h - h_cond,
        delta={pair: delta_information(pool, selected, pair) for pair in pool.pair_types},
    )


def max_mi_sample(pool: PairPool, n: int) -> List[RelationshipInstance]:
    """
    Greedy maximum-mutual-information selection, meant as a reference oracle.

    Each step scores every pair type not yet selected in the current round by
    its exact information gain and takes the lowest-id remaining instance of
    the best one (ties go to the lexicographically smallest pair). A round
    ends when every remaining type has been picked once. The first round
    covers types largest first, which maximizes mutual_information for any n.
    """
    if n < 0:
        raise InputError("sample size must be nonnegative")
    if n > MAX_ORACLE_SAMPLES or len(pool.pair_counts) > MAX_ORACLE_PAIR_TYPES:
        raise OracleScaleError(
            f"max_mi oracle handles n <= {MAX_ORACLE_SAMPLES} and <= {MAX_ORACLE_PAIR_TYPES} pair types, "
            f"got n={n} with {len(pool.pair_counts)} types"
        )
    by_pair: Dict[Pair, List[RelationshipInstance]] = {}
    for instance in pool.instances:
        by_pair.setdefault(instance.pair, []).append(instance)

    selected: List[RelationshipInstance] = []
    picked_this_round: set = set()
    while len(selected) < min(n, len(pool)):
        available = sorted(p for p, items in by_pair.items() if items)
        candidates = [p for p in available if p not in picked_this_round]
        if not candidates:
            picked_this_round.clear()
            candidates = available
        gains = [information_gain(pool, selected, p) for p in candidates]
        best = max(gains)
        choice = next(p for p, g in zip(candidates, gains) if g >= best - 1e-12)
        selected.append(by_pair[choice].pop(0))
        picked_this_round.add(choice)
    return selected


def expected_random_information(pool: PairPool, n: int) -> float:
    """Exact mean mutual information over every size-n subset of the pool."""
    # MI depends only on the pair types a subset covers
    covers = Counter(frozenset(i.pair for i in combo) for combo in itertools.combinations(pool.instances, n))
    if not covers:
        return 0.0
    total = sum(covers.values())
    return float(sum(count * mutual_information(pool, sorted(cover)) for cover, count in covers.items()) / total)


def oracle_pair_types(count: int) -> List[Pair]:
    """Pair vocabulary for small oracle pools; one subject and one object class per type."""
    return [(i, i) for i in range(count)]


def enumerate_oracle_pools(max_types: int = 3, max_count: int = 3, label: int = 0) -> Iterator[PairPool]:
    """Every pool with 1..max_types pair types and 1..max_count instances per type."""
    for n_types in range(1, max_types + 1):
        types = oracle_pair_types(n_types)
        for counts in itertools.product(range(1, max_count + 1), repeat=n_types):
            instances = []
            for pair, count in zip(types, counts):
                for _ in range(count):
                    instances.append(RelationshipInstance(
                        instance_id=len(instances),
                        scene_id=0,
                        subject_class=pair[0],
                        object_class=pair[1],
                        relation_label=label,
                        feature=np.zeros(1),
                    ))
            yield PairPool(tuple(instances))
