"""
Query set Q: per-class pools of foreground instances for the tail classes.

Pools are sampled without replacement and refilled from the full dataset
once a class has been used up. Q lives for the whole training run.
"""
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from core.exceptions import ConfigurationError, DataError, InputError
from mis.kernels import resolve_kernel, sample
from synthworld.world import Dataset, RelationshipInstance, relation_histogram

logger = logging.getLogger(__name__)

SELECTION_MODES = ('fraction', 'explicit_k')


@dataclass(frozen=True)
class QuerySetConfig:
    k_prime: Optional[int] = None
    target_fraction: Optional[float] = 0.2
    selection_mode: str = 'fraction'

    def validate(self, num_classes: int):
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigurationError(f"selection_mode must be one of {SELECTION_MODES}, got '{self.selection_mode}'")
        if self.selection_mode == 'explicit_k':
            if self.k_prime is None or self.k_prime < 1:
                raise ConfigurationError("explicit_k selection needs a positive k_prime")
            if self.k_prime >= num_classes:
                raise ConfigurationError(f"k_prime must be below the class count {num_classes}, got {self.k_prime}")
        else:
            if self.target_fraction is None or not 0.0 < self.target_fraction <= 1.0:
                raise ConfigurationError(f"target_fraction must lie in (0, 1], got {self.target_fraction}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> 'QuerySetConfig':
        payload = dict(payload or {})
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown queryset keys: {sorted(unknown)}")
        return cls(**payload)


def select_tail_classes(counts: Sequence[int], qcfg: QuerySetConfig) -> List[int]:
    """
    Tail classes in ascending frequency (ties by index). Fraction mode takes
    the longest run whose cumulative share of foreground stays within the target.
    """
    counts = np.asarray(counts, dtype=np.int64)
    K = len(counts)
    qcfg.validate(K)
    total = int(counts.sum())
    if total == 0:
        raise DataError("dataset has no foreground instances")
    ordered = [int(k) for k in np.lexsort((np.arange(K), counts)) if counts[k] > 0]

    if qcfg.selection_mode == 'explicit_k':
        if len(ordered) < qcfg.k_prime:
            raise DataError(f"only {len(ordered)} foreground classes present, k_prime={qcfg.k_prime}")
        return sorted(ordered[:qcfg.k_prime])

    chosen: List[int] = []
    covered = 0
    for k in ordered[: K - 1]:
        if (covered + counts[k]) / total > qcfg.target_fraction + 1e-12:
            break
        chosen.append(k)
        covered += int(counts[k])
    if not chosen:
        raise ConfigurationError(
            f"target_fraction {qcfg.target_fraction} is below the share of the rarest class "
            f"({counts[ordered[0]] / total:.4f})"
        )
    return sorted(chosen)


class QuerySet:
    """Remaining pools, consumption counters and replenish cycles per selected class."""

    def __init__(self, ds: Dataset, classes: Sequence[int]):
        self.dataset = ds
        self.classes = [int(k) for k in sorted(classes)]
        self._full: Dict[int, List[RelationshipInstance]] = {
            k: sorted(ds.instances_of_class(k), key=lambda i: i.instance_id) for k in self.classes
        }
        self.pools: Dict[int, List[RelationshipInstance]] = {k: list(v) for k, v in self._full.items()}
        self.consumed: Dict[int, int] = {k: 0 for k in self.classes}
        self.cycles: Dict[int, int] = {k: 0 for k in self.classes}
        self.archive: Dict[int, List[int]] = {k: [] for k in self.classes}

    @property
    def pool_sizes(self) -> Dict[int, int]:
        """|Q_k|: the full size of each class in the dataset."""
        return {k: len(v) for k, v in self._full.items()}

    def remaining(self, cls: int) -> int:
        return len(self._pool(cls))

    def _pool(self, cls: int) -> List[RelationshipInstance]:
        try:
            return self.pools[int(cls)]
        except KeyError:
            raise InputError(f"class {cls} is not in the query set {self.classes}")

    def replenish(self, cls: int):
        pool = self._pool(cls)
        cls = int(cls)
        if len(pool) == len(self._full[cls]):
            logger.warning("replenish on full pool for class %d ignored", cls)
            return
        self.archive[cls].append(self.consumed[cls])
        self.consumed[cls] = 0
        self.cycles[cls] += 1
        self.pools[cls] = list(self._full[cls])
        logger.debug("replenished class %d (cycle %d)", cls, self.cycles[cls])

    def draw(self, cls: int, n: int, kernel: str, rng: np.random.Generator, model=None) -> List[RelationshipInstance]:
        """
        Draw n distinct instances of `cls` without replacement. A draw that
        empties the pool refills it and continues, skipping instances it has
        already taken.
        """
        pool = self._pool(cls)
        cls = int(cls)
        if n < 0:
            raise InputError("draw size must be nonnegative")
        resolve_kernel(kernel)
        if n > len(self._full[cls]):
            logger.warning("draw of %d from class %d capped at class size %d", n, cls, len(self._full[cls]))
            n = len(self._full[cls])

        taken: List[RelationshipInstance] = []
        taken_ids = set()
        while len(taken) < n:
            pool = self.pools[cls]
            available = [i for i in pool if i.instance_id not in taken_ids]
            if not available:
                if pool:
                    break
                self.replenish(cls)
                continue
            picks = sample(kernel, available, n - len(taken), rng, model=model)
            if not picks:
                break
            picked_ids = {i.instance_id for i in picks}
            self.pools[cls] = [i for i in pool if i.instance_id not in picked_ids]
            self.consumed[cls] += len(picks)
            taken.extend(picks)
            taken_ids |= picked_ids
        return taken

    def dump(self) -> Dict:
        return {
            'classes': list(self.classes),
            'remaining': {str(k): [i.instance_id for i in v] for k, v in self.pools.items()},
            'consumed': {str(k): v for k, v in self.consumed.items()},
            'cycles': {str(k): v for k, v in self.cycles.items()},
        }

    @classmethod
    def restore(cls, ds: Dataset, state: Dict) -> 'QuerySet':
        qs = cls(ds, state['classes'])
        for key, ids in state.get('remaining', {}).items():
            k = int(key)
            by_id = {i.instance_id: i for i in qs._full.get(k, [])}
            missing = [i for i in ids if i not in by_id]
            if missing:
                raise DataError(f"query set state names instances {missing[:5]} outside class {k}")
            qs.pools[k] = [by_id[i] for i in sorted(ids)]
        qs.consumed.update({int(k): int(v) for k, v in state.get('consumed', {}).items()})
        qs.cycles.update({int(k): int(v) for k, v in state.get('cycles', {}).items()})
        return qs

    def save(self, path: Union[str, Path]):
        Path(path).write_text(json.dumps(self.dump(), indent=2))

    @classmethod
    def load(cls, ds: Dataset, path: Union[str, Path]) -> 'QuerySet':
        try:
            state = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"unreadable query set state {path}: {exc}") from exc
        return cls.restore(ds, state)


def build_query_set(ds: Dataset, qcfg: QuerySetConfig) -> QuerySet:
    counts = relation_histogram(ds)[: ds.num_classes]
    classes = select_tail_classes(counts, qcfg)
    share = counts[classes].sum() / max(counts.sum(), 1)
    logger.info("query set covers classes %s (%.1f%% of foreground)", classes, 100 * share)
    return QuerySet(ds, classes)
