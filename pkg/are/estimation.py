"""
Active Reverse Estimation.

Losses observed on batch b decide how batch b+1 is composed: tail classes
with high loss get more instances drawn from the query set, and background
is trimmed to a fixed ratio against the foreground.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from core.exceptions import ConfigurationError, InputError, NumericError
from mis.kernels import resolve_kernel, sample
from queryset.pools import QuerySet
from synthworld.world import RelationshipInstance

logger = logging.getLogger(__name__)

# Guards half-up rounding against products like 0.49999999999999994
ROUNDING_SLACK = 1e-9

ORIGINAL = 'original'
ADDED = 'added'
RETAINED_BG = 'retained_bg'


@dataclass(frozen=True)
class AreConfig:
    alpha: float = 0.2
    lam: float = 0.01
    pi: float = 3.0
    kernel: str = 'mis'
    # None means ln K, the loss of a uniform prediction
    loss_init: Optional[float] = None
    bg_kernel: str = 'rnd'
    intervene_foreground: bool = True
    intervene_background: bool = True

    def validate(self):
        for name in ('alpha', 'lam'):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"are.{name} must be a finite nonnegative number, got {value}")
        if math.isnan(self.pi) or self.pi < 0:
            raise ConfigurationError(f"are.pi must be nonnegative, got {self.pi}")
        resolve_kernel(self.kernel)
        if resolve_kernel(self.bg_kernel) not in ('rnd', 'mis'):
            raise ConfigurationError(f"are.bg_kernel must be 'rnd' or 'mis', got '{self.bg_kernel}'")
        if self.loss_init is not None and not math.isfinite(self.loss_init):
            raise ConfigurationError("are.loss_init must be finite")

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['lambda'] = payload.pop('lam')
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> 'AreConfig':
        payload = dict(payload or {})
        if 'lambda' in payload:
            payload['lam'] = payload.pop('lambda')
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown are keys: {sorted(unknown)}")
        if 'pi' in payload:
            payload['pi'] = float(payload['pi'])
        return cls(**payload)


@dataclass
class ClassLossTracker:
    losses: Dict[int, float]
    observed: Dict[int, bool] = field(default_factory=dict)

    @classmethod
    def fresh(cls, classes: Sequence[int], num_classes: int, loss_init: Optional[float] = None) -> 'ClassLossTracker':
        start = math.log(num_classes) if loss_init is None else float(loss_init)
        return cls(losses={int(k): start for k in classes}, observed={int(k): False for k in classes})

    @property
    def classes(self) -> List[int]:
        return sorted(self.losses)

    def vector(self) -> np.ndarray:
        return np.array([self.losses[k] for k in self.classes], dtype=np.float64)


def update_class_losses(tracker: ClassLossTracker, batch_eval: Iterable[Tuple[int, float]]):
    """Set each tracked class present in the batch to its mean loss there."""
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    for cls, loss in batch_eval:
        loss = float(loss)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} for class {cls}")
        cls = int(cls)
        if cls in tracker.losses:
            sums[cls] = sums.get(cls, 0.0) + loss
            counts[cls] = counts.get(cls, 0) + 1
    for cls, total in sums.items():
        tracker.losses[cls] = total / counts[cls]
        tracker.observed[cls] = True


def query_distribution(tracker: ClassLossTracker, alpha: float) -> np.ndarray:
    """Softmax of -alpha * loss over the tracked classes, in class order."""
    if not math.isfinite(alpha) or alpha < 0:
        raise ConfigurationError(f"alpha must be a finite nonnegative number, got {alpha}")
    losses = tracker.vector()
    if losses.size == 0:
        return losses
    return softmax(-alpha * losses)


def _round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5 + ROUNDING_SLACK).astype(np.int64)


def sampling_sizes(probs: Sequence[float], lam: float, pool_sizes: Sequence[int]) -> np.ndarray:
    if not math.isfinite(lam) or lam < 0:
        raise ConfigurationError(f"lambda must be a finite nonnegative number, got {lam}")
    probs = np.asarray(probs, dtype=np.float64)
    sizes = np.asarray(pool_sizes, dtype=np.float64)
    if probs.shape != sizes.shape:
        raise InputError("probabilities and pool sizes must align")
    return _round_half_up(lam * probs * sizes)


def background_budget(plan_counts: Iterable[int], fg_count: int, pi: float) -> Optional[int]:
    """pi times the foreground the batch will hold; None when pi is unbounded."""
    if math.isinf(pi):
        return None
    total = int(sum(plan_counts)) + int(fg_count)
    return int(_round_half_up(pi * total))


def retain_background(bg_instances: Sequence[RelationshipInstance], budget: Optional[int],
                      rng: np.random.Generator, kernel: str = 'rnd') -> List[RelationshipInstance]:
    if budget is None or budget >= len(bg_instances):
        return list(bg_instances)
    if budget <= 0:
        return []
    if resolve_kernel(kernel) == 'mis':
        keep_ids = {i.instance_id for i in sample('mis', bg_instances, budget, rng)}
        return [i for i in bg_instances if i.instance_id in keep_ids]
    keep = np.sort(rng.choice(len(bg_instances), size=budget, replace=False))
    return [bg_instances[i] for i in keep]


@dataclass
class SamplingPlan:
    add_counts: Dict[int, int]
    bg_budget: Optional[int]
    fg_in_batch: int
    losses: Dict[int, float] = field(default_factory=dict)
    probs: Dict[int, float] = field(default_factory=dict)

    @property
    def total_added(self) -> int:
        return int(sum(self.add_counts.values()))


def plan_batch(tracker: ClassLossTracker, qs: QuerySet, cfg: AreConfig, fg_in_batch: int) -> SamplingPlan:
    """Composition plan for the next batch from the losses observed so far."""
    classes = tracker.classes
    probs = query_distribution(tracker, cfg.alpha)
    if cfg.intervene_foreground:
        pool_sizes = qs.pool_sizes
        counts = sampling_sizes(probs, cfg.lam, [pool_sizes[k] for k in classes])
    else:
        counts = np.zeros(len(classes), dtype=np.int64)
    add_counts = {k: int(n) for k, n in zip(classes, counts)}
    pi = cfg.pi if cfg.intervene_background else math.inf
    plan = SamplingPlan(
        add_counts=add_counts,
        bg_budget=background_budget(add_counts.values(), fg_in_batch, pi),
        fg_in_batch=int(fg_in_batch),
        losses=dict(tracker.losses),
        probs={k: float(p) for k, p in zip(classes, probs)},
    )
    logger.debug("plan: add=%s bg_budget=%s fg=%d", plan.add_counts, plan.bg_budget, plan.fg_in_batch)
    return plan


@dataclass(frozen=True)
class AugmentedBatch:
    instances: Tuple[RelationshipInstance, ...]
    provenance: Tuple[str, ...]

    def count(self, tag: str) -> int:
        return sum(1 for p in self.provenance if p == tag)

    def foreground(self, num_classes: int) -> List[RelationshipInstance]:
        return [i for i in self.instances if i.relation_label < num_classes]

    def background(self, num_classes: int) -> List[RelationshipInstance]:
        return [i for i in self.instances if i.relation_label >= num_classes]

    def class_counts(self, num_classes: int) -> np.ndarray:
        labels = [i.relation_label for i in self.instances]
        return np.bincount(labels, minlength=num_classes + 1)[: num_classes + 1]

    def __len__(self):
        return len(self.instances)


def assemble_batch(base_batch: Sequence[RelationshipInstance], plan: SamplingPlan, qs: QuerySet,
                   cfg: AreConfig, rng: np.random.Generator, model=None) -> AugmentedBatch:
    """
    Retained background plus every original foreground instance plus the
    instances drawn from the query set. Base order is kept; additions go last.
    """
    K = qs.dataset.num_classes
    added: List[RelationshipInstance] = []
    for cls in sorted(plan.add_counts):
        n = plan.add_counts[cls]
        if n > 0:
            added.extend(qs.draw(cls, n, cfg.kernel, rng, model=model))

    background = [i for i in base_batch if i.relation_label >= K]
    kept_bg = {i.instance_id for i in retain_background(background, plan.bg_budget, rng, cfg.bg_kernel)}

    instances, provenance = [], []
    for instance in base_batch:
        if instance.relation_label < K:
            instances.append(instance)
            provenance.append(ORIGINAL)
        elif instance.instance_id in kept_bg:
            instances.append(instance)
            provenance.append(RETAINED_BG)
    instances.extend(added)
    provenance.extend([ADDED] * len(added))
    return AugmentedBatch(instances=tuple(instances), provenance=tuple(provenance))


def batch_class_cv(per_batch_counts: Iterable[Sequence[int]]) -> float:
    """
    Mean over batches of the coefficient of variation of foreground class
    counts. Batches without foreground are skipped.
    """
    values = []
    for counts in per_batch_counts:
        counts = np.asarray(counts, dtype=np.float64)
        mean = counts.mean() if counts.size else 0.0
        if mean > 0:
            values.append(counts.std() / mean)
    if not values:
        raise InputError("no batch held foreground instances")
    return float(np.mean(values))
