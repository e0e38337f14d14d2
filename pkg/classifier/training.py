import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterator, List, Optional

import numpy as np

from are.estimation import AreConfig, ClassLossTracker, assemble_batch, plan_batch, update_class_losses
from are.planlog import PlanLog, plan_record
from core.exceptions import ConfigurationError
from core.seeding import rng_stream
from queryset.pools import QuerySet, QuerySetConfig, build_query_set
from synthworld.world import Dataset, RelationshipInstance
from .model import SoftmaxModel, batch_arrays, cross_entropy, forward, gradient_from_probs, sgd_step

logger = logging.getLogger(__name__)

SAMPLERS = ('baseline', 'are', 'balanced', 'full')


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    sampler: str = 'baseline'
    are: AreConfig = field(default_factory=AreConfig)
    queryset: QuerySetConfig = field(default_factory=QuerySetConfig)
    seed: int = 0
    # None evaluates both with and without the background column
    mask_background_in_eval: Optional[bool] = None

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"sampler must be one of {SAMPLERS}, got '{self.sampler}'")
        if self.sampler == 'are':
            self.are.validate()

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['are'] = self.are.to_dict()
        payload['queryset'] = self.queryset.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> 'TrainConfig':
        payload = dict(payload or {})
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
        payload['are'] = AreConfig.from_dict(payload.get('are'))
        payload['queryset'] = QuerySetConfig.from_dict(payload.get('queryset'))
        return cls(**payload)


@dataclass
class History:
    batch_losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)
    plans: List[Dict] = field(default_factory=list)
    # Foreground label counts of every batch actually trained on
    class_counts: List[List[int]] = field(default_factory=list)
    added_counts: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def scene_batches(ds: Dataset, batch_size: int, rng: np.random.Generator) -> List[List[RelationshipInstance]]:
    """Scenes in shuffled order, instances scene-contiguous, cut every batch_size; the tail batch is kept."""
    order = rng.permutation(len(ds.scenes))
    stream = [i for s in order for i in ds.scenes[s].instances]
    return [stream[start:start + batch_size] for start in range(0, len(stream), batch_size)]


def balanced_batches(ds: Dataset, batch_size: int, rng: np.random.Generator) -> List[List[RelationshipInstance]]:
    """Equal count per present label in every batch, cycling each label's shuffled instances."""
    labels = sorted({i.relation_label for i in ds.instances})
    per_label = max(1, batch_size // len(labels))
    n_batches = math.ceil(len(ds) / batch_size)

    def cycle(items) -> Iterator[RelationshipInstance]:
        while True:
            for index in rng.permutation(len(items)):
                yield items[index]

    streams = {k: cycle(ds.instances_of_class(k)) for k in labels}
    return [[next(streams[k]) for k in labels for _ in range(per_label)] for _ in range(n_batches)]


def training_accuracy(model: SoftmaxModel, ds: Dataset) -> float:
    predictions = np.argmax(forward(model, ds.features), axis=1)
    return float(np.mean(predictions == ds.labels))


def train(ds: Dataset, cfg: TrainConfig, query_set: Optional[QuerySet] = None,
          plan_log: Optional[PlanLog] = None, model: Optional[SoftmaxModel] = None):
    """
    Train a softmax classifier on ds. With the 'are' sampler every batch is
    recomposed from the losses of the batches before it.

    Returns (model, history).
    """
    cfg.validate()
    if cfg.batch_size > len(ds):
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds the {len(ds)} training instances")
    K = ds.num_classes
    model = model or SoftmaxModel.zeros(K, ds.config.feature_dim)
    shuffling = rng_stream(cfg.seed, 'shuffling')
    sampling = rng_stream(cfg.seed, 'sampling')
    history = History()

    tracker = None
    if cfg.sampler == 'are':
        query_set = query_set or build_query_set(ds, cfg.queryset)
        tracker = ClassLossTracker.fresh(query_set.classes, K, cfg.are.loss_init)

    for epoch in range(cfg.epochs):
        if cfg.sampler == 'full':
            batches = [list(ds.instances)]
        elif cfg.sampler == 'balanced':
            batches = balanced_batches(ds, cfg.batch_size, shuffling)
        else:
            batches = scene_batches(ds, cfg.batch_size, shuffling)

        epoch_losses = []
        for b, batch in enumerate(batches):
            added = 0
            if tracker is not None:
                fg_in_batch = sum(1 for i in batch if i.relation_label < K)
                plan = plan_batch(tracker, query_set, cfg.are, fg_in_batch)
                record = plan_log.record(epoch, b, plan) if plan_log else plan_record(epoch, b, plan)
                history.plans.append(record)
                augmented = assemble_batch(batch, plan, query_set, cfg.are, sampling, model=model)
                batch = list(augmented.instances)
                added = augmented.count('added')
            if not batch:
                logger.debug("epoch %d batch %d is empty after composition, skipped", epoch, b)
                continue

            features, labels = batch_arrays(batch)
            probs = forward(model, features)
            losses, batch_loss = cross_entropy(probs, labels)
            if tracker is not None:
                update_class_losses(tracker, zip(labels.tolist(), losses.tolist()))
            sgd_step(model, gradient_from_probs(features, labels, probs), cfg.learning_rate)

            history.batch_losses.append(batch_loss)
            history.class_counts.append(np.bincount(labels, minlength=K + 1)[:K].tolist())
            history.added_counts.append(added)
            epoch_losses.append(batch_loss)

        history.epoch_losses.append(float(np.mean(epoch_losses)) if epoch_losses else float('nan'))
        history.epoch_accuracy.append(training_accuracy(model, ds))
        logger.info("epoch %d/%d (%s): loss %.4f, train accuracy %.3f", epoch + 1, cfg.epochs, cfg.sampler,
                    history.epoch_losses[-1], history.epoch_accuracy[-1])
    return model, history
