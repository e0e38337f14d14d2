"""
Synthetic scene-graph world.

Scenes play the role of images: each scene draws a latent co-occurrence
cluster and a confounder value Z, then emits relationship instances whose
features are class mean + a1 * Z * u + Gaussian noise (foreground) or a wide
zero-mean Gaussian (background). Relation labels follow a Zipf (or explicit)
prior so the label distribution is long-tailed; object pairs inside each
relation class follow their own Zipf law.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property, lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigurationError, DataError, InputError
from core.seeding import rng_stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfounderConfig:
    """Scalar confounder model X = a1*Z + eps1, Y = a2*Z + eps2 with E[Z] = 0."""
    a1: float = 1.0
    a2: float = 1.0
    var_z: float = 1.0
    var_eps1: float = 1.0
    var_eps2: float = 1.0

    def validate(self):
        for name in ('var_z', 'var_eps1', 'var_eps2'):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"confounder.{name} must be a finite nonnegative number, got {value}")


@dataclass(frozen=True)
class SynthConfig:
    num_relation_classes: int = 10
    num_object_classes: int = 12
    feature_dim: int = 16
    zipf_exponent: float = 1.0
    pair_zipf_exponent: float = 1.0
    cooccurrence_strength: float = 0.8
    confounder: ConfounderConfig = field(default_factory=ConfounderConfig)
    num_scenes: int = 400
    relations_per_scene: Tuple[int, int] = (10, 40)
    background_fraction: float = 0.7
    class_mean_separation: float = 3.0
    class_noise_std: float = 1.0
    seed: int = 0
    # Width of the contiguous class blocks that form co-occurrence clusters
    cluster_width: int = 3
    pairs_per_class: int = 6
    background_std: float = 3.0
    test_scenes: int = 200
    # Explicit relative class frequencies; overrides zipf_exponent when set
    class_weights: Optional[Tuple[float, ...]] = None

    def validate(self):
        K = self.num_relation_classes
        if K < 1:
            raise ConfigurationError("num_relation_classes must be positive")
        if self.num_object_classes < 1:
            raise ConfigurationError("num_object_classes must be positive")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        if self.num_scenes < 1 or self.test_scenes < 1:
            raise ConfigurationError("num_scenes and test_scenes must be positive")
        lo, hi = self.relations_per_scene
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"relations_per_scene must be a nonempty positive range, got {self.relations_per_scene}")
        if self.zipf_exponent < 0 or self.pair_zipf_exponent < 0:
            raise ConfigurationError("Zipf exponents must be nonnegative")
        if not 0.0 <= self.cooccurrence_strength <= 1.0:
            raise ConfigurationError("cooccurrence_strength must lie in [0, 1]")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ConfigurationError("background_fraction must lie in [0, 1)")
        if self.class_mean_separation <= 0 or self.class_noise_std <= 0 or self.background_std <= 0:
            raise ConfigurationError("separation and noise scales must be positive")
        if self.cluster_width < 1 or self.pairs_per_class < 1:
            raise ConfigurationError("cluster_width and pairs_per_class must be positive")
        if self.class_weights is not None:
            if len(self.class_weights) != K:
                raise ConfigurationError(f"class_weights needs {K} entries, got {len(self.class_weights)}")
            if min(self.class_weights) < 0 or sum(self.class_weights) <= 0:
                raise ConfigurationError("class_weights must be nonnegative with a positive sum")
        self.confounder.validate()

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['relations_per_scene'] = list(self.relations_per_scene)
        if self.class_weights is not None:
            payload['class_weights'] = list(self.class_weights)
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> 'SynthConfig':
        payload = dict(payload or {})
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f"unknown synth keys: {sorted(unknown)}")
        confounder = payload.pop('confounder', None) or {}
        unknown = set(confounder) - {f.name for f in fields(ConfounderConfig)}
        if unknown:
            raise ConfigurationError(f"unknown confounder keys: {sorted(unknown)}")
        if 'relations_per_scene' in payload:
            payload['relations_per_scene'] = tuple(int(v) for v in payload['relations_per_scene'])
        if payload.get('class_weights') is not None:
            payload['class_weights'] = tuple(float(v) for v in payload['class_weights'])
        return cls(confounder=ConfounderConfig(**confounder), **payload)


@dataclass(frozen=True, eq=False)
class RelationshipInstance:
    instance_id: int
    scene_id: int
    subject_class: int
    object_class: int
    relation_label: int
    feature: np.ndarray

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.subject_class, self.object_class)

    def is_background(self, num_classes: int) -> bool:
        return self.relation_label == num_classes


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: int
    cluster_id: int
    instances: Tuple[RelationshipInstance, ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable collection of scenes. Instance ids equal row positions in
    `features`, so batches can be turned into arrays by indexing.
    """
    scenes: Tuple[Scene, ...]
    config: SynthConfig
    split: str = 'train'

    def __post_init__(self):
        for position, instance in enumerate(self.instances):
            if instance.instance_id != position:
                raise DataError(f"instance ids must be consecutive, found {instance.instance_id} at {position}")
        for scene in self.scenes:
            if not scene.instances:
                raise DataError(f"scene {scene.scene_id} has no instances")
            if any(i.scene_id != scene.scene_id for i in scene.instances):
                raise DataError(f"scene {scene.scene_id} holds instances of another scene")

    @property
    def num_classes(self) -> int:
        return self.config.num_relation_classes

    @property
    def background_label(self) -> int:
        return self.config.num_relation_classes

    @cached_property
    def instances(self) -> Tuple[RelationshipInstance, ...]:
        return tuple(i for scene in self.scenes for i in scene.instances)

    @cached_property
    def features(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, self.config.feature_dim))
        matrix = np.vstack([i.feature for i in self.instances])
        matrix.flags.writeable = False
        return matrix

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([i.relation_label for i in self.instances], dtype=np.int64)

    @cached_property
    def scene_index(self) -> np.ndarray:
        return np.array([i.scene_id for i in self.instances], dtype=np.int64)

    @cached_property
    def foreground_count(self) -> int:
        return int(np.sum(self.labels < self.num_classes))

    @cached_property
    def _by_class(self) -> Dict[int, Tuple[RelationshipInstance, ...]]:
        grouped: Dict[int, List[RelationshipInstance]] = {}
        for instance in self.instances:
            grouped.setdefault(instance.relation_label, []).append(instance)
        return {k: tuple(v) for k, v in grouped.items()}

    def instances_of_class(self, label: int) -> Tuple[RelationshipInstance, ...]:
        return self._by_class.get(label, ())

    def __len__(self):
        return len(self.instances)


def build_dataset(config: SynthConfig, rows: Iterable[Sequence], split: str = 'train',
                  scene_clusters: Optional[Dict[int, int]] = None) -> Dataset:
    """
    Assemble a Dataset from (scene_id, subject, object, label, feature) rows.

    Rows must be grouped by scene; ids are assigned in row order.
    """
    scene_clusters = scene_clusters or {}
    grouped: Dict[int, List[RelationshipInstance]] = {}
    order: List[int] = []
    next_id = 0
    for scene_id, subj, obj, label, feature in rows:
        scene_id = int(scene_id)
        if scene_id not in grouped:
            grouped[scene_id] = []
            order.append(scene_id)
        elif order[-1] != scene_id:
            raise DataError(f"rows of scene {scene_id} are not contiguous")
        vector = np.asarray(feature, dtype=np.float64)
        if vector.shape != (config.feature_dim,):
            raise DataError(f"feature length {vector.shape} does not match feature_dim {config.feature_dim}")
        if not 0 <= int(label) <= config.num_relation_classes:
            raise DataError(f"relation label {label} outside [0, {config.num_relation_classes}]")
        vector.flags.writeable = False
        grouped[scene_id].append(RelationshipInstance(
            instance_id=next_id,
            scene_id=scene_id,
            subject_class=int(subj),
            object_class=int(obj),
            relation_label=int(label),
            feature=vector,
        ))
        next_id += 1
    scenes = tuple(
        Scene(scene_id=sid, cluster_id=int(scene_clusters.get(sid, -1)), instances=tuple(grouped[sid]))
        for sid in order
    )
    return Dataset(scenes=scenes, config=config, split=split)


def class_priors(cfg: SynthConfig) -> np.ndarray:
    """Relation-class prior: explicit weights when given, else Zipf over class index."""
    if cfg.class_weights is not None:
        weights = np.asarray(cfg.class_weights, dtype=np.float64)
    else:
        ranks = np.arange(1, cfg.num_relation_classes + 1, dtype=np.float64)
        weights = ranks ** (-cfg.zipf_exponent)
    return weights / weights.sum()


def cluster_blocks(cfg: SynthConfig) -> List[np.ndarray]:
    K, width = cfg.num_relation_classes, cfg.cluster_width
    return [np.arange(start, min(start + width, K)) for start in range(0, K, width)]


@dataclass(frozen=True, eq=False)
class WorldParameters:
    """Generative parameters shared by every split of one config."""
    means: np.ndarray
    direction: np.ndarray
    pair_tables: Tuple[np.ndarray, ...]
    pair_probs: Tuple[np.ndarray, ...]


def _class_means(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    K, d = cfg.num_relation_classes, cfg.feature_dim
    raw = rng.normal(size=(d, K))
    if d >= K:
        basis, _ = np.linalg.qr(raw)
        directions = basis[:, :K].T
    else:
        directions = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return cfg.class_mean_separation * directions


@lru_cache(maxsize=32)
def world_parameters(cfg: SynthConfig) -> WorldParameters:
    rng = rng_stream(cfg.seed, 'world')
    means = _class_means(cfg, rng)
    direction = rng.normal(size=cfg.feature_dim)
    direction /= np.linalg.norm(direction)
    n_objects = cfg.num_object_classes
    n_pairs = min(cfg.pairs_per_class, n_objects * n_objects)
    ranks = np.arange(1, n_pairs + 1, dtype=np.float64) ** (-cfg.pair_zipf_exponent)
    tables, probs = [], []
    for _ in range(cfg.num_relation_classes):
        flat = rng.choice(n_objects * n_objects, size=n_pairs, replace=False)
        tables.append(np.stack([flat // n_objects, flat % n_objects], axis=1))
        probs.append(ranks / ranks.sum())
    for array in [means, direction, *tables]:
        array.flags.writeable = False
    return WorldParameters(means=means, direction=direction, pair_tables=tuple(tables), pair_probs=tuple(probs))


def feature_covariance(cfg: SynthConfig) -> np.ndarray:
    """Shared foreground covariance: sigma^2 I + a1^2 var_z u u^T."""
    u = world_parameters(cfg).direction
    conf = cfg.confounder
    return (cfg.class_noise_std ** 2) * np.eye(cfg.feature_dim) + (conf.a1 ** 2) * conf.var_z * np.outer(u, u)


def generate_world(cfg: SynthConfig, split: str = 'train') -> Dataset:
    """
    Generate one split of the world. Deterministic in (cfg, split).
    """
    cfg.validate()
    if split not in ('train', 'test'):
        raise ConfigurationError(f"split must be 'train' or 'test', got '{split}'")
    params = world_parameters(cfg)
    rng = rng_stream(cfg.seed, 'generation' if split == 'train' else 'test_generation')
    K, d = cfg.num_relation_classes, cfg.feature_dim
    priors = class_priors(cfg)
    blocks = cluster_blocks(cfg)
    block_mass = np.array([priors[b].sum() for b in blocks])
    if block_mass.sum() <= 0:
        raise ConfigurationError("class prior has no mass")
    block_mass = block_mass / block_mass.sum()
    lo, hi = cfg.relations_per_scene
    z_scale = math.sqrt(cfg.confounder.var_z)
    n_scenes = cfg.num_scenes if split == 'train' else cfg.test_scenes

    rows = []
    scene_clusters = {}
    for scene_id in range(n_scenes):
        cluster = int(rng.choice(len(blocks), p=block_mass))
        scene_clusters[scene_id] = cluster
        n_rel = int(rng.integers(lo, hi + 1))
        z = rng.normal(0.0, z_scale)
        is_background = rng.random(n_rel) < cfg.background_fraction
        from_cluster = rng.random(n_rel) < cfg.cooccurrence_strength
        block = blocks[cluster]
        block_prior = priors[block]
        for j in range(n_rel):
            if is_background[j]:
                subj, obj = rng.integers(0, cfg.num_object_classes, size=2)
                feature = rng.normal(0.0, cfg.background_std, size=d)
                rows.append((scene_id, int(subj), int(obj), K, feature))
                continue
            if from_cluster[j] and block_prior.sum() > 0:
                label = int(block[rng.choice(len(block), p=block_prior / block_prior.sum())])
            else:
                label = int(rng.choice(K, p=priors))
            table = params.pair_tables[label]
            subj, obj = table[rng.choice(len(table), p=params.pair_probs[label])]
            noise = rng.normal(0.0, cfg.class_noise_std, size=d)
            feature = params.means[label] + cfg.confounder.a1 * z * params.direction + noise
            rows.append((scene_id, int(subj), int(obj), label, feature))

    dataset = build_dataset(cfg, rows, split=split, scene_clusters=scene_clusters)
    if dataset.foreground_count == 0:
        raise DataError("generated world holds no foreground relationships")
    logger.info("generated %s world: %d scenes, %d instances (%d foreground)",
                split, len(dataset.scenes), len(dataset), dataset.foreground_count)
    return dataset


def relation_histogram(ds: Dataset) -> np.ndarray:
    """Counts per relation label; index K is background."""
    return np.bincount(ds.labels, minlength=ds.num_classes + 1)[: ds.num_classes + 1]


def cooccurrence_matrix(ds: Dataset) -> np.ndarray:
    """
    K x K symmetric matrix. Off-diagonal (i, j): scenes holding both classes.
    Diagonal (i, i): scenes holding class i at least twice.
    """
    K = ds.num_classes
    matrix = np.zeros((K, K), dtype=np.int64)
    for scene in ds.scenes:
        labels = [i.relation_label for i in scene.instances if i.relation_label < K]
        if not labels:
            continue
        counts = np.bincount(labels, minlength=K)
        present = (counts > 0).astype(np.int64)
        pairs = np.outer(present, present)
        np.fill_diagonal(pairs, (counts >= 2).astype(np.int64))
        matrix += pairs
    return matrix


def scene_feature_correlation(ds: Dataset) -> Tuple[float, float]:
    """
    Correlation of foreground feature projections on the confounder direction
    for same-scene pairs versus pairs taken from consecutive scenes.
    """
    u = world_parameters(ds.config).direction
    K = ds.num_classes
    per_scene = []
    for scene in ds.scenes:
        values = [float(i.feature @ u) for i in scene.instances if i.relation_label < K]
        if values:
            per_scene.append(np.array(values))
    if len(per_scene) < 2:
        raise InputError("need at least two scenes with foreground relations")
    within_a, within_b, across_a, across_b = [], [], [], []
    for values in per_scene:
        rows, cols = np.triu_indices(len(values), k=1)
        within_a.extend(values[rows])
        within_b.extend(values[cols])
    for left, right in zip(per_scene[:-1], per_scene[1:]):
        n = min(len(left), len(right))
        across_a.extend(left[:n])
        across_b.extend(right[:n])
    if len(within_a) < 2:
        raise InputError("scenes hold too few foreground relations for a within-scene estimate")
    within = float(np.corrcoef(within_a, within_b)[0, 1])
    across = float(np.corrcoef(across_a, across_b)[0, 1])
    return within, across
