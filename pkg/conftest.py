import numpy as np
import pytest

from synthworld.world import ConfounderConfig, SynthConfig, build_dataset, generate_world


TINY = dict(
    num_relation_classes=4,
    num_object_classes=5,
    feature_dim=6,
    num_scenes=30,
    test_scenes=15,
    relations_per_scene=(4, 8),
    background_fraction=0.5,
    cluster_width=2,
    pairs_per_class=3,
    seed=7,
)


@pytest.fixture
def tiny_config():
    return SynthConfig(**TINY)


@pytest.fixture
def tiny_world(tiny_config):
    return generate_world(tiny_config, 'train')


@pytest.fixture
def tiny_test_world(tiny_config):
    return generate_world(tiny_config, 'test')


@pytest.fixture
def hand_config():
    """Three relation classes in two dimensions, no confounding."""
    return SynthConfig(
        num_relation_classes=3,
        num_object_classes=4,
        feature_dim=2,
        confounder=ConfounderConfig(a1=0.0, a2=0.0),
        seed=1,
    )


def make_dataset(config, scenes):
    """
    Build a dataset from {scene_id: [(label, (subj, obj)), ...]} with
    features derived from the label so rows are distinguishable.
    """
    rows = []
    for scene_id, entries in scenes.items():
        for position, (label, pair) in enumerate(entries):
            feature = np.full(config.feature_dim, float(label)) + 0.01 * position
            rows.append((scene_id, pair[0], pair[1], label, feature))
    return build_dataset(config, rows)


@pytest.fixture
def dataset_factory():
    return make_dataset


# Experiment-level overrides that shrink any shipped config to a seconds-long run
SMALL_OVERRIDES = [
    'synth.num_relation_classes=4',
    'synth.num_object_classes=5',
    'synth.feature_dim=6',
    'synth.num_scenes=20',
    'synth.test_scenes=10',
    'synth.relations_per_scene=[4, 8]',
    'synth.background_fraction=0.5',
    'synth.cluster_width=2',
    'synth.pairs_per_class=3',
    'queryset.selection_mode=explicit_k',
    'queryset.k_prime=1',
    'train.sampler=are',
    'train.epochs=2',
    'train.batch_size=16',
    'train.are.lambda=0.5',
    'train.are.pi=1.0',
]


@pytest.fixture
def small_experiment():
    from harness.config import load_experiment_config
    return load_experiment_config(None, SMALL_OVERRIDES)
