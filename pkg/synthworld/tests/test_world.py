import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy.stats import binomtest, multivariate_normal

from core.exceptions import ConfigurationError, DataError, InputError
from synthworld.analyzers import BayesOracle, bayes_optimal_predict
from synthworld.storage import load_dataset, save_dataset
from synthworld.world import (
    ConfounderConfig, SynthConfig, build_dataset, class_priors, cooccurrence_matrix, feature_covariance,
    generate_world, relation_histogram, scene_feature_correlation, world_parameters,
)


def test_generation_is_deterministic(tiny_config):
    first = generate_world(tiny_config)
    second = generate_world(tiny_config)
    assert_array_equal(first.features, second.features)
    assert_array_equal(first.labels, second.labels)
    assert [s.cluster_id for s in first.scenes] == [s.cluster_id for s in second.scenes]


def test_train_and_test_splits_differ_but_share_parameters(tiny_config):
    train = generate_world(tiny_config, 'train')
    test = generate_world(tiny_config, 'test')
    assert len(train.scenes) == tiny_config.num_scenes
    assert len(test.scenes) == tiny_config.test_scenes
    assert not np.array_equal(train.features[:5], test.features[:5])


def test_zipf_frequency_ratio():
    cfg = SynthConfig(
        num_relation_classes=5, feature_dim=8, zipf_exponent=1.0, cooccurrence_strength=0.0,
        background_fraction=0.0, relations_per_scene=(10, 10), num_scenes=1000, seed=3,
    )
    counts = relation_histogram(generate_world(cfg))
    assert counts[:5].sum() == 10000
    assert counts[5] == 0
    ratio = counts[0] / counts[4]
    assert 5 * 0.85 <= ratio <= 5 * 1.15


def test_flat_prior_gives_balanced_counts():
    cfg = SynthConfig(
        num_relation_classes=2, feature_dim=4, zipf_exponent=0.0, cooccurrence_strength=0.0,
        background_fraction=0.0, relations_per_scene=(10, 10), num_scenes=200, seed=11,
    )
    counts = relation_histogram(generate_world(cfg))
    n = counts.sum()
    sigma = np.sqrt(n * 0.25)
    assert abs(counts[0] - n / 2) <= 3 * sigma


def test_frequencies_are_long_tailed():
    cfg = SynthConfig(num_relation_classes=6, feature_dim=8, cooccurrence_strength=0.0, num_scenes=600, seed=5)
    counts = relation_histogram(generate_world(cfg))
    assert counts[0] > counts[2] > counts[5]


def test_class_weights_override_zipf():
    cfg = SynthConfig(num_relation_classes=3, class_weights=(100, 10, 1))
    assert np.allclose(class_priors(cfg), np.array([100, 10, 1]) / 111)


def test_histogram_covers_background(tiny_world):
    counts = relation_histogram(tiny_world)
    assert counts.shape == (tiny_world.num_classes + 1,)
    assert counts.sum() == len(tiny_world)
    assert counts[-1] > 0


def test_cooccurrence_on_hand_built_scenes(hand_config, dataset_factory):
    ds = dataset_factory(hand_config, {
        0: [(0, (0, 1)), (1, (1, 2)), (1, (1, 2)), (3, (0, 0))],
        1: [(0, (0, 1)), (2, (2, 3))],
        2: [(3, (1, 1))],
    })
    expected = np.array([
        [0, 1, 1],
        [1, 1, 0],
        [1, 0, 0],
    ])
    assert_array_equal(cooccurrence_matrix(ds), expected)


def test_cooccurrence_is_symmetric(tiny_world):
    matrix = cooccurrence_matrix(tiny_world)
    assert_array_equal(matrix, matrix.T)
    assert (matrix >= 0).all()


def clustered_config(strength, seed=4):
    return SynthConfig(
        num_relation_classes=6, feature_dim=8, zipf_exponent=0.5, cooccurrence_strength=strength,
        background_fraction=0.0, relations_per_scene=(4, 8), num_scenes=200, cluster_width=3, seed=seed,
    )


def split_cluster_mass(matrix, width):
    blocks = np.arange(matrix.shape[0]) // width
    same = blocks[:, None] == blocks[None, :]
    return int(matrix[same].sum()), int(matrix[~same].sum())


def test_full_cooccurrence_keeps_pairs_inside_clusters():
    within, across = split_cluster_mass(cooccurrence_matrix(generate_world(clustered_config(1.0))), 3)
    assert within > across
    assert across == 0
    # Independent draws do mix clusters
    assert split_cluster_mass(cooccurrence_matrix(generate_world(clustered_config(0.0))), 3)[1] > 0


def test_cooccurrence_row_sums_match_scene_contents(tiny_world):
    K = tiny_world.num_classes
    expected = np.zeros(K, dtype=np.int64)
    for scene in tiny_world.scenes:
        labels = [i.relation_label for i in scene.instances if i.relation_label < K]
        for k in set(labels):
            expected[k] += (labels.count(k) >= 2) + len(set(labels) - {k})
    assert_array_equal(cooccurrence_matrix(tiny_world).sum(axis=1), expected)


def test_confounder_couples_scene_features():
    cfg = SynthConfig(
        num_relation_classes=4, feature_dim=6, confounder=ConfounderConfig(a1=3.0),
        cooccurrence_strength=0.0, background_fraction=0.0, num_scenes=150, seed=2,
    )
    within, across = scene_feature_correlation(generate_world(cfg))
    assert within > across + 0.2


def test_confounder_coupling_holds_across_seeds():
    wins = 0
    for seed in range(50):
        cfg = SynthConfig(
            num_relation_classes=4, feature_dim=6, confounder=ConfounderConfig(a1=2.0),
            cooccurrence_strength=0.5, background_fraction=0.0, relations_per_scene=(3, 6),
            num_scenes=60, cluster_width=2, seed=seed,
        )
        within, across = scene_feature_correlation(generate_world(cfg))
        wins += within > across
    assert binomtest(wins, 50, 0.5, alternative='greater').pvalue < 0.01


def test_bayes_oracle_matches_brute_force_density():
    cfg = SynthConfig(num_relation_classes=3, feature_dim=4, seed=9)
    params = world_parameters(cfg)
    cov = feature_covariance(cfg)
    priors = class_priors(cfg)
    features = np.random.default_rng(0).normal(scale=3.0, size=(200, 4))
    brute = np.argmax(np.stack([
        multivariate_normal(params.means[k], cov).logpdf(features) + np.log(priors[k])
        for k in range(3)
    ], axis=1), axis=1)
    assert_array_equal(BayesOracle.predict_many(cfg, features), brute)
    assert bayes_optimal_predict(cfg, features[0]) == brute[0]


def test_bayes_ties_resolve_to_lowest_index():
    scores = np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])
    assert_array_equal(BayesOracle.argmax_with_ties(scores), [1, 0])


def test_bayes_rejects_wrong_dimension():
    cfg = SynthConfig(num_relation_classes=3, feature_dim=4)
    with pytest.raises(InputError):
        bayes_optimal_predict(cfg, np.zeros(5))


@pytest.mark.parametrize('overrides', [
    {'num_relation_classes': 0},
    {'relations_per_scene': (5, 2)},
    {'cooccurrence_strength': 1.5},
    {'background_fraction': 1.0},
    {'class_weights': (1.0, 2.0)},
    {'confounder': ConfounderConfig(var_z=-1.0)},
])
def test_invalid_config_is_rejected(overrides):
    cfg = SynthConfig(**{'num_relation_classes': 4, **overrides})
    with pytest.raises(ConfigurationError):
        generate_world(cfg)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        SynthConfig.from_dict({'num_relation_classes': 3, 'colour': 'red'})


def test_rows_must_be_grouped_by_scene(hand_config, dataset_factory):
    with pytest.raises(DataError):
        build_dataset(hand_config, [
            (0, 0, 1, 0, np.zeros(2)),
            (1, 0, 1, 1, np.zeros(2)),
            (0, 0, 1, 2, np.zeros(2)),
        ])


def test_saved_world_loads_identically(tiny_world, tmp_path):
    path = save_dataset(tiny_world, tmp_path / 'train.jsonl')
    loaded = load_dataset(path)
    assert loaded.config == tiny_world.config
    assert_array_equal(loaded.features, tiny_world.features)
    assert_array_equal(loaded.labels, tiny_world.labels)
    assert [s.cluster_id for s in loaded.scenes] == [s.cluster_id for s in tiny_world.scenes]


def test_load_reports_malformed_lines(tiny_world, tmp_path):
    path = save_dataset(tiny_world, tmp_path / 'train.jsonl')
    with path.open('a') as handle:
        handle.write('{"scene_id": 99\n')
    with pytest.raises(DataError):
        load_dataset(path)
