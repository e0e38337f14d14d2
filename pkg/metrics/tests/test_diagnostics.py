import math

import numpy as np
import pytest
from django.test import SimpleTestCase

from classifier.model import SoftmaxModel
from core.exceptions import InputError, NumericError
from metrics.diagnostics import (
    OracleWorld, analytic_rho, constant_predictor, cosine, effective_space_member, empirical_rho,
    gradient_alignment, oe_estimate, sce_estimate,
)
from synthworld.world import ConfounderConfig


# Confounder correlation

def test_analytic_rho_cases():
    assert analytic_rho(ConfounderConfig(a1=1, a2=1, var_z=1, var_eps1=0, var_eps2=0)) == 1.0
    assert analytic_rho(ConfounderConfig(a1=1, a2=0, var_z=1, var_eps1=1, var_eps2=1)) == 0.0
    assert analytic_rho(ConfounderConfig()) == pytest.approx(0.5)


def test_analytic_rho_needs_variance():
    with pytest.raises(NumericError):
        analytic_rho(ConfounderConfig(a1=0, a2=0, var_z=1, var_eps1=0, var_eps2=0))


def test_empirical_rho_converges():
    cc = ConfounderConfig()
    assert empirical_rho(cc, 100_000, np.random.default_rng(0)) == pytest.approx(0.5, abs=0.05)
    assert abs(empirical_rho(ConfounderConfig(a2=0.0), 100_000, np.random.default_rng(1))) <= 0.05
    coarse = abs(empirical_rho(cc, 200, np.random.default_rng(2)) - 0.5)
    fine = abs(empirical_rho(cc, 200_000, np.random.default_rng(2)) - 0.5)
    assert fine <= max(coarse, 0.01)


def test_noiseless_confounding_is_perfectly_correlated():
    cc = ConfounderConfig(var_eps1=0.0, var_eps2=0.0)
    assert empirical_rho(cc, 1000, np.random.default_rng(3)) == pytest.approx(1.0, abs=1e-12)


def test_empirical_rho_needs_two_samples():
    with pytest.raises(InputError):
        empirical_rho(ConfounderConfig(), 1, np.random.default_rng(0))


# Spurious-correlation and overlapping errors

def hand_world():
    return OracleWorld(
        scene_probs=np.array([0.6, 0.4]),
        relation_probs=np.array([[0.5, 0.5], [0.25, 0.75]]),
        label_probs=np.array([
            [[1.0, 0.0], [0.2, 0.8]],
            [[0.5, 0.5], [0.0, 1.0]],
        ]),
        features=np.array([
            [[0.0, 0.0], [0.0, 1.0]],
            [[1.0, 0.0], [1.0, 1.0]],
        ]),
    )


def test_errors_on_the_hand_built_world():
    # A constant [0.7, 0.3] guess misses a label-a relation with 0.7 - 0.4a
    expected = 0.6 * (0.5 * 0.3 + 0.5 * 0.62) + 0.4 * (0.25 * 0.5 + 0.75 * 0.7)
    predictor = constant_predictor([0.7, 0.3])
    assert sce_estimate(predictor, hand_world()) == pytest.approx(expected, abs=1e-9)
    assert oe_estimate(predictor, hand_world()) == pytest.approx(expected, abs=1e-9)
    assert effective_space_member(predictor, hand_world(), delta=0.1)


def test_perfect_classifier_scores_zero_on_a_noiseless_world():
    noiseless = OracleWorld(
        scene_probs=np.array([0.5, 0.5]),
        relation_probs=np.array([[0.3, 0.7], [0.9, 0.1]]),
        label_probs=np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]]),
        features=np.arange(8, dtype=np.float64).reshape(2, 2, 2),
    )
    perfect = noiseless.bayes_predictor()
    assert sce_estimate(perfect, noiseless) == 0.0
    assert oe_estimate(perfect, noiseless) == 0.0


def test_bayes_predictor_beats_the_majority_guess():
    w = hand_world()
    majority = np.zeros(2)
    majority[int(np.argmax(w.label_marginal()))] = 1.0
    assert sce_estimate(w.bayes_predictor(), w) <= sce_estimate(constant_predictor(majority), w)


def test_errors_do_not_depend_on_enumeration_order():
    w = hand_world()
    order = [1, 0]
    permuted = OracleWorld(
        scene_probs=w.scene_probs[order],
        relation_probs=w.relation_probs[order][:, ::-1],
        label_probs=w.label_probs[order][:, ::-1],
        features=w.features[order][:, ::-1],
    )
    predictor = constant_predictor([0.4, 0.6])
    assert sce_estimate(predictor, permuted) == pytest.approx(sce_estimate(predictor, w), abs=1e-12)
    assert oe_estimate(predictor, permuted) == pytest.approx(oe_estimate(predictor, w), abs=1e-12)


def test_softmax_model_predicts_on_the_oracle_world():
    # Zero model spreads mass over two classes and background: each class gets 1/3
    assert sce_estimate(SoftmaxModel.zeros(2, 2), hand_world()) == pytest.approx(2 / 3)


def test_malformed_world_is_rejected():
    with pytest.raises(InputError):
        OracleWorld(
            scene_probs=np.array([0.5, 0.6]),
            relation_probs=np.full((2, 1), 1.0),
            label_probs=np.full((2, 1, 2), 0.5),
            features=np.zeros((2, 1, 1)),
        )


# Gradient alignment

def test_full_batch_is_perfectly_aligned(tiny_world):
    model = SoftmaxModel(weights=np.random.default_rng(0).normal(size=(5, 6)), bias=np.zeros(5))
    assert gradient_alignment(model, list(tiny_world.instances), tiny_world) == pytest.approx(1.0)


def test_opposite_gradients_are_antipodal():
    g = np.random.default_rng(1).normal(size=10)
    assert cosine(g, -g) == pytest.approx(-1.0)


class ZeroGradientTestCase(SimpleTestCase):

    def test_zero_gradient_reports_nan(self):
        with self.assertLogs('metrics.diagnostics', level='WARNING'):
            value = cosine(np.zeros(4), np.ones(4))
        self.assertTrue(math.isnan(value))
