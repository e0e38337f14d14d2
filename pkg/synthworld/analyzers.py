import logging
from typing import Optional

import numpy as np

from core.exceptions import InputError
from .world import SynthConfig, class_priors, feature_covariance, world_parameters

logger = logging.getLogger(__name__)

# Scores within this relative distance of the best count as tied
TIE_TOLERANCE = 1e-9


class BayesOracle:
    """
    Closed-form Bayes-optimal classifier for a synthetic world.

    Foreground features are Gaussian with class means and a shared covariance,
    so the posterior argmax is a linear discriminant.
    """

    @staticmethod
    def discriminant_scores(cfg: SynthConfig, features: np.ndarray, balanced_prior: bool = False) -> np.ndarray:
        """Log-posterior scores (up to a shared constant), shape (N, K)."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != cfg.feature_dim:
            raise InputError(f"feature length {features.shape[1]} does not match feature_dim {cfg.feature_dim}")
        params = world_parameters(cfg)
        means = params.means
        solved = np.linalg.solve(feature_covariance(cfg), means.T)
        offsets = -0.5 * np.sum(means.T * solved, axis=0)
        if balanced_prior:
            log_prior = np.zeros(cfg.num_relation_classes)
        else:
            with np.errstate(divide='ignore'):
                log_prior = np.log(class_priors(cfg))
        return features @ solved + offsets + log_prior

    @staticmethod
    def argmax_with_ties(scores: np.ndarray) -> np.ndarray:
        """Row-wise argmax; near-ties resolve to the lowest class index."""
        scores = np.atleast_2d(scores)
        best = scores.max(axis=1, keepdims=True)
        tolerance = TIE_TOLERANCE * np.maximum(1.0, np.abs(best))
        return np.argmax(scores >= best - tolerance, axis=1)

    @staticmethod
    def predict_many(cfg: SynthConfig, features: np.ndarray, balanced_prior: bool = False) -> np.ndarray:
        scores = BayesOracle.discriminant_scores(cfg, features, balanced_prior)
        return BayesOracle.argmax_with_ties(scores)


def bayes_optimal_predict(cfg: SynthConfig, feature: np.ndarray, balanced_prior: bool = False) -> int:
    """Foreground class maximizing P(k | feature) under the world's generative model."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1:
        raise InputError("bayes_optimal_predict takes a single feature vector")
    return int(BayesOracle.predict_many(cfg, feature[None, :], balanced_prior)[0])


def bayes_accuracy(cfg: SynthConfig, features: np.ndarray, labels: np.ndarray,
                   balanced_prior: bool = False) -> Optional[float]:
    """Accuracy of the oracle on foreground rows; None when there are none."""
    labels = np.asarray(labels)
    mask = labels < cfg.num_relation_classes
    if not mask.any():
        return None
    predictions = BayesOracle.predict_many(cfg, np.asarray(features)[mask], balanced_prior)
    return float(np.mean(predictions == labels[mask]))
