"""
Linear softmax relationship classifier: probabilities = softmax(W x + b),
with row K of W the background class.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from core.exceptions import DataError, InputError
from synthworld.world import RelationshipInstance

logger = logging.getLogger(__name__)

TINY = np.finfo(np.float64).tiny


@dataclass
class SoftmaxModel:
    weights: np.ndarray
    bias: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, num_classes: int, feature_dim: int) -> 'SoftmaxModel':
        """num_classes foreground classes plus one background row."""
        return cls(weights=np.zeros((num_classes + 1, feature_dim)), bias=np.zeros(num_classes + 1))

    @classmethod
    def random(cls, num_classes: int, feature_dim: int, rng: np.random.Generator,
               scale: float = 0.01) -> 'SoftmaxModel':
        """Small Gaussian weights; draw `rng` from the 'init' stream."""
        return cls(weights=rng.normal(scale=scale, size=(num_classes + 1, feature_dim)),
                   bias=rng.normal(scale=scale, size=num_classes + 1))

    @property
    def num_outputs(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.feature_dim:
            raise InputError(f"feature length {features.shape[1]} does not match model input {self.feature_dim}")
        return features @ self.weights.T + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return forward(self, features)

    def copy(self) -> 'SoftmaxModel':
        return SoftmaxModel(self.weights.copy(), self.bias.copy(), self.step_count)


@dataclass
class Gradient:
    weights: np.ndarray
    bias: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


def batch_arrays(batch: Sequence[RelationshipInstance]) -> Tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise InputError("batch is empty")
    features = np.vstack([i.feature for i in batch])
    labels = np.array([i.relation_label for i in batch], dtype=np.int64)
    return features, labels


def forward(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    return softmax(model.logits(features), axis=1)


def cross_entropy(probs: np.ndarray, labels: Sequence[int]) -> Tuple[np.ndarray, float]:
    """Per-instance -ln p[label] and their mean."""
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != probs.shape[0]:
        raise InputError("one label per probability row is required")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError(f"labels must lie in [0, {probs.shape[1]})")
    losses = -np.log(np.maximum(probs[np.arange(labels.size), labels], TINY))
    return losses, float(losses.mean()) if losses.size else 0.0


def gradient_from_probs(features: np.ndarray, labels: np.ndarray, probs: np.ndarray) -> Gradient:
    residual = probs.copy()
    residual[np.arange(labels.size), labels] -= 1.0
    n = labels.size
    return Gradient(weights=residual.T @ features / n, bias=residual.mean(axis=0))


def gradient(model: SoftmaxModel, features: np.ndarray, labels: Sequence[int]) -> Gradient:
    """Mean softmax cross-entropy gradient over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InputError("gradient of an empty batch is undefined")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return gradient_from_probs(features, labels, forward(model, features))


def sgd_step(model: SoftmaxModel, grads: Gradient, lr: float):
    model.weights -= lr * grads.weights
    model.bias -= lr * grads.bias
    model.step_count += 1


def loss_excluding_class(model: SoftmaxModel, batch: Sequence[RelationshipInstance], q: int) -> float:
    """Mean cross-entropy over the batch with every instance of class q removed."""
    retained = [i for i in batch if i.relation_label != q]
    if not retained:
        raise InputError(f"excluding class {q} leaves the batch empty")
    features, labels = batch_arrays(retained)
    return cross_entropy(forward(model, features), labels)[1]


def save_checkpoint(model: SoftmaxModel, path: Union[str, Path], config_hash: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        'weights': model.weights.tolist(),
        'bias': model.bias.tolist(),
        'step_count': model.step_count,
        'config_hash': config_hash,
    }))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[SoftmaxModel, Optional[str]]:
    try:
        payload = json.loads(Path(path).read_text())
        model = SoftmaxModel(
            weights=np.array(payload['weights'], dtype=np.float64),
            bias=np.array(payload['bias'], dtype=np.float64),
            step_count=int(payload['step_count']),
        )
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from exc
    if model.weights.ndim != 2 or model.bias.shape != (model.weights.shape[0],):
        raise DataError(f"checkpoint {path} has inconsistent shapes")
    return model, payload.get('config_hash')
