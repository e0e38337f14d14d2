"""
Causal diagnostics: confounder correlation, spurious-correlation and
overlapping errors on finite worlds, and batch/full-data gradient alignment.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from classifier.model import SoftmaxModel, batch_arrays, forward, gradient
from core.exceptions import InputError, NumericError, OracleScaleError
from synthworld.world import ConfounderConfig, Dataset, RelationshipInstance

logger = logging.getLogger(__name__)

MAX_SUPPORT = 1_000_000

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass
class DiagnosticsReport:
    rho_empirical: Optional[float] = None
    rho_analytic: Optional[float] = None
    sce: Optional[float] = None
    oe: Optional[float] = None
    grad_cosine: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def analytic_rho(cc: ConfounderConfig) -> float:
    """Pearson correlation of X = a1 Z + e1 and Y = a2 Z + e2 with E[Z] = 0."""
    var_x = cc.a1 ** 2 * cc.var_z + cc.var_eps1
    var_y = cc.a2 ** 2 * cc.var_z + cc.var_eps2
    if var_x <= 0 or var_y <= 0:
        raise NumericError("correlation is undefined when X or Y has zero variance")
    return cc.a1 * cc.a2 * cc.var_z / math.sqrt(var_x * var_y)


def empirical_rho(cc: ConfounderConfig, n_samples: int, rng: np.random.Generator) -> float:
    if n_samples < 2:
        raise InputError("empirical correlation needs at least two samples")
    z = rng.normal(0.0, math.sqrt(cc.var_z), size=n_samples)
    x = cc.a1 * z + rng.normal(0.0, math.sqrt(cc.var_eps1), size=n_samples)
    y = cc.a2 * z + rng.normal(0.0, math.sqrt(cc.var_eps2), size=n_samples)
    if np.std(x) == 0 or np.std(y) == 0:
        raise NumericError("sampled X or Y is constant")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass(frozen=True, eq=False)
class OracleWorld:
    """
    Finite-support world: scene types x with P(x), relationship features r
    with P(r | x), and labels with P(k | r, x). Arrays are shaped (X,),
    (X, R) and (X, R, K); features are (X, R, d).
    """
    scene_probs: np.ndarray
    relation_probs: np.ndarray
    label_probs: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        n_x, n_r, n_k = self.label_probs.shape
        if self.scene_probs.shape != (n_x,) or self.relation_probs.shape != (n_x, n_r):
            raise InputError("oracle world arrays disagree on the support shape")
        if self.features.shape[:2] != (n_x, n_r):
            raise InputError("oracle world needs one feature vector per (x, r)")
        if n_x * n_r * n_k > MAX_SUPPORT:
            raise OracleScaleError(f"oracle world support {n_x * n_r * n_k} exceeds {MAX_SUPPORT}")
        for name, array, axis in (('P(x)', self.scene_probs, 0), ('P(r|x)', self.relation_probs, 1),
                                  ('P(k|r,x)', self.label_probs, 2)):
            if (array < 0).any() or not np.allclose(array.sum(axis=axis), 1.0, atol=1e-9):
                raise InputError(f"{name} is not a probability distribution")

    @property
    def num_classes(self) -> int:
        return self.label_probs.shape[2]

    def predictions(self, predictor: Union[Predictor, SoftmaxModel]) -> np.ndarray:
        """Predicted class probabilities per (x, r), shape (X, R, K)."""
        n_x, n_r, d = self.features.shape
        flat = self.features.reshape(n_x * n_r, d)
        if isinstance(predictor, SoftmaxModel):
            probs = forward(predictor, flat)[:, : self.num_classes]
        else:
            probs = np.asarray(predictor(flat), dtype=np.float64)
        return probs.reshape(n_x, n_r, self.num_classes)

    def bayes_predictor(self) -> Predictor:
        """One-hot on the most probable label of each (x, r); ties to the lowest class."""
        table = {}
        for x in range(self.features.shape[0]):
            for r in range(self.features.shape[1]):
                onehot = np.zeros(self.num_classes)
                onehot[int(np.argmax(self.label_probs[x, r]))] = 1.0
                table[self.features[x, r].tobytes()] = onehot
        return lambda flat: np.vstack([table[row.tobytes()] for row in np.asarray(flat, dtype=np.float64)])

    def label_marginal(self) -> np.ndarray:
        """P(Y = k) under the world."""
        return np.einsum('x,xr,xrk->k', self.scene_probs, self.relation_probs, self.label_probs)


def constant_predictor(probs: Sequence[float]) -> Predictor:
    row = np.asarray(probs, dtype=np.float64)
    return lambda flat: np.tile(row, (len(flat), 1))


def sce_estimate(predictor: Union[Predictor, SoftmaxModel], world: OracleWorld) -> float:
    """
    Sum over x and k of P(x) P(k|x) [1 - P(Yhat = k | Y = k, x)], where the
    conditional hit probability averages the prediction over P(r | k, x).
    """
    pred = world.predictions(predictor)
    joint = world.relation_probs[:, :, None] * world.label_probs          # P(r, k | x)
    p_k_given_x = joint.sum(axis=1)                                         # P(k | x)
    hit_mass = (joint * pred).sum(axis=1)                                   # P(k|x) P(Yhat=k | Y=k, x)
    per_x = (p_k_given_x - hit_mass).sum(axis=1)
    return float(world.scene_probs @ per_x)


def oe_estimate(predictor: Union[Predictor, SoftmaxModel], world: OracleWorld) -> float:
    """Sum over (x, r) and k of P(r, x) P(k|r,x) [1 - P(Yhat = k | r, x)]."""
    pred = world.predictions(predictor)
    per_xr = (world.label_probs * (1.0 - pred)).sum(axis=2)
    return float(np.einsum('x,xr,xr->', world.scene_probs, world.relation_probs, per_xr))


def effective_space_member(predictor: Union[Predictor, SoftmaxModel], world: OracleWorld, delta: float) -> bool:
    return abs(sce_estimate(predictor, world) - oe_estimate(predictor, world)) <= delta


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        logger.warning("gradient alignment undefined for a zero gradient")
        return float('nan')
    return float(np.clip(a @ b / norm, -1.0, 1.0))


def gradient_alignment(model: SoftmaxModel, batch: Sequence[RelationshipInstance], full_ds: Dataset) -> float:
    """Cosine between the batch gradient and the full-data gradient; NaN if either vanishes."""
    features, labels = batch_arrays(batch)
    batch_grad = gradient(model, features, labels).flat()
    full_grad = gradient(model, full_ds.features, full_ds.labels).flat()
    return cosine(batch_grad, full_grad)
