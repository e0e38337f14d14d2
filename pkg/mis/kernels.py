"""
Sampling kernels used to draw added instances from a query-set pool.

Every kernel takes the instances still available for one relation class and
returns at most `n` of them. Kernels are selected by tag in experiment configs.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import entropy

from core.exceptions import ConfigurationError, InputError
from synthworld.world import RelationshipInstance
from .information import PairPool, max_mi_sample

logger = logging.getLogger(__name__)

KERNEL_ALIASES = {
    'mis': 'mis',
    'max_mi': 'max_mi',
    'rnd': 'rnd',
    'random': 'rnd',
    'lcs': 'lcs',
    'least_confidence': 'lcs',
    'mes': 'mes',
    'max_entropy': 'mes',
    'ms': 'ms',
    'margin': 'ms',
}

UNCERTAINTY_KERNELS = ('lcs', 'mes', 'ms')


def resolve_kernel(tag: str) -> str:
    try:
        return KERNEL_ALIASES[str(tag).lower()]
    except KeyError:
        raise ConfigurationError(f"unknown sampling kernel '{tag}', expected one of {sorted(KERNEL_ALIASES)}")


def unique_pair_sample(pool: PairPool, n: int, rng: np.random.Generator) -> List[RelationshipInstance]:
    """
    Maximum information sampling: pass over the remaining instances taking one
    random representative per distinct object pair, until n are chosen. The
    pass that would overshoot keeps a random subset of its representatives.
    """
    if n < 0:
        raise InputError("sample size must be nonnegative")
    remaining = list(pool.instances)
    selected: List[RelationshipInstance] = []
    while len(selected) < n and remaining:
        groups: Dict = {}
        for instance in remaining:
            groups.setdefault(instance.pair, []).append(instance)
        representatives = [groups[p][int(rng.integers(len(groups[p])))] for p in sorted(groups)]
        need = n - len(selected)
        if len(representatives) > need:
            keep = np.sort(rng.choice(len(representatives), size=need, replace=False))
            representatives = [representatives[i] for i in keep]
        selected.extend(representatives)
        taken = {i.instance_id for i in representatives}
        remaining = [i for i in remaining if i.instance_id not in taken]
    return selected


def random_sample(pool: PairPool, n: int, rng: np.random.Generator) -> List[RelationshipInstance]:
    if n < 0:
        raise InputError("sample size must be nonnegative")
    size = min(n, len(pool))
    if size == 0:
        return []
    picks = np.sort(rng.choice(len(pool), size=size, replace=False))
    return [pool.instances[i] for i in picks]


def uncertainty_scores(probs: np.ndarray, variant: str) -> np.ndarray:
    """Higher score means more uncertain."""
    variant = resolve_kernel(variant)
    if variant == 'lcs':
        return 1.0 - probs.max(axis=1)
    if variant == 'mes':
        return entropy(probs, axis=1)
    if variant == 'ms':
        top_two = np.sort(probs, axis=1)[:, -2:]
        return -(top_two[:, 1] - top_two[:, 0])
    raise ConfigurationError(f"'{variant}' is not an uncertainty kernel")


def uncertainty_sample(pool: PairPool, n: int, model, variant: str,
                       rng: Optional[np.random.Generator] = None) -> List[RelationshipInstance]:
    """Top-n instances by uncertainty under the model; ties by instance id."""
    if model is None:
        raise ConfigurationError(f"kernel '{variant}' needs a model snapshot")
    if n <= 0 or not len(pool):
        return []
    features = np.vstack([i.feature for i in pool.instances])
    scores = uncertainty_scores(model.predict_proba(features), variant)
    ids = np.array([i.instance_id for i in pool.instances])
    order = np.lexsort((ids, -scores))
    return [pool.instances[i] for i in order[:n]]


def sample(kernel: str, instances: Sequence[RelationshipInstance], n: int,
           rng: np.random.Generator, model=None) -> List[RelationshipInstance]:
    """Dispatch to the kernel named by `kernel`."""
    tag = resolve_kernel(kernel)
    pool = PairPool.of(instances)
    if tag == 'mis':
        return unique_pair_sample(pool, n, rng)
    if tag == 'rnd':
        return random_sample(pool, n, rng)
    if tag == 'max_mi':
        return max_mi_sample(pool, n)
    return uncertainty_sample(pool, n, model, tag, rng)

