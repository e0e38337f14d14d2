"""
Named random streams derived from one root seed.

Every consumer asks for its own stream so that, for example, changing how many
draws the sampler makes never shifts the scene shuffling order.
"""
import numpy as np

from .exceptions import ConfigurationError

STREAMS = (
    'world',
    'generation',
    'test_generation',
    'shuffling',
    'sampling',
    'init',
    'diagnostics',
)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator for the named stream of `seed`."""
    if name not in STREAMS:
        raise ConfigurationError(f"unknown random stream '{name}'")
    if seed < 0:
        raise ConfigurationError(f"seed must be nonnegative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS.index(name)]))
