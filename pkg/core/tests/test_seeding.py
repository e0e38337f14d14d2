import pytest
from numpy.testing import assert_array_equal

from core.exceptions import (
    ConfigurationError, DataError, InputError, NumericError, OracleScaleError, SimulationError, VerificationFailure,
)
from core.seeding import STREAMS, rng_stream


def test_same_seed_and_name_repeat():
    assert_array_equal(rng_stream(3, 'sampling').random(5), rng_stream(3, 'sampling').random(5))


def test_streams_are_independent():
    draws = {name: tuple(rng_stream(3, name).random(3)) for name in STREAMS}
    assert len(set(draws.values())) == len(STREAMS)
    assert tuple(rng_stream(4, 'sampling').random(3)) != draws['sampling']


def test_unknown_stream_or_negative_seed():
    with pytest.raises(ConfigurationError):
        rng_stream(0, 'weather')
    with pytest.raises(ConfigurationError):
        rng_stream(-1, 'world')


@pytest.mark.parametrize('error, code', [
    (ConfigurationError, 1), (OracleScaleError, 1), (DataError, 2), (InputError, 2), (NumericError, 2),
    (VerificationFailure, 3),
])
def test_exit_codes(error, code):
    assert issubclass(error, SimulationError)
    assert error('boom').exit_code == code
