"""
Error types shared by every simulator app.

Each error carries the process exit code the management commands use when it
escapes a command (0 ok, 1 config error, 2 data error, 3 verification failure).
"""


class SimulationError(Exception):
    exit_code = 1


class ConfigurationError(SimulationError):
    """A config value is outside what the operation accepts."""
    exit_code = 1


class DataError(SimulationError):
    """The dataset (or a file on disk) cannot support the requested operation."""
    exit_code = 2


class InputError(SimulationError):
    """A call received arguments that violate its preconditions."""
    exit_code = 2


class NumericError(SimulationError):
    """Non-finite or undefined numeric value."""
    exit_code = 2


class OracleScaleError(SimulationError):
    """Exhaustive oracle asked to run beyond its enumeration limits."""
    exit_code = 1


class VerificationFailure(SimulationError):
    exit_code = 3
