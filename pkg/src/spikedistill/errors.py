"""Exception categories shared across the package.

The CLI maps each category to its own exit code, so raise the most specific
class that applies.
"""


class SpikeDistillError(Exception):
    exit_code = 1


class DimensionError(SpikeDistillError, ValueError):
    """Shapes do not compose."""

    exit_code = 3


class DomainError(SpikeDistillError, ValueError):
    """A value lies outside an operation's mathematical domain."""

    exit_code = 3


class NumericalError(SpikeDistillError, FloatingPointError):
    """NaN or Inf produced where finite values were required."""

    exit_code = 6


class ContractError(SpikeDistillError, ValueError):
    """A caller broke a documented precondition."""

    exit_code = 3


class ConfigError(SpikeDistillError, ValueError):
    exit_code = 4


class FormatError(SpikeDistillError, ValueError):
    """A file on disk does not match its declared binary format."""

    exit_code = 5


class StateError(SpikeDistillError, RuntimeError):
    exit_code = 7


class UsageError(SpikeDistillError):
    """Bad command line or missing input file."""

    exit_code = 2
