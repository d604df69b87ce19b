"""Exception hierarchy shared by every subsystem."""


class ComoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ComoError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(ComoError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ComoError, ArithmeticError):
    """A NaN or Inf appeared in a forward value, a gradient or a loss."""


class ConfigError(ComoError, ValueError):
    """Invalid configuration.  ``problems`` lists every offending entry."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DatasetIOError(ComoError, OSError):
    """A dataset, checkpoint or tensor container could not be read or written."""
