"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input data, configuration or file contents (CLI exit code 1)."""


class ShapeError(ValidationError):
    """Array dimensions do not line up."""


class ContractError(RuntimeError):
    """A caller broke a precondition, e.g. a stale forward cache."""


class NumericalError(RuntimeError):
    """NaN/Inf produced during optimization (CLI exit code 2)."""
