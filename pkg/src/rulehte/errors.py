"""Exception types shared across the package."""


class RuleHTEError(Exception):
    """Base class for all package errors."""


class SchemaError(RuleHTEError):
    """A required column is missing or the file layout is wrong."""


class DataError(RuleHTEError):
    """Cell values violate the data contract (non-numeric, bad treatment code, empty)."""


class ParameterError(RuleHTEError):
    """A hyperparameter is outside its allowed domain."""


class NumericalError(RuleHTEError):
    """The numerical pipeline cannot proceed (empty model, degenerate penalty path)."""
