"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InputError -> 3.
Both subclass ValueError so plain ``except ValueError`` still works for
callers that do not care about the distinction.
"""


class IntentLabError(Exception):
    """Base class for all package errors."""


class InputError(IntentLabError, ValueError):
    """Malformed or out-of-domain data: bad shapes, bad values, bad files."""


class ConfigError(IntentLabError, ValueError):
    """Invalid configuration: bad hyperparameters, inconsistent settings."""


class NumericError(IntentLabError, ArithmeticError):
    """Numerical failure at runtime, e.g. NaN loss."""
