"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes (see cli.run), so library code
should raise the most specific type that applies rather than bare ValueError.
"""


class InputError(ValueError):
    """A function argument is outside its documented domain."""


class ConfigError(InputError):
    """An experiment configuration failed validation before any work started."""


class CapacityError(RuntimeError):
    """A request exceeds a hard enumeration ceiling (e.g. exact oracle n > 7)."""


class NumericError(ArithmeticError):
    """A numeric routine produced or received non-finite values."""
