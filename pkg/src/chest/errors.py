"""Exception hierarchy shared across the package."""


class ChestError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ChestError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class DimensionError(ChestError, ValueError):
    pass


class BoundaryError(ChestError, ValueError):
    """A point lies on or outside the Poincare ball."""


class EmptyProxyError(ChestError, ValueError):
    pass


class DegenerateProblemError(ChestError, ValueError):
    pass


class ConstraintError(ChestError, ValueError):
    pass


class NonFiniteError(ChestError, ArithmeticError):
    """A loss, gradient or parameter became NaN/inf.

    ``name`` identifies the offending tensor or loss component.
    """

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class ParseError(ChestError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ChestError, ValueError):
    """Configuration failed validation; ``violations`` lists every broken rule."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))
