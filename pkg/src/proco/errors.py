"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not agree."""


class DegenerateInputError(ValueError):
    """Input has no well-defined result, e.g. normalizing a zero vector."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of the operation."""


class ConfigError(ValueError):
    """Invalid hyperparameter or dataset-construction parameter."""


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class InvariantError(RuntimeError):
    """A data-structure invariant would be broken."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was aborted."""
