"""Exception types raised across the package."""


class RelaxAdvError(Exception):
    """Base class for all package errors."""


class ConfigError(RelaxAdvError, ValueError):
    """Invalid configuration, hyperparameter, or mismatched resources."""


class DimensionError(RelaxAdvError, ValueError):
    """Operand shapes are incompatible."""


class RankError(RelaxAdvError, ValueError):
    """A tensor has the wrong number of dimensions."""


class DegenerateVectorError(RelaxAdvError, ValueError):
    """A vector norm is too small for a cosine to be defined."""


class SimplexError(RelaxAdvError, ValueError):
    """A soft input matrix has columns that are not probability vectors."""


class LengthError(RelaxAdvError, ValueError):
    """A sequence is too long or too short for the operation."""


class DivergenceError(RelaxAdvError, ArithmeticError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


class FormatError(RelaxAdvError, ValueError):
    """A file does not follow its expected layout."""


class InputError(RelaxAdvError, ValueError):
    """Arguments to a metric are malformed."""


class UndefinedRatioError(RelaxAdvError, ZeroDivisionError):
    """A relative decrease was requested against a zero clean score."""


class TokenIndexError(RelaxAdvError, IndexError):
    """A token id falls outside the vocabulary."""
