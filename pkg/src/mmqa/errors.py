"""Exception types shared across the package."""


class MmqaError(Exception):
    """Base class for all package errors."""


class ValidationError(MmqaError, ValueError):
    """Bad inputs: malformed files, wrong values, violated preconditions."""


class ShapeError(ValidationError):
    """Tensor shapes incompatible with the requested operation."""


class NumericalError(MmqaError, ArithmeticError):
    """NaN/Inf or divergence detected where finite values are required."""


class FormatError(MmqaError, OSError):
    """File bytes that cannot be decoded: bad magic, truncation, bad syntax."""
