"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor or image shapes are incompatible with an operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ArithmeticError):
    """Non-finite values reached an operation that requires finite input."""


class FormatError(ValueError):
    """An image or file could not be interpreted in a supported format."""


class DegenerateClassError(ValueError):
    """A one-vs-rest problem has no positive or no negative samples."""

    def __init__(self, cls, message=None):
        self.cls = cls
        super().__init__(message or f"class {cls} has no positive or no negative samples")


class ContainerError(ValueError):
    """A checkpoint container is truncated, malformed or inconsistent."""
