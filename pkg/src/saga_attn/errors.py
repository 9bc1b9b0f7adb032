"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An input violates a documented precondition (e.g. gate range)."""


class NumericError(ArithmeticError):
    """A numerical routine produced or met non-finite values, or failed to converge."""
