"""Exception types shared across the package."""


class AoiFluidError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(AoiFluidError, ValueError):
    """Malformed input: wrong shapes, inconsistent orders, invalid parameters."""


class ContractError(AoiFluidError, ValueError):
    """An input violates a documented normalization or sign contract."""


class PreconditionError(AoiFluidError, ValueError):
    """A documented precondition of an operation does not hold."""


class DegenerateConditioningError(AoiFluidError, ValueError):
    """Conditioning event has zero probability (zero total transition rate)."""


class ModelInstabilityError(AoiFluidError, RuntimeError):
    """The spectral split expected for a stable model does not exist."""


class NumericalError(AoiFluidError, RuntimeError):
    """A linear-algebra step failed beyond the documented tolerances."""
