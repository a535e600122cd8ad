"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or parameter dimensions do not fit together."""


class SpecError(ValueError):
    """An operator specification violates its own invariants."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class InputError(ValueError):
    """Malformed user data (detections, ground truth, configs)."""


class VerificationError(RuntimeError):
    """Two computation paths that must agree did not."""
