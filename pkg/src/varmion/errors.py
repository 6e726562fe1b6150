"""Exception types shared across the package."""


class VarmionError(Exception):
    """Base class for all package errors."""


class ShapeError(VarmionError, ValueError):
    pass


class SingularMatrixError(VarmionError, ArithmeticError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(VarmionError, RuntimeError):
    def __init__(self, message, last_change=None, iterations=None):
        super().__init__(message)
        self.last_change = last_change
        self.iterations = iterations


class SolverError(VarmionError, RuntimeError):
    """A PDE solve failed while building a dataset."""

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class DivergenceError(VarmionError, RuntimeError):
    pass


class FrameError(VarmionError, ValueError):
    """The dataset does not satisfy the structural-estimate frame (L = q nodal outputs, zero flux)."""


class ConfigError(VarmionError, ValueError):
    pass


class MismatchError(VarmionError, ValueError):
    """Model family and dataset recipe (or sensor counts) are incompatible."""


class FormatError(VarmionError, ValueError):
    """Malformed VMDS/VMCK container."""
