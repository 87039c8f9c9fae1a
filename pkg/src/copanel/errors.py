"""Exception types shared across the package."""


class CopanelError(Exception):
    """Base class for all package errors."""


class DomainError(CopanelError, ValueError):
    """A parameter or argument lies outside its admissible range."""


class PanelError(CopanelError, ValueError):
    """Malformed panel data or configuration."""


class NumericalError(CopanelError, RuntimeError):
    """A numerical routine failed (decomposition, quadrature, ...)."""


class OptimizationError(NumericalError):
    """The quasi-Newton maximizer could not make progress."""


class DegenerateVarianceError(NumericalError):
    """Vuong comparison with zero variance of the log-ratio terms."""


class HessianError(NumericalError):
    """Negative Hessian at the reported maximum is not positive definite."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class UnderflowError(CopanelError, ValueError):
    """A model cell received zero probability for an observed outcome."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where
