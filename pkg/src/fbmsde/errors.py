"""Exception types shared across the package."""


class FbmSdeError(Exception):
    """Base class for all library errors."""


class DomainError(FbmSdeError):
    """An argument is outside the mathematically valid domain."""


class CapacityError(FbmSdeError):
    """A resource guard tripped (e.g. dense Cholesky too large)."""


class CapabilityError(FbmSdeError):
    """A required oracle (derivative depth, scheme order) is unavailable."""


class NonconvergenceError(FbmSdeError):
    """Fixed-point stage iteration did not converge; the grid is too coarse."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class DivergenceError(FbmSdeError):
    """Numerical solution blew up past the divergence guard."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ProtocolError(FbmSdeError):
    """Inputs violate an experiment protocol (grid/provenance mismatch)."""


class InternalError(FbmSdeError):
    """An invariant the library relies on failed; indicates a bug or severe
    conditioning problem."""
