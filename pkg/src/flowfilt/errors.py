"""Exception hierarchy shared by all flowfilt modules."""


class FlowFiltError(Exception):
    """Base class for every error raised by flowfilt."""


class ValidationError(FlowFiltError, ValueError):
    """Input matrices or configuration violate a stated precondition."""


class SingularHomotopyError(FlowFiltError):
    """The homotopy Hessian S(lam) = A_g + lam*A_h is numerically singular."""

    def __init__(self, lam, message=None):
        self.lam = float(lam)
        super().__init__(message or f"homotopy Hessian is singular at lambda={self.lam:.6g}")


class DiffusionError(FlowFiltError, ValueError):
    """A diffusion matrix is not positive semi-definite."""


class DivergenceError(FlowFiltError):
    """A particle became non-finite during integration."""

    def __init__(self, particle_id, lam, message=None):
        self.particle_id = int(particle_id)
        self.lam = float(lam)
        super().__init__(
            message
            or f"particle {self.particle_id} diverged (non-finite state) at lambda={self.lam:.6g}"
        )


class InsufficientSamplesError(FlowFiltError, ValueError):
    """Fewer samples than a statistic requires."""


class ImproperPosteriorError(FlowFiltError):
    """Posterior precision is not positive definite."""
