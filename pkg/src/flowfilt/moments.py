"""Mean and covariance ODEs of the linear flow SDE.

For ``dx = (A x + b) dlam + q dw`` the first two moments obey

    dm/dlam = A m + b,    dP/dlam = A P + P A' + Q.

Integrating them from the prior moments and comparing with the closed-form
homotopy moments is the executable form of the claim that the flow keeps
the law of the particles equal to ``p(., lam)``.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import affine_coefficients, as_schedule
from .errors import ValidationError
from .quadratic import posterior_moments, symmetrize


@dataclass(frozen=True)
class MomentState:
    mean: np.ndarray
    covariance: np.ndarray
    lam: float


def moment_rhs(state, hom, diffusion):
    """Return ``(dmean, dcov)`` at ``state``."""
    Q = as_schedule(diffusion, hom.n)(state.lam)
    A, b = affine_coefficients(hom, state.lam, Q)
    P = state.covariance
    dcov = A @ P + P @ A.T + Q
    return A @ state.mean + b, symmetrize(dcov)


@dataclass(frozen=True)
class MomentTrajectory:
    lambdas: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __len__(self):
        return self.lambdas.size

    def __getitem__(self, k):
        return MomentState(self.means[k], self.covariances[k], float(self.lambdas[k]))

    @property
    def final(self):
        return self[-1]


def propagate_moments(hom, diffusion, steps=2000):
    """RK4 integration of the moment ODEs over a uniform grid on [0, 1]."""
    steps = int(steps)
    if steps < 1:
        raise ValidationError(f"steps must be positive, got {steps}")
    schedule = as_schedule(diffusion, hom.n)
    prior = posterior_moments(hom, 0.0)
    n = hom.n
    lambdas = np.arange(steps + 1) / steps
    means = np.empty((steps + 1, n))
    covs = np.empty((steps + 1, n, n))
    m, P = prior.mean.copy(), prior.covariance.copy()
    means[0], covs[0] = m, P

    def coefficients(lam):
        Q = schedule(lam)
        A, b = affine_coefficients(hom, lam, Q)
        return A, b, Q

    def rhs(m, P, coef):
        A, b, Q = coef
        return A @ m + b, symmetrize(A @ P + P @ A.T + Q)

    c_start = coefficients(0.0)
    for k in range(steps):
        lam, h = lambdas[k], lambdas[k + 1] - lambdas[k]
        c_mid = coefficients(lam + 0.5 * h)
        c_end = coefficients(lambdas[k + 1])
        dm1, dP1 = rhs(m, P, c_start)
        dm2, dP2 = rhs(m + 0.5 * h * dm1, symmetrize(P + 0.5 * h * dP1), c_mid)
        dm3, dP3 = rhs(m + 0.5 * h * dm2, symmetrize(P + 0.5 * h * dP2), c_mid)
        dm4, dP4 = rhs(m + h * dm3, symmetrize(P + h * dP3), c_end)
        m = m + (h / 6.0) * (dm1 + 2.0 * dm2 + 2.0 * dm3 + dm4)
        P = symmetrize(P + (h / 6.0) * (dP1 + 2.0 * dP2 + 2.0 * dP3 + dP4))
        means[k + 1], covs[k + 1] = m, P
        c_start = c_end
    return MomentTrajectory(lambdas, means, covs)


def analytic_trajectory(hom, lambdas):
    """Closed-form homotopy moments on the same grid, for comparison."""
    moms = [posterior_moments(hom, lam) for lam in lambdas]
    return MomentTrajectory(
        np.asarray(lambdas, dtype=float),
        np.array([mo.mean for mo in moms]),
        np.array([mo.covariance for mo in moms]),
    )
