"""Closed-form Bayesian references and the sequential flow filter.

:func:`conjugate_posterior` and :func:`kalman_update` are two algebraically
different routes to the same Gaussian posterior and serve as oracles for
the particle flow.  :func:`sequential_flow_filter` chains linear-Gaussian
prediction with one flow-based measurement update per observation.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .dynamics import psd_factor
from .errors import FlowFiltError, ImproperPosteriorError, ValidationError
from .integrator import Ensemble, IntegratorConfig, affine_rows, flow_to_posterior, sample_gaussian
from .quadratic import (
    Homotopy,
    PosteriorMoments,
    as_matrix,
    as_vector,
    from_gaussian_prior,
    from_linear_gaussian_measurement,
    spd_eigh,
    symmetrize,
)
from .stats import sample_moments


@dataclass(frozen=True)
class LinearDynamics:
    """``x_k = F x_{k-1} + w``, ``w ~ N(0, W)``."""

    F: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        F = as_matrix(self.F, "F")
        W = symmetrize(as_matrix(self.W, "W"))
        n = F.shape[0]
        if F.shape != (n, n) or W.shape != (n, n):
            raise ValidationError(f"F {F.shape} and W {W.shape} must both be square of equal size")
        psd_factor(W)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "W", W)

    def predict(self, moments):
        F = self.F
        return PosteriorMoments(F @ moments.mean, F @ moments.covariance @ F.T + self.W)


@dataclass(frozen=True)
class MeasurementModel:
    """``z = H x + v``, ``v ~ N(0, R)``."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = as_matrix(self.H, "H")
        R = symmetrize(as_matrix(self.R, "R"))
        if R.shape != (H.shape[0], H.shape[0]):
            raise ValidationError(f"R has shape {R.shape}, expected {(H.shape[0], H.shape[0])}")
        spd_eigh(R, "likelihood.R")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    def likelihood(self, z):
        return from_linear_gaussian_measurement(self.H, self.R, z)


def conjugate_posterior(prior_mean, prior_cov, likelihood):
    """Product of a Gaussian prior and an exponential-quadratic likelihood."""
    prior = from_gaussian_prior(prior_mean, prior_cov)
    precision = symmetrize(-(prior.A + likelihood.A))
    w, v = np.linalg.eigh(precision)
    if w[0] <= 0.0:
        raise ImproperPosteriorError(
            f"posterior precision not positive definite: smallest eigenvalue {w[0]:.6g}"
        )
    cov = symmetrize((v / w) @ v.T)
    return PosteriorMoments(cov @ (prior.b + likelihood.b), cov)


def kalman_update(mean, cov, mm, z):
    """Gain-form update with the Joseph covariance expression."""
    mean = as_vector(mean, "mean")
    cov = as_matrix(cov, "cov")
    z = as_vector(z, "z")
    H, R = mm.H, mm.R
    innov = symmetrize(H @ cov @ H.T + R)
    try:
        L = np.linalg.cholesky(innov)
    except np.linalg.LinAlgError:
        raise ImproperPosteriorError("innovation covariance not positive definite") from None
    PHt = cov @ H.T
    gain = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    I_KH = np.eye(mean.size) - gain @ H
    new_cov = I_KH @ cov @ I_KH.T + gain @ R @ gain.T
    return PosteriorMoments(mean + gain @ (z - H @ mean), new_cov)


def kalman_filter(init, dyn, mm, measurements):
    """Exact predict/update recursion; one posterior per measurement."""
    out = []
    moments = init
    for z in measurements:
        pred = dyn.predict(moments)
        moments = kalman_update(pred.mean, pred.covariance, mm, z)
        out.append(moments)
    return out


def sequential_flow_filter(
    init, dyn, mm, measurements, flow_cfg, N, diffusion=0.0, threads=None, sink=None
):
    """Filter ``measurements`` with particle-flow updates.

    Each step propagates the particles through ``dyn`` with per-particle
    process noise, builds the homotopy from the analytically predicted
    Gaussian and the measurement likelihood, and flows the particles to
    ``lam = 1``.  Returns ``[(sample moments, ensemble), ...]``.
    """
    if not isinstance(flow_cfg, IntegratorConfig):
        flow_cfg = IntegratorConfig(**flow_cfg)
    seed = flow_cfg.seed
    ens = sample_gaussian(init.mean, init.covariance, N, rng.NoiseStream(seed, rng.PRIOR))
    w_factor = psd_factor(dyn.W)
    analytic = init
    results = []
    for k, z in enumerate(measurements):
        try:
            X = affine_rows(ens.particles, dyn.F)
            if w_factor.shape[1]:
                xi = rng.NoiseStream(seed, rng.PROCESS, k).normals(0, ens.ids, w_factor.shape[1])
                X = X + affine_rows(xi, w_factor)
            predicted = dyn.predict(analytic)
            hom = Homotopy(
                from_gaussian_prior(predicted.mean, predicted.covariance), mm.likelihood(z)
            )
            ens = flow_to_posterior(
                Ensemble(X, 0.0, ens.ids), hom, diffusion, flow_cfg,
                sink=sink, noise=rng.NoiseStream(seed, rng.FLOW, k), threads=threads,
            )
        except FlowFiltError as exc:
            exc.step = k
            exc.args = (f"measurement step {k}: {exc}",)
            raise
        analytic = kalman_update(predicted.mean, predicted.covariance, mm, z)
        sm = sample_moments(ens)
        results.append((PosteriorMoments(sm.mean, sm.covariance), ens))
    return results
