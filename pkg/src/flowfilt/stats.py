"""Sample statistics and scale-free distances to a reference Gaussian."""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamplesError
from .quadratic import as_matrix, spd_eigh, symmetrize


@dataclass(frozen=True)
class SampleMoments:
    mean: np.ndarray
    covariance: np.ndarray
    N: int


def _particles(ens):
    return as_matrix(getattr(ens, "particles", ens), "particles")


def sample_moments(ens):
    """Mean and unbiased (divisor ``N - 1``) covariance of an ensemble or array."""
    X = _particles(ens)
    N = X.shape[0]
    if N < 2:
        raise InsufficientSamplesError(f"need at least 2 particles for a covariance, got {N}")
    mean = X.mean(axis=0)
    D = X - mean
    cov = symmetrize(D.T @ D / (N - 1))
    return SampleMoments(mean, cov, N)


def _inv_sqrt(cov):
    w, v = spd_eigh(cov, "reference covariance")
    return (v / np.sqrt(w)) @ v.T


def mahalanobis_gap(sm, ref):
    """Standardized mean error ``|m - mu|`` in units of ``sqrt(ref.cov / N)``."""
    W = _inv_sqrt(ref.covariance)
    return float(np.linalg.norm(W @ (sm.mean - ref.mean)) * np.sqrt(sm.N))


def covariance_gap(sm, ref):
    """Frobenius norm of ``ref^-1/2 S ref^-1/2 - I``."""
    W = _inv_sqrt(ref.covariance)
    n = sm.covariance.shape[0]
    return float(np.linalg.norm(W @ sm.covariance @ W - np.eye(n)))


def skew_kurtosis(x):
    """Per-coordinate sample skewness and excess kurtosis."""
    X = _particles(x)
    D = X - X.mean(axis=0)
    m2 = np.mean(D**2, axis=0)
    skew = np.mean(D**3, axis=0) / m2**1.5
    kurt = np.mean(D**4, axis=0) / m2**2 - 3.0
    return skew, kurt
