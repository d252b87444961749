"""Drift, gain and affine coefficients of the stochastic flow.

For a diffusion matrix ``Q(lam)`` that does not depend on ``x`` the flow

    dx = f(x, lam) dlam + q(lam) dw,    q q' = Q

uses the drift ``f = S^-1 [-grad log h + K S^-1 grad log p]`` with gain
``K = 0.5 S Q S + 0.5 A_h`` and ``S = A_g + lam A_h``.  Under quadratic
log-densities ``f`` is affine, ``f(x) = A x + b``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DiffusionError, ValidationError
from .quadratic import as_matrix, check_lambda, symmetrize

PSD_ATOL = 1e-12
PSD_FACTOR_RTOL = 1e-8
RANK_RTOL = 1e-12


def _check_psd(Q, name="Q"):
    Q = symmetrize(as_matrix(Q, name))
    if Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise DiffusionError(f"{name} has non-finite entries")
    w = np.linalg.eigvalsh(Q)
    if w.size and w[0] < -PSD_ATOL * max(1.0, np.abs(Q).max()):
        raise DiffusionError(f"{name} not positive semi-definite: smallest eigenvalue {w[0]:.6g}")
    return Q


class DiffusionSchedule:
    """Diffusion matrix as a function of ``lam``.

    Three kinds exist: ``zero``, ``constant`` and ``knots`` (piecewise-linear
    interpolation between ``(lam, Q)`` pairs, flat beyond the end knots).
    Instances are immutable.
    """

    __slots__ = ("kind", "n", "_Q", "_lams", "_Qs")

    def __init__(self, kind, n, Q=None, lams=None, Qs=None):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "_Q", Q)
        object.__setattr__(self, "_lams", lams)
        object.__setattr__(self, "_Qs", Qs)

    def __setattr__(self, name, value):
        raise AttributeError("DiffusionSchedule is immutable")

    @classmethod
    def zero(cls, n):
        Q = np.zeros((n, n))
        Q.setflags(write=False)
        return cls("zero", n, Q=Q)

    @classmethod
    def constant(cls, Q):
        Q = _check_psd(Q)
        if not np.any(Q):
            return cls.zero(Q.shape[0])
        Q.setflags(write=False)
        return cls("constant", Q.shape[0], Q=Q)

    @classmethod
    def scaled_identity(cls, scale, n):
        return cls.constant(float(scale) * np.eye(n))

    @classmethod
    def knots(cls, lams, Qs):
        lams = np.asarray(lams, dtype=float)
        if lams.ndim != 1 or lams.size < 1:
            raise ValidationError("knot table needs at least one lambda value")
        if np.any(np.diff(lams) <= 0):
            raise ValidationError("knot lambdas must be strictly increasing")
        Qs = np.stack([_check_psd(Q, f"Q at knot lambda={lam:g}") for lam, Q in zip(lams, Qs)])
        if Qs.shape[0] != lams.size:
            raise ValidationError("knot table has mismatched lambda and Q counts")
        if not np.any(Qs):
            return cls.zero(Qs.shape[1])
        lams.setflags(write=False)
        Qs.setflags(write=False)
        return cls("knots", Qs.shape[1], lams=lams, Qs=Qs)

    @property
    def is_zero(self):
        return self.kind == "zero"

    @property
    def is_constant(self):
        return self.kind in ("zero", "constant")

    def __call__(self, lam):
        if self.kind != "knots":
            return self._Q
        lams, Qs = self._lams, self._Qs
        if lam <= lams[0]:
            return Qs[0]
        if lam >= lams[-1]:
            return Qs[-1]
        k = int(np.searchsorted(lams, lam, side="right")) - 1
        t = (lam - lams[k]) / (lams[k + 1] - lams[k])
        return _check_psd((1.0 - t) * Qs[k] + t * Qs[k + 1], f"Q({lam:g})")

    def __repr__(self):
        return f"DiffusionSchedule(kind={self.kind!r}, n={self.n})"


def diffusion_at(Q, lam, n):
    """Resolve a schedule, matrix or scalar into the ``n x n`` matrix at ``lam``."""
    if isinstance(Q, DiffusionSchedule):
        if Q.n != n:
            raise ValidationError(f"diffusion schedule has dimension {Q.n}, expected {n}")
        return Q(lam)
    if Q is None:
        return np.zeros((n, n))
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 0:
        return float(Q) * np.eye(n)
    Q = symmetrize(as_matrix(Q, "Q"))
    if Q.shape != (n, n):
        raise ValidationError(f"Q has shape {Q.shape}, expected ({n}, {n})")
    return Q


def as_schedule(Q, n):
    if isinstance(Q, DiffusionSchedule):
        return Q
    return DiffusionSchedule.constant(diffusion_at(Q, 0.0, n))


@dataclass(frozen=True)
class FlowCoefficients:
    """Affine drift ``f(x) = A x + b`` plus a diffusion factor ``q`` (n x m)."""

    A: np.ndarray
    b: np.ndarray
    q_factor: np.ndarray

    def drift(self, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.b


def psd_factor(Q):
    """Return ``q`` with ``q q' = Q``; columns span the numerical range of ``Q``."""
    Q = symmetrize(as_matrix(Q, "Q"))
    scale = np.abs(Q).max(initial=0.0)
    w, v = np.linalg.eigh(Q)
    if scale > 0 and w[0] < -PSD_FACTOR_RTOL * scale:
        raise DiffusionError(
            f"Q not positive semi-definite: eigenvalue {w[0]:.6g} below "
            f"-{PSD_FACTOR_RTOL:g} * max|Q|"
        )
    keep = w > RANK_RTOL * max(w[-1], 0.0)
    if scale == 0:
        keep[:] = False
    return v[:, keep] * np.sqrt(w[keep])


def _gain(hom, S, Qm):
    return symmetrize(0.5 * S @ Qm @ S + 0.5 * hom.A_h)


def _drift(hom, x, lam, Sinv, K):
    grad_h = x @ hom.A_h + hom.b_h
    grad_p = x @ hom.S(lam) + hom.beta(lam)
    return (-grad_h + grad_p @ Sinv @ K) @ Sinv


def gain_K(hom, lam, Q):
    lam = check_lambda(lam)
    return _gain(hom, hom.S(lam), diffusion_at(Q, lam, hom.n))


def drift_f(hom, x, lam, Q):
    """Evaluate the flow drift at ``x`` (shape (n,) or (N, n))."""
    lam = check_lambda(lam)
    K = gain_K(hom, lam, Q)
    return _drift(hom, np.asarray(x, dtype=float), lam, hom.S_inverse(lam), K)


def affine_coefficients(hom, lam, Qm):
    """``(A, b)`` with ``f(x) = A x + b``; ``b`` is the drift evaluated at the origin."""
    Sinv = hom.S_inverse(lam)
    K = _gain(hom, hom.S(lam), Qm)
    return Sinv @ (K - hom.A_h), _drift(hom, np.zeros(hom.n), lam, Sinv, K)


def flow_coefficients(hom, lam, Q):
    lam = check_lambda(lam)
    Qm = diffusion_at(Q, lam, hom.n)
    A, b = affine_coefficients(hom, lam, Qm)
    return FlowCoefficients(A, b, psd_factor(Qm))
