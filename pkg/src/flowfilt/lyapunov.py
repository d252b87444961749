"""Stability diagnostics for the flow.

Everything here is evaluated in closed form for quadratic log-densities:
the generator applied to ``log p`` (``L log p = 0.5 y'Qy + gamma(lam)``
with the score ``y = grad log p``), the Lyapunov function
``V = y' M(lam) y`` with ``M = inv(-S(lam))`` and its constant-weight
bounds ``V1``/``V2``, the drift ``LV = -y'Qy + tr(Q (-S))`` and the score
space partition it induces.  :func:`cond1_residual` checks, by finite
differences, the transport condition any density-preserving drift must
satisfy.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import DiffusionSchedule, diffusion_at, drift_f
from .quadratic import check_lambda, log_p, symmetrize

S1, S2, S3 = "S1", "S2", "S3"


@dataclass(frozen=True)
class LyapunovWeights:
    """``M = inv(-S(lam))``, ``M1 = inv(-A_g)``, ``M2 = inv(-A_g - A_h)``."""

    M: np.ndarray
    M1: np.ndarray
    M2: np.ndarray


def lyapunov_weights(hom, lam):
    lam = check_lambda(lam)
    return LyapunovWeights(
        -hom.S_inverse(lam), -hom.S_inverse(0.0), -hom.S_inverse(1.0)
    )


def _quad(Y, M):
    return np.einsum("...i,ij,...j->...", Y, M, Y)


def _score(hom, x, lam):
    return np.asarray(x, dtype=float) @ hom.S(lam) + hom.beta(lam)


def gamma(hom, lam, Q):
    """The x-independent part of ``L log p``."""
    lam = check_lambda(lam)
    Qm = diffusion_at(Q, lam, hom.n)
    S = hom.S(lam)
    Sinv = hom.S_inverse(lam)
    beta = hom.beta(lam)
    return (
        hom.likelihood.c
        - beta @ Sinv @ hom.b_h
        + 0.5 * beta @ Sinv @ hom.A_h @ Sinv @ beta
        + 0.5 * np.trace(Qm @ S)
    )


def L_log_p(hom, x, lam, Q):
    """Generator of the flow applied to ``log g + lam log h``.

    The normalizer is not differentiated here; subtract
    :func:`flowfilt.quadratic.dlog_gamma` to obtain the drift of the
    normalized ``log p``.
    """
    lam = check_lambda(lam)
    Qm = diffusion_at(Q, lam, hom.n)
    y = _score(hom, x, lam)
    return 0.5 * _quad(y, Qm) + gamma(hom, lam, Qm)


def V(hom, x, lam):
    lam = check_lambda(lam)
    return _quad(_score(hom, x, lam), -hom.S_inverse(lam))


def V1(hom, x, lam):
    """``y' M1 y`` for the score of ``p(., lam)`` at ``x``."""
    lam = check_lambda(lam)
    return _quad(_score(hom, x, lam), -hom.S_inverse(0.0))


def V2(hom, x, lam):
    lam = check_lambda(lam)
    return _quad(_score(hom, x, lam), -hom.S_inverse(1.0))


def LV(hom, x, lam, Q):
    lam = check_lambda(lam)
    Qm = diffusion_at(Q, lam, hom.n)
    y = _score(hom, x, lam)
    return -_quad(y, Qm) + np.trace(Qm @ -hom.S(lam))


def partition_thresholds(hom, Q):
    """``(tr(Q M1^-1), tr(Q M2^-1))`` for a constant ``Q``."""
    Qm = diffusion_at(Q, 0.0, hom.n)
    return np.trace(Qm @ -hom.A_g), np.trace(Qm @ -(hom.A_g + hom.A_h))


def classify_partition(hom, y, Q):
    """Label scores ``y`` (shape (n,) or (N, n)) as S1, S2 or S3.

    S1: ``y'Qy > tr(Q M2^-1)``; S2: ``y'Qy < tr(Q M1^-1)``; everything else,
    including ties, is S3.
    """
    if isinstance(Q, DiffusionSchedule) and not Q.is_constant:
        raise ValueError("partitions are defined for a constant diffusion matrix")
    Qm = diffusion_at(Q, 0.0, hom.n)
    lo, hi = partition_thresholds(hom, Qm)
    yQy = _quad(np.asarray(y, dtype=float), Qm)
    labels = np.where(yQy > hi, S1, np.where(yQy < lo, S2, S3))
    return str(labels) if labels.ndim == 0 else labels


def cond1_residual(hom, x, lam, Q, drift=None, rel_step=1e-4):
    """Residual of the necessary transport condition at a single point ``x``.

    Returns ``LHS - RHS`` of

        grad d(log p)/dlam = -grad div f - S f - J' y
                             + grad[(1/2p) sum_ij d2(p Q_ij)/dx_i dx_j]

    where ``J`` is the Jacobian of the drift.  ``drift(x, lam)`` defaults to
    the flow drift; passing a different callable probes the detector.  All
    drift derivatives and the diffusion term use central differences with
    step ``rel_step * (1 + |x_i|)``.
    """
    lam = check_lambda(lam)
    x = np.asarray(x, dtype=float)
    n = hom.n
    Qm = diffusion_at(Q, lam, n)
    if drift is None:
        def drift(z, lam_):
            return drift_f(hom, z, lam_, Qm)
    h = rel_step * (1.0 + np.abs(x))
    E = np.eye(n)
    S = hom.S(lam)

    def grad_logp(z):
        return _score(hom, z, lam)

    def jacobian(fn, z):
        cols = [(fn(z + h[j] * E[j]) - fn(z - h[j] * E[j])) / (2.0 * h[j]) for j in range(n)]
        return np.column_stack(cols)

    def f(z):
        return np.asarray(drift(z, lam), dtype=float)

    def div_f(z):
        return np.trace(jacobian(f, z))

    def diffusion_term(z):
        # (1/p) d2p/dxi dxj = d2 log p/dxi dxj + d_i log p d_j log p
        hess = symmetrize(jacobian(grad_logp, z))
        y = grad_logp(z)
        return 0.5 * np.sum(Qm * hess) + 0.5 * y @ Qm @ y

    def gradient(fn, z):
        return np.array([(fn(z + h[i] * E[i]) - fn(z - h[i] * E[i])) / (2.0 * h[i]) for i in range(n)])

    y = grad_logp(x)
    J = jacobian(f, x)
    lhs = x @ hom.A_h + hom.b_h
    rhs = -gradient(div_f, x) - S @ f(x) - J.T @ y + gradient(diffusion_term, x)
    return lhs - rhs


@dataclass(frozen=True)
class DiagnosticsRecord:
    lam: float
    particle_id: int
    x: np.ndarray
    log_p: float
    y: np.ndarray
    V: float
    V1: float
    V2: float
    LV: float
    gamma: float
    partition: str


@dataclass(frozen=True)
class DiagnosticsBatch:
    """Columnar diagnostics for a whole ensemble at one ``lam``."""

    lam: float
    ids: np.ndarray
    X: np.ndarray
    log_p: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    LV: np.ndarray
    gamma: float
    partition: np.ndarray

    def __len__(self):
        return self.ids.size

    def records(self):
        return [
            DiagnosticsRecord(
                self.lam, int(self.ids[i]), self.X[i], float(self.log_p[i]), self.Y[i],
                float(self.V[i]), float(self.V1[i]), float(self.V2[i]), float(self.LV[i]),
                float(self.gamma), str(self.partition[i]),
            )
            for i in range(len(self))
        ]


def diagnostics_batch(hom, ens, Q):
    lam = check_lambda(ens.lam)
    Qm = diffusion_at(Q, lam, hom.n)
    X = ens.particles
    S = hom.S(lam)
    Y = _score(hom, X, lam)
    yQy = _quad(Y, Qm)
    lo, hi = np.trace(Qm @ -hom.A_g), np.trace(Qm @ -(hom.A_g + hom.A_h))
    return DiagnosticsBatch(
        lam=lam,
        ids=ens.ids,
        X=X,
        log_p=log_p(hom, X, lam),
        Y=Y,
        V=_quad(Y, -hom.S_inverse(lam)),
        V1=_quad(Y, -hom.S_inverse(0.0)),
        V2=_quad(Y, -hom.S_inverse(1.0)),
        LV=-yQy + np.trace(Qm @ -S),
        gamma=float(gamma(hom, lam, Qm)),
        partition=np.where(yQy > hi, S1, np.where(yQy < lo, S2, S3)),
    )


def record(hom, ens, Q):
    """One :class:`DiagnosticsRecord` per particle of ``ens``."""
    return diagnostics_batch(hom, ens, Q).records()


class MemorySink:
    """Diagnostics sink that keeps every batch in memory."""

    def __init__(self):
        self.batches = []

    def accept(self, batch):
        self.batches.append(batch)

    def records(self):
        return [r for b in self.batches for r in b.records()]

    @property
    def lambdas(self):
        return np.array([b.lam for b in self.batches])
