"""Exponential-quadratic log-densities and the log-homotopy between them.

A :class:`QuadraticLogDensity` stores ``log q(x) = 0.5 x'Ax + b'x + c``.  A
:class:`Homotopy` pairs a Gaussian prior ``g`` with an exponential-quadratic
likelihood ``h`` and evaluates the normalized family

    p(x, lam) = g(x) h(x)**lam / Gamma(lam),    lam in [0, 1]

together with its closed-form mode, covariance and normalizer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularHomotopyError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)

# relative eigenvalue floor below which -S(lam) is treated as singular
SINGULAR_RTOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def as_matrix(a, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValidationError(f"{name} must be two-dimensional, got shape {a.shape}")
    return a


def as_vector(v, name="vector"):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


def symmetrize(a):
    return 0.5 * (a + a.T)


def check_lambda(lam):
    lam = float(lam)
    if not (-1e-12 <= lam <= 1.0 + 1e-12):
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def spd_eigh(a, name, rtol=0.0):
    """Eigendecomposition of a symmetric matrix that must be positive definite.

    Raises ValidationError quoting the smallest eigenvalue otherwise.
    """
    w, v = np.linalg.eigh(symmetrize(a))
    if not np.all(np.isfinite(w)) or w[0] <= rtol * max(w[-1], 0.0) or w[0] <= 0.0:
        raise ValidationError(
            f"{name} not positive definite: smallest eigenvalue {w[0]:.6g} "
            f"(largest {w[-1]:.6g})"
        )
    return w, v


@dataclass(frozen=True)
class QuadraticLogDensity:
    """``log q(x) = 0.5 x'Ax + b'x + c`` with symmetric ``A``."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        b = as_vector(self.b, "b")
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"A must be square, got shape {A.shape}")
        if A.shape[0] != b.shape[0]:
            raise ValidationError(f"A is {A.shape[0]}x{A.shape[1]} but b has length {b.shape[0]}")
        if A.shape[0] < 1:
            raise ValidationError("dimension must be at least 1")
        object.__setattr__(self, "A", _frozen(symmetrize(A)))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "c", float(self.c))

    @property
    def n(self):
        return self.A.shape[0]

    def __call__(self, x):
        """Evaluate the log-density at ``x`` of shape (n,) or (N, n)."""
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c

    def gradient(self, x):
        return np.asarray(x, dtype=float) @ self.A + self.b


def from_gaussian_prior(mean, covariance):
    """Natural parameters of ``N(mean, covariance)`` as a log-density.

    ``A = -inv(cov)``, ``b = inv(cov) mean`` and ``c`` carries the
    normalizing constant, so ``exp`` of the result integrates to one.
    """
    mean = as_vector(mean, "mean")
    cov = as_matrix(covariance, "covariance")
    if cov.shape != (mean.size, mean.size):
        raise ValidationError(
            f"covariance has shape {cov.shape}, expected ({mean.size}, {mean.size})"
        )
    w, v = spd_eigh(cov, "prior covariance")
    prec = symmetrize((v / w) @ v.T)
    b = prec @ mean
    logdet = np.sum(np.log(w)) + mean.size * LOG_2PI
    c = -0.5 * mean @ b - 0.5 * logdet
    return QuadraticLogDensity(-prec, b, c)


def from_linear_gaussian_measurement(H, R, z):
    """Log-likelihood of ``z = H x + v`` with ``v ~ N(0, R)`` as a function of ``x``.

    The curvature ``-H' inv(R) H`` is only semi-definite when ``H`` has fewer
    rows than columns.
    """
    H = as_matrix(H, "H")
    z = as_vector(z, "z")
    R = as_matrix(R, "R")
    d, n = H.shape
    if z.size != d:
        raise ValidationError(f"H has {d} rows but z has length {z.size}")
    if R.shape != (d, d):
        raise ValidationError(f"R has shape {R.shape}, expected ({d}, {d})")
    w, v = spd_eigh(R, "likelihood.R")
    Rinv = symmetrize((v / w) @ v.T)
    A = -symmetrize(H.T @ Rinv @ H)
    b = H.T @ (Rinv @ z)
    c = -0.5 * z @ Rinv @ z - 0.5 * (np.sum(np.log(w)) + d * LOG_2PI)
    return QuadraticLogDensity(A, b, c)


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(as_vector(self.mean, "mean")))
        object.__setattr__(self, "covariance", _frozen(symmetrize(as_matrix(self.covariance))))


@dataclass(frozen=True)
class Homotopy:
    """Gaussian prior ``g`` and exponential-quadratic likelihood ``h``.

    Construction certifies that ``-A_g`` is positive definite and ``-A_h``
    positive semi-definite, which makes ``S(lam) = A_g + lam A_h``
    negative definite (hence nonsingular) on the whole unit interval.
    """

    prior: QuadraticLogDensity
    likelihood: QuadraticLogDensity

    def __post_init__(self):
        n = self.prior.n
        if self.likelihood.n != n:
            raise ValidationError(
                f"prior has dimension {n} but likelihood has dimension {self.likelihood.n}"
            )
        wg = np.linalg.eigvalsh(-self.prior.A)
        if wg[0] <= SINGULAR_RTOL * max(wg[-1], 0.0) or wg[0] <= 0.0:
            raise ValidationError(
                f"(A3) violated: prior curvature A_g has eigenvalue {-wg[0]:+.6g}, "
                "must be negative definite"
            )
        wh = np.linalg.eigvalsh(-self.likelihood.A)
        tol = 1e-12 * max(1.0, np.abs(wh).max(initial=0.0))
        if wh[0] < -tol:
            raise ValidationError(
                f"(A3) violated: likelihood curvature A_h has eigenvalue {-wh[0]:+.6g}, "
                "must be negative semi-definite"
            )

    @classmethod
    def gaussian(cls, prior_mean, prior_cov, H, R, z):
        return cls(
            from_gaussian_prior(prior_mean, prior_cov),
            from_linear_gaussian_measurement(H, R, z),
        )

    @property
    def n(self):
        return self.prior.n

    @property
    def A_g(self):
        return self.prior.A

    @property
    def A_h(self):
        return self.likelihood.A

    @property
    def b_g(self):
        return self.prior.b

    @property
    def b_h(self):
        return self.likelihood.b

    def S(self, lam):
        return self.prior.A + lam * self.likelihood.A

    def beta(self, lam):
        """Linear coefficient ``b_g + lam b_h`` of log p."""
        return self.prior.b + lam * self.likelihood.b

    def S_inverse(self, lam):
        """``inv(S(lam))`` via the eigendecomposition of ``-S(lam)``."""
        w, v = np.linalg.eigh(-self.S(lam))
        if not np.all(np.isfinite(w)) or w[0] < SINGULAR_RTOL * abs(w[-1]) or w[0] <= 0.0:
            raise SingularHomotopyError(
                lam,
                f"homotopy Hessian singular at lambda={lam:.6g}: eigenvalues of -S "
                f"span [{w[0]:.3g}, {w[-1]:.3g}]",
            )
        return -symmetrize((v / w) @ v.T)


def hessian_log_p(hom, lam):
    return hom.S(check_lambda(lam))


def grad_log_p(hom, x, lam):
    lam = check_lambda(lam)
    return np.asarray(x, dtype=float) @ hom.S(lam) + hom.beta(lam)


def posterior_moments(hom, lam):
    lam = check_lambda(lam)
    Sinv = hom.S_inverse(lam)
    return PosteriorMoments(-Sinv @ hom.beta(lam), -Sinv)


def log_gamma(hom, lam):
    """Log of the normalizer ``Gamma(lam) = integral of g h**lam``."""
    lam = check_lambda(lam)
    Sinv = hom.S_inverse(lam)
    beta = hom.beta(lam)
    _, logdet = np.linalg.slogdet(-hom.S(lam))
    return (
        hom.prior.c
        + lam * hom.likelihood.c
        - 0.5 * beta @ Sinv @ beta
        + 0.5 * hom.n * LOG_2PI
        - 0.5 * logdet
    )


def dlog_gamma(hom, lam):
    """Derivative of :func:`log_gamma` in ``lam``; equals ``E_p[log h]``."""
    lam = check_lambda(lam)
    Sinv = hom.S_inverse(lam)
    beta = hom.beta(lam)
    A_h, b_h = hom.A_h, hom.b_h
    return (
        hom.likelihood.c
        - b_h @ Sinv @ beta
        + 0.5 * beta @ Sinv @ A_h @ Sinv @ beta
        - 0.5 * np.trace(Sinv @ A_h)
    )


def log_p(hom, x, lam):
    lam = check_lambda(lam)
    x = np.asarray(x, dtype=float)
    return hom.prior(x) + lam * hom.likelihood(x) - log_gamma(hom, lam)
