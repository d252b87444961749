"""Propagation of particle ensembles through the flow on a uniform lambda grid.

Euler-Maruyama handles any diffusion schedule; classical RK4 is available
for the deterministic (zero diffusion) flow.  Per-row arithmetic is written
with elementwise operations only, so splitting particles across worker
threads never changes a single bit of the result.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .dynamics import as_schedule, flow_coefficients
from .errors import DivergenceError, ValidationError
from .lyapunov import diagnostics_batch
from .quadratic import as_matrix, posterior_moments

SCHEMES = ("euler_maruyama", "rk4_deterministic")

# below this many particles threading costs more than it saves
_MIN_CHUNK = 4096


def worker_count():
    """Worker threads allowed by ``FLOWFILT_THREADS`` (default: all CPUs)."""
    env = os.environ.get("FLOWFILT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"FLOWFILT_THREADS must be a positive integer, got {env!r}")
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Ensemble:
    """``N`` particles in R^n at a common ``lam``; ``ids`` name their noise streams."""

    particles: np.ndarray
    lam: float = 0.0
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = as_matrix(self.particles, "particles")
        if X.shape[0] < 1:
            raise ValidationError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(X)):
            raise ValidationError("ensemble particles must be finite")
        ids = np.arange(X.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (X.shape[0],):
            raise ValidationError("ids must have one entry per particle")
        lam = float(self.lam)
        if not (-1e-12 <= lam <= 1.0 + 1e-12):
            raise ValidationError(f"ensemble lambda must lie in [0, 1], got {lam}")
        object.__setattr__(self, "particles", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "lam", min(max(lam, 0.0), 1.0))

    @property
    def N(self):
        return self.particles.shape[0]

    @property
    def n(self):
        return self.particles.shape[1]


@dataclass(frozen=True)
class IntegratorConfig:
    steps: int = 1000
    scheme: str = "euler_maruyama"
    seed: int = 0
    record_every: int = None

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        every = self.steps if self.record_every is None else int(self.record_every)
        if every < 1:
            raise ValidationError(f"record_every must be positive, got {self.record_every}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "record_every", every)


def affine_rows(X, A, b=None):
    """Row-wise ``X @ A.T + b`` using a fixed, elementwise summation order."""
    out = np.zeros((X.shape[0], A.shape[0])) if b is None else np.tile(b, (X.shape[0], 1))
    for j in range(A.shape[1]):
        out += X[:, j : j + 1] * A[:, j]
    return out


def _parallel_rows(fn, X, threads, *extra):
    threads = worker_count() if threads is None else max(1, int(threads))
    N = X.shape[0]
    chunks = min(threads, max(1, N // _MIN_CHUNK))
    if chunks <= 1:
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(X, *extra)
    bounds = np.linspace(0, N, chunks + 1).astype(int)
    out = np.empty_like(X)

    def work(k):
        lo, hi = bounds[k], bounds[k + 1]
        # overflow is reported by _check_finite instead
        with np.errstate(over="ignore", invalid="ignore"):
            out[lo:hi] = fn(X[lo:hi], *(e[lo:hi] for e in extra))

    with ThreadPoolExecutor(chunks) as pool:
        list(pool.map(work, range(chunks)))
    return out


def _check_finite(X, ids, lam):
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
        raise DivergenceError(ids[bad], lam)


def sample_gaussian(mean, covariance, N, noise, counter=0):
    """``N`` draws from ``N(mean, covariance)`` at ``lam = 0`` using ``noise``."""
    if int(N) < 1:
        raise ValidationError(f"N must be positive, got {N}")
    mean = np.asarray(mean, dtype=float)
    L = np.linalg.cholesky(covariance)
    ids = np.arange(int(N))
    z = noise.normals(counter, ids, mean.size)
    return Ensemble(affine_rows(z, L, mean), 0.0, ids)


def sample_prior(hom, N, seed):
    """``N`` iid draws from the Gaussian prior at ``lam = 0``."""
    prior = posterior_moments(hom, 0.0)
    return sample_gaussian(prior.mean, prior.covariance, N, rng.NoiseStream(seed, rng.PRIOR))


def step(ens, hom, diffusion, dlam, noise=None, counter=0, threads=None):
    """One Euler-Maruyama step ``x + f dlam + q xi sqrt(dlam)``.

    ``noise`` is a :class:`flowfilt.rng.NoiseStream`; particle ``i`` draws
    ``xi`` from the block addressed by ``counter``.
    """
    dlam = float(dlam)
    if dlam < 0 or ens.lam + dlam > 1.0 + 1e-12:
        raise ValidationError(f"step of {dlam} from lambda={ens.lam} leaves [0, 1]")
    if dlam == 0.0:
        return ens
    coef = flow_coefficients(hom, ens.lam, as_schedule(diffusion, hom.n)(ens.lam))
    A, b, q = coef.A, coef.b, coef.q_factor
    new_lam = min(ens.lam + dlam, 1.0)

    if q.shape[1] == 0:
        X = _parallel_rows(lambda x: x + affine_rows(x, A, b) * dlam, ens.particles, threads)
    else:
        if noise is None:
            raise ValidationError("a noise stream is required when the diffusion is non-zero")
        xi = noise.normals(counter, ens.ids, q.shape[1])
        sq = np.sqrt(dlam)
        X = _parallel_rows(
            lambda x, e: x + affine_rows(x, A, b) * dlam + affine_rows(e, q) * sq,
            ens.particles,
            threads,
            xi,
        )
    _check_finite(X, ens.ids, new_lam)
    return Ensemble(X, new_lam, ens.ids)


def rk4_step(ens, hom, dlam, threads=None):
    """Classical RK4 step of the zero-diffusion flow ``dx/dlam = A(lam) x + b(lam)``."""
    dlam = float(dlam)
    if dlam < 0 or ens.lam + dlam > 1.0 + 1e-12:
        raise ValidationError(f"step of {dlam} from lambda={ens.lam} leaves [0, 1]")
    if dlam == 0.0:
        return ens
    lam = ens.lam
    end = min(lam + dlam, 1.0)
    c0 = flow_coefficients(hom, lam, 0.0)
    c1 = flow_coefficients(hom, lam + 0.5 * dlam, 0.0)
    c2 = flow_coefficients(hom, end, 0.0)

    def rk4(x):
        k1 = affine_rows(x, c0.A, c0.b)
        k2 = affine_rows(x + 0.5 * dlam * k1, c1.A, c1.b)
        k3 = affine_rows(x + 0.5 * dlam * k2, c1.A, c1.b)
        k4 = affine_rows(x + dlam * k3, c2.A, c2.b)
        return x + (dlam / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    X = _parallel_rows(rk4, ens.particles, threads)
    _check_finite(X, ens.ids, end)
    return Ensemble(X, end, ens.ids)


def record_schedule(cfg, extra=()):
    """Step indices at which diagnostics are emitted."""
    marks = set(range(0, cfg.steps + 1, cfg.record_every))
    marks.update((0, cfg.steps))
    marks.update(int(k) for k in extra if 0 <= int(k) <= cfg.steps)
    return marks


def flow_to_posterior(
    ens0, hom, diffusion, cfg, sink=None, noise=None, threads=None, extra_records=()
):
    """Integrate an ensemble from ``lam = 0`` to ``lam = 1`` in ``cfg.steps`` uniform steps.

    When ``sink`` is given, a diagnostics batch is passed to ``sink.accept``
    at step 0, every ``cfg.record_every`` steps, at the final step and at
    any step listed in ``extra_records``.
    """
    if abs(ens0.lam) > 1e-12:
        raise ValidationError(f"flow must start at lambda=0, ensemble is at {ens0.lam}")
    schedule = as_schedule(diffusion, hom.n)
    if cfg.scheme == "rk4_deterministic" and not schedule.is_zero:
        raise ValidationError("rk4_deterministic requires zero diffusion")
    if noise is None:
        noise = rng.NoiseStream(cfg.seed, rng.FLOW)
    marks = record_schedule(cfg, extra_records) if sink is not None else ()

    ens = ens0
    if 0 in marks:
        sink.accept(diagnostics_batch(hom, ens, schedule))
    for k in range(cfg.steps):
        dlam = (k + 1) / cfg.steps - ens.lam
        if cfg.scheme == "rk4_deterministic":
            ens = rk4_step(ens, hom, dlam, threads)
        else:
            ens = step(ens, hom, schedule, dlam, noise, k, threads)
        if k + 1 in marks:
            sink.accept(diagnostics_batch(hom, ens, schedule))
    return ens
