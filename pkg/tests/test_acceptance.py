"""Acceptance suite: one test per numbered criterion.

Each test prints a single ``criterion N PASS|FAIL`` line with the measured
quantities; the lines are repeated in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

from flowfilt import (
    LV,
    V,
    V1,
    V2,
    DiffusionSchedule,
    Ensemble,
    Homotopy,
    IntegratorConfig,
    L_log_p,
    LinearDynamics,
    MeasurementModel,
    MemorySink,
    PosteriorMoments,
    QuadraticLogDensity,
    classify_partition,
    cond1_residual,
    covariance_gap,
    dlog_gamma,
    drift_f,
    flow_coefficients,
    flow_to_posterior,
    from_gaussian_prior,
    grad_log_p,
    kalman_filter,
    log_p,
    mahalanobis_gap,
    posterior_moments,
    propagate_moments,
    sample_moments,
    sample_prior,
    sequential_flow_filter,
    step,
)
from flowfilt import rng as noise
from flowfilt.integrator import sample_gaussian
from flowfilt.moments import analytic_trajectory
from flowfilt.scenario import builtin_scenario, run, validate_scenario

pytestmark = pytest.mark.slow

SEEDS = range(20)


def canonical():
    return Homotopy.gaussian([0.0], [[1.0]], [[1.0]], [[1.0]], [1.0])


def fully_measured_2d():
    return Homotopy.gaussian([0.0, 0.0], np.eye(2), np.eye(2), np.eye(2), [1.0, 1.0])


def posterior_trials(hom, Q, N=20_000, steps=1000, seeds=SEEDS):
    """Flow prior samples to lam = 1 for each seed and score them against the exact posterior."""
    scheme = "rk4_deterministic" if DiffusionSchedule.constant(np.atleast_2d(Q) * np.eye(hom.n)).is_zero else "euler_maruyama"
    ref = posterior_moments(hom, 1.0)
    rows = []
    for seed in seeds:
        start = time.perf_counter()
        out = flow_to_posterior(sample_prior(hom, N, seed), hom, Q, IntegratorConfig(steps, scheme, seed))
        elapsed = time.perf_counter() - start
        sm = sample_moments(out)
        rows.append((mahalanobis_gap(sm, ref), covariance_gap(sm, ref), elapsed))
    rows = np.array(rows)
    passes = int(np.sum((rows[:, 0] < 4) & (rows[:, 1] < 0.05)))
    return passes, rows


@pytest.mark.criterion(1, "posterior correctness")
def test_posterior_correctness(report):
    passes, rows = posterior_trials(canonical(), 0.5)
    report(
        f"{passes}/20 seeds within bounds; max mahalanobis {rows[:, 0].max():.3f} (< 4), "
        f"max covariance gap {rows[:, 1].max():.4f} (< 0.05); slowest run {rows[:, 2].max():.2f} s (< 10 s), "
        f"all seeds {rows[:, 2].sum():.1f} s"
    )
    assert passes >= 19
    assert rows[:, 2].max() < 10.0


@pytest.mark.criterion(2, "Q-invariance of the transported law")
def test_q_invariance(report):
    cases = {
        "Q=0": (canonical(), 0.0),
        "Q=0.1": (canonical(), 0.1),
        "Q=1": (canonical(), 1.0),
        "2D Q=diag(1,0)": (fully_measured_2d(), np.diag([1.0, 0.0])),
    }
    parts, ok = [], True
    for label, (hom, Q) in cases.items():
        passes, rows = posterior_trials(hom, Q)
        ok &= passes >= 19
        parts.append(f"{label} {passes}/20 (maha {rows[:, 0].max():.2f}, cov {rows[:, 1].max():.4f})")
    report("; ".join(parts))
    assert ok


@pytest.mark.criterion(3, "moment ODE identity")
def test_moment_identity(report):
    scenarios = {
        "1D canonical": canonical(),
        "2D partial": Homotopy.gaussian([0.0, 0.0], np.eye(2), [[1.0, 0.0]], [[1.0]], [1.0]),
        "2D A_h=0": Homotopy(
            from_gaussian_prior([0.5, -1.0], [[1.0, 0.3], [0.3, 2.0]]),
            QuadraticLogDensity(np.zeros((2, 2)), [0.7, -0.4], -0.2),
        ),
    }
    parts, worst_err, worst_time = [], 0.0, 0.0
    for label, hom in scenarios.items():
        err = 0.0
        for q in (0.0, 0.5):
            start = time.perf_counter()
            traj = propagate_moments(hom, q * np.eye(hom.n), 2000)
            elapsed = time.perf_counter() - start
            exact = analytic_trajectory(hom, traj.lambdas)
            err = max(err, np.abs(traj.means - exact.means).max(), np.abs(traj.covariances - exact.covariances).max())
            worst_err, worst_time = max(worst_err, err), max(worst_time, elapsed)
        parts.append(f"{label} max err {err:.1e}")
    report(f"{'; '.join(parts)}; worst {worst_err:.2e} (< 1e-7); slowest {worst_time:.2f} s (< 1 s)")
    assert worst_err < 1e-7
    assert worst_time < 1.0


@pytest.mark.criterion(4, "exact flow conservation")
def test_exact_flow_conservation(report):
    hom = canonical()
    parts, ok = [], True
    for x0 in (0.5, 2.0, -3.0):
        sink = MemorySink()
        cfg = IntegratorConfig(2000, "rk4_deterministic", record_every=1)
        flow_to_posterior(Ensemble([[x0]]), hom, 0.0, cfg, sink=sink)
        X = np.array([b.X[0] for b in sink.batches])
        lams = sink.lambdas
        v1_0 = float(V1(hom, [x0], 0.0))
        v = np.array([V(hom, x, lam) for x, lam in zip(X, lams)])
        v1 = np.array([V1(hom, x, lam) for x, lam in zip(X, lams)])
        v2 = np.array([V2(hom, x, lam) for x, lam in zip(X, lams)])
        drift = np.abs(v - v1_0).max() / max(v1_0, 1e-12)
        tol = 1e-6 * (1 + v1_0)
        sandwich = bool(np.all(v1 >= v1_0 - tol) and np.all(v2 <= v1_0 + tol))
        ok &= drift < 1e-6 and sandwich
        parts.append(f"x0={x0:g} drift {drift:.1e} sandwich {'ok' if sandwich else 'broken'}")
    report("; ".join(parts) + " (drift < 1e-6)")
    assert ok


def _sample_scores(rng, Q, lo, hi, region, count, n):
    """Scores with y'Qy strictly inside the requested region."""
    u = rng.standard_normal((count, n))
    quad = np.einsum("ij,jk,ik->i", u, Q, u)
    u = u[quad > 1e-12 * quad.max()]
    quad = quad[quad > 1e-12 * quad.max()]
    if region == "S1":
        target = hi * (1 + rng.uniform(1e-6, 3.0, u.shape[0]))
    else:
        target = lo * rng.uniform(0.0, 1 - 1e-6, u.shape[0])
    return u * np.sqrt(target / quad)[:, None]


@pytest.mark.criterion(5, "partition signs")
def test_partition_signs(report):
    rng = np.random.default_rng(2021)
    cases = {
        "1D": (canonical(), np.array([[1.0]])),
        "2D": (Homotopy.gaussian([0.0, 0.0], np.eye(2), [[1.0, 0.0]], [[1.0]], [1.0]), np.array([[1.0, 0.3], [0.3, 0.5]])),
    }
    parts, ok = [], True
    for label, (hom, Q) in cases.items():
        lo, hi = np.trace(Q @ -hom.A_g), np.trace(Q @ -(hom.A_g + hom.A_h))
        for region, sign in (("S1", -1.0), ("S2", 1.0)):
            Y = _sample_scores(rng, Q, lo, hi, region, 10_000, hom.n)
            lams = rng.uniform(0.0, 1.0, Y.shape[0])
            lams[:100] = 1.0
            lams[100:200] = 0.0
            labels = classify_partition(hom, Y, Q)
            # particle positions whose score is y: x = S^-1 (y - beta)
            X = np.array([np.linalg.solve(hom.S(l), y - hom.beta(l)) for y, l in zip(Y, lams)])
            lv = np.array([LV(hom, x, l, Q) for x, l in zip(X, lams)])
            correct = np.mean((labels == region) & (np.sign(lv) == sign))
            ok &= correct == 1.0
            parts.append(f"{label} {region} {100 * correct:.2f}% of {Y.shape[0]}")
    report("; ".join(parts))
    assert ok


def drift_identity(hom, Q, lam0, N=50_000, window=0.02, substeps=20, seed=0):
    """Slope of the ensemble mean of log p over ``window`` against the averaged generator.

    The particles start as exact draws from ``p(., lam0)``.  Returns
    ``(raw slope, slope with martingale control variate, generator average)``;
    the control variate subtracts the zero-mean Ito integral of grad log p
    against the very noise increments that drove the particles.
    """
    mo = posterior_moments(hom, lam0)
    ens = sample_gaussian(mo.mean, mo.covariance, N, noise.NoiseStream(seed, noise.PRIOR, 1))
    ens = Ensemble(ens.particles, lam0, ens.ids)
    stream = noise.NoiseStream(seed, noise.FLOW, 1)
    dl = window / substeps
    phi0 = log_p(hom, ens.particles, lam0)
    martingale = np.zeros(N)
    gen = []
    for k in range(substeps):
        lam = lam0 + k * dl
        gen.append(np.mean(L_log_p(hom, ens.particles, lam, Q)) - dlog_gamma(hom, lam))
        q = flow_coefficients(hom, lam, Q).q_factor
        if q.shape[1]:
            xi = stream.normals(k, ens.ids, q.shape[1])
            martingale += np.einsum("ij,ij->i", grad_log_p(hom, ens.particles, lam) @ q, xi) * np.sqrt(dl)
        ens = step(ens, hom, Q, lam0 + (k + 1) * dl - ens.lam, stream, k)
    lam1 = lam0 + window
    gen.append(np.mean(L_log_p(hom, ens.particles, lam1, Q)) - dlog_gamma(hom, lam1))
    gen = np.array(gen)
    average = (0.5 * gen[0] + gen[1:-1].sum() + 0.5 * gen[-1]) / substeps
    dphi = log_p(hom, ens.particles, lam1) - phi0
    return dphi.mean() / window, (dphi - martingale).mean() / window, average


@pytest.mark.criterion(6, "drift-mean identity")
def test_drift_mean_identity(report):
    hom = canonical()
    parts, worst = [], 0.0
    for Q in (0.0, 0.5):
        for lam in (0.1, 0.5, 0.9):
            raw, corrected, gen = drift_identity(hom, Q, lam)
            slope = raw if Q == 0.0 else corrected
            rel = abs(slope - gen) / abs(gen)
            worst = max(worst, rel)
            extra = "" if Q == 0.0 else f" (raw {abs(raw - gen) / abs(gen):.3f})"
            parts.append(f"Q={Q:g} lam={lam:g} rel {rel:.4f}{extra}")
    report("; ".join(parts) + f"; worst {worst:.4f} (< 0.05)")
    assert worst < 0.05


@pytest.mark.criterion(7, "necessary-condition residual")
def test_necessary_condition(report):
    rng = np.random.default_rng(7)
    cases = {
        "1D": canonical(),
        "2D": Homotopy.gaussian([0.0, 0.0], np.eye(2), [[1.0, 0.0]], [[1.0]], [1.0]),
    }
    worst, weakest_probe = 0.0, np.inf
    for hom in cases.values():
        for q in (0.0, 0.8):
            Q = q * np.eye(hom.n)
            for _ in range(50):
                x = rng.normal(0.0, 2.0, hom.n)
                lam = rng.uniform(0.01, 0.99)
                worst = max(worst, np.abs(cond1_residual(hom, x, lam, Q)).max())

                def corrupted(z, lam_, hom=hom, Q=Q):
                    return drift_f(hom, z, lam_, Q) + 0.1

                probe = np.abs(cond1_residual(hom, x, lam, Q, drift=corrupted)).max()
                weakest_probe = min(weakest_probe, probe)
    report(f"max residual {worst:.2e} (< 1e-6) over 200 points; weakest corrupted-drift probe {weakest_probe:.3f} (> 1e-3)")
    assert worst < 1e-6
    assert weakest_probe > 1e-3


@pytest.mark.criterion(8, "sequential filter vs Kalman")
def test_sequential_filter(report):
    init = PosteriorMoments([0.0], [[1.0]])
    dyn = LinearDynamics([[1.0]], [[0.1]])
    mm = MeasurementModel([[1.0]], [[1.0]])
    zs = [[0.8], [1.3], [0.4], [1.1], [1.7]]
    exact = kalman_filter(init, dyn, mm, zs)
    N = 50_000
    passes, worst_m, worst_v = 0, 0.0, 0.0
    start = time.perf_counter()
    for seed in SEEDS:
        out = sequential_flow_filter(init, dyn, mm, zs, IntegratorConfig(100, seed=seed), N, diffusion=0.5)
        good = True
        for (est, _), kf in zip(out, exact):
            P = kf.covariance[0, 0]
            m_ratio = abs(est.mean[0] - kf.mean[0]) / (4 * np.sqrt(P / N))
            v_ratio = abs(est.covariance[0, 0] - P) / (5 * np.sqrt(2 / N) * P)
            worst_m, worst_v = max(worst_m, m_ratio), max(worst_v, v_ratio)
            good &= m_ratio < 1 and v_ratio < 1
        passes += good
    elapsed = time.perf_counter() - start
    report(
        f"{passes}/20 seeds track every step; worst mean error {worst_m:.2f} and variance error "
        f"{worst_v:.2f} of their bounds; {elapsed:.1f} s (< 30 s)"
    )
    assert passes >= 19
    assert elapsed < 30.0


@pytest.mark.criterion(9, "determinism")
def test_determinism(report, tmp_path, monkeypatch):
    names = ["canonical_1d", "partial_2d", "canonical_1d_sweep"]
    parts, ok = [], True
    for name in names:
        with open(builtin_scenario(name)) as fh:
            cfg = validate_scenario(json.load(fh))
        blobs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            monkeypatch.setenv("FLOWFILT_THREADS", threads)
            summary = run(cfg, out_dir=str(tmp_path / f"{name}_{tag}"))
            with open(summary.trace_path, "rb") as fh:
                blobs.append(fh.read())
        same = blobs[0] == blobs[1] == blobs[2]
        ok &= same
        parts.append(f"{name} ({len(blobs[0]) // 1024} KiB) {'identical' if same else 'DIFFERENT'}")
    report("; ".join(parts) + " across two runs and FLOWFILT_THREADS 1 vs 4")
    assert ok
