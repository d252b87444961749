"""Scenario files, runs and their machine-readable outputs.

A scenario is a JSON document::

    {
      "name": "canonical_1d", "seed": 7, "dimension": 1,
      "prior": {"mean": [0.0], "covariance": [[1.0]]},
      "likelihood": {"H": [[1.0]], "R": [[1.0]], "z": [1.0]},
      "diffusion": {"kind": "scaled_identity", "scale": 0.5},
      "particles": 20000,
      "integrator": {"steps": 1000, "scheme": "auto", "record_every": 100},
      "mode": "single_update",
      "output": {"dir": "out"}
    }

``likelihood`` may instead give raw ``{"A_h", "b_h", "c_h"}``.  ``diffusion``
is ``"zero"``, ``{"kind": "zero"}``, ``{"kind": "constant", "Q": [[...]]}``,
``{"kind": "scaled_identity", "scale": s}`` or
``{"kind": "knots", "knots": [{"lambda": 0.0, "Q": [[...]]}, ...]}``.
Optional keys: ``initial_particles`` (pinned starting points, overrides
sampling), ``sweep_points`` (diagnostics_sweep grid size, default 101) and,
for ``mode == "sequential"``, a ``sequential`` block with ``F``, ``W`` and
``measurements``; the likelihood block then supplies ``H`` and ``R`` only.

Each run writes ``<name>_<seed>_trace.csv`` and ``<name>_<seed>_summary.json``.
"""

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dynamics import DiffusionSchedule
from .errors import DivergenceError, FlowFiltError, SingularHomotopyError, ValidationError
from .integrator import Ensemble, IntegratorConfig, flow_to_posterior, sample_prior
from .lyapunov import S1, S2, S3
from .oracle import (
    LinearDynamics,
    MeasurementModel,
    conjugate_posterior,
    kalman_filter,
    sequential_flow_filter,
)
from .quadratic import (
    Homotopy,
    PosteriorMoments,
    QuadraticLogDensity,
    from_gaussian_prior,
    from_linear_gaussian_measurement,
)
from .stats import covariance_gap, mahalanobis_gap, sample_moments

MODES = ("single_update", "sequential", "diagnostics_sweep")
FLOAT_FORMAT = "%.17g"


class ScenarioError(ValidationError):
    """Scenario file failed validation; ``failures`` lists every problem found."""

    def __init__(self, failures, source=None):
        self.failures = list(failures)
        self.source = source
        head = f"{source}: " if source else ""
        super().__init__(head + "; ".join(self.failures))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    dimension: int
    prior: PosteriorMoments
    likelihood: QuadraticLogDensity
    diffusion: DiffusionSchedule
    particles: int
    integrator: IntegratorConfig
    mode: str = "single_update"
    initial_particles: np.ndarray = None
    sweep_points: int = 101
    dynamics: LinearDynamics = None
    measurement: MeasurementModel = None
    measurements: tuple = ()
    out_dir: str = "."

    @property
    def homotopy(self):
        return Homotopy(from_gaussian_prior(self.prior.mean, self.prior.covariance), self.likelihood)

    def with_seed(self, seed):
        seed = int(seed)
        return dataclasses.replace(
            self, seed=seed, integrator=dataclasses.replace(self.integrator, seed=seed)
        )

    @property
    def file_stem(self):
        return f"{self.name}_{self.seed}"


class _Collector:
    def __init__(self, source):
        self.source = source
        self.failures = []

    def take(self, fn, *args):
        try:
            return fn(*args)
        except (ValidationError, ValueError, TypeError, KeyError, np.linalg.LinAlgError) as exc:
            self.failures.append(str(exc).strip("'\""))
            return None


def _matrix(block, key, shape=None):
    if key not in block:
        raise ValidationError(f"missing key {key!r}")
    a = np.array(block[key], dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValidationError(f"{key} must be a nested row-major array")
    if shape is not None and a.shape != shape:
        raise ValidationError(f"dimension mismatch: {key} has shape {a.shape}, expected {shape}")
    return a


def _vector(block, key, size=None):
    if key not in block:
        raise ValidationError(f"missing key {key!r}")
    v = np.atleast_1d(np.array(block[key], dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"{key} must be a flat array")
    if size is not None and v.size != size:
        raise ValidationError(f"dimension mismatch: {key} has length {v.size}, expected {size}")
    return v


def _prior(doc, n):
    block = doc["prior"]
    mean = _vector(block, "mean", n)
    cov = _matrix(block, "covariance", (n, n))
    g = from_gaussian_prior(mean, cov)
    return PosteriorMoments(mean, cov), g


def _likelihood(doc, n, sequential):
    block = doc["likelihood"]
    if "A_h" in block:
        if sequential:
            raise ValidationError("sequential mode needs likelihood {H, R}, not raw A_h")
        A = _matrix(block, "A_h", (n, n))
        w = np.linalg.eigvalsh(0.5 * (A + A.T))
        if w[-1] > 1e-12 * max(1.0, np.abs(w).max()):
            raise ValidationError(
                f"(A3) violated: likelihood.A_h has eigenvalue {w[-1]:+.6g}, "
                "must be negative semi-definite"
            )
        return QuadraticLogDensity(A, _vector(block, "b_h", n), float(block.get("c_h", 0.0))), None
    H = _matrix(block, "H")
    if H.shape[1] != n:
        raise ValidationError(f"dimension mismatch: likelihood.H has {H.shape[1]} columns, expected {n}")
    d = H.shape[0]
    R = _matrix(block, "R", (d, d))
    mm = MeasurementModel(H, R)
    if sequential:
        return None, mm
    return from_linear_gaussian_measurement(H, R, _vector(block, "z", d)), mm


def _diffusion(doc, n):
    block = doc.get("diffusion", "zero")
    if isinstance(block, str):
        block = {"kind": block}
    kind = block.get("kind")
    if kind == "zero":
        return DiffusionSchedule.zero(n)
    if kind == "constant":
        return DiffusionSchedule.constant(_matrix(block, "Q", (n, n)))
    if kind == "scaled_identity":
        return DiffusionSchedule.scaled_identity(float(block["scale"]), n)
    if kind == "knots":
        knots = block["knots"]
        return DiffusionSchedule.knots(
            [k["lambda"] for k in knots], [_matrix(k, "Q", (n, n)) for k in knots]
        )
    raise ValidationError(f"diffusion.kind must be zero, constant, scaled_identity or knots, got {kind!r}")


def _integrator(doc, seed, diffusion):
    block = doc.get("integrator", {})
    scheme = block.get("scheme", "auto")
    if scheme == "auto":
        scheme = "rk4_deterministic" if diffusion is not None and diffusion.is_zero else "euler_maruyama"
    return IntegratorConfig(
        steps=int(block.get("steps", 1000)),
        scheme=scheme,
        seed=seed,
        record_every=block.get("record_every"),
    )


def _sequential(doc, n):
    block = doc.get("sequential")
    if block is None:
        raise ValidationError("mode 'sequential' needs a 'sequential' block")
    dyn = LinearDynamics(_matrix(block, "F", (n, n)), _matrix(block, "W", (n, n)))
    zs = tuple(np.atleast_1d(np.array(z, dtype=float)) for z in block.get("measurements", []))
    return dyn, zs


def validate_scenario(doc, source=None):
    """Build a :class:`ScenarioConfig` from a parsed document, collecting every failure."""
    c = _Collector(source)
    if not isinstance(doc, dict):
        raise ScenarioError(["top level must be an object"], source)
    for key in ("name", "seed", "dimension", "prior", "likelihood"):
        if key not in doc:
            c.failures.append(f"missing key {key!r}")
    if c.failures:
        raise ScenarioError(c.failures, source)

    name = str(doc["name"])
    seed = c.take(lambda: int(doc["seed"]) & 0xFFFFFFFFFFFFFFFF)
    n = c.take(int, doc["dimension"])
    if n is not None and n < 1:
        c.failures.append("dimension must be at least 1")
        n = None
    mode = doc.get("mode", "single_update")
    if mode not in MODES:
        c.failures.append(f"mode must be one of {MODES}, got {mode!r}")
    sequential = mode == "sequential"
    if n is None:
        raise ScenarioError(c.failures, source)

    prior = c.take(_prior, doc, n)
    lik = c.take(_likelihood, doc, n, sequential)
    diffusion = c.take(_diffusion, doc, n)
    integ = c.take(_integrator, doc, seed or 0, diffusion)
    particles = c.take(int, doc.get("particles", 1000))
    if particles is not None and particles < 1:
        c.failures.append("particles must be positive")

    pinned = None
    if "initial_particles" in doc:
        pinned = c.take(_matrix, doc, "initial_particles")
        if pinned is not None and pinned.shape[1] != n:
            c.failures.append(
                f"dimension mismatch: initial_particles rows have length {pinned.shape[1]}, expected {n}"
            )
        if pinned is not None:
            particles = pinned.shape[0]

    sweep_points = c.take(int, doc.get("sweep_points", 101))
    if mode == "diagnostics_sweep" and integ is not None and sweep_points is not None:
        if sweep_points < 2 or integ.steps % (sweep_points - 1):
            c.failures.append(
                f"diagnostics_sweep needs integrator.steps ({integ.steps}) divisible by sweep_points - 1 ({sweep_points - 1})"
            )
        else:
            integ = dataclasses.replace(integ, record_every=integ.steps // (sweep_points - 1))

    dyn, zs = None, ()
    if sequential:
        out = c.take(_sequential, doc, n)
        if out is not None:
            dyn, zs = out
            if lik is not None:
                d = lik[1].H.shape[0]
                bad = [k for k, z in enumerate(zs) if z.size != d]
                if bad:
                    c.failures.append(f"dimension mismatch: measurements {bad} do not have length {d}")
        if pinned is not None:
            c.failures.append("initial_particles is not supported in sequential mode")

    hom_ok = prior is not None and lik is not None and lik[0] is not None
    if hom_ok:
        c.take(Homotopy, prior[1], lik[0])

    if c.failures:
        raise ScenarioError(c.failures, source)
    return ScenarioConfig(
        name=name,
        seed=seed,
        dimension=n,
        prior=prior[0],
        likelihood=lik[0],
        diffusion=diffusion,
        particles=particles,
        integrator=integ,
        mode=mode,
        initial_particles=pinned,
        sweep_points=sweep_points,
        dynamics=dyn,
        measurement=lik[1],
        measurements=zs,
        out_dir=str(doc.get("output", {}).get("dir", ".")),
    )


def load_scenario(path):
    """Parse and validate a scenario file.

    Raises :class:`ScenarioError` (with line information for syntax errors)
    and lets ``OSError`` through for unreadable files.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"], path)
    return validate_scenario(doc, path)


def trace_columns(n):
    return (
        ["lambda", "particle_id"]
        + [f"x_{i}" for i in range(n)]
        + ["log_p"]
        + [f"y_{i}" for i in range(n)]
        + ["V", "V1", "V2", "LV", "gamma", "partition"]
    )


def _fmt(a):
    return np.char.mod(FLOAT_FORMAT, np.asarray(a, dtype=float))


class CsvSink:
    """Streams diagnostics batches to a CSV file with a fixed column order."""

    def __init__(self, path, n):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(trace_columns(n)) + "\n")
        self.rows = 0

    def accept(self, batch):
        N = len(batch)
        cols = [np.full(N, FLOAT_FORMAT % batch.lam), batch.ids.astype(str)]
        cols += [_fmt(batch.X[:, i]) for i in range(batch.X.shape[1])]
        cols.append(_fmt(batch.log_p))
        cols += [_fmt(batch.Y[:, i]) for i in range(batch.Y.shape[1])]
        cols += [_fmt(batch.V), _fmt(batch.V1), _fmt(batch.V2), _fmt(batch.LV)]
        cols += [np.full(N, FLOAT_FORMAT % batch.gamma), batch.partition.astype(str)]
        lines = cols[0]
        for col in cols[1:]:
            lines = np.char.add(np.char.add(lines, ","), col)
        self._fh.write("\n".join(lines.tolist()) + "\n")
        self.rows += N

    def close(self):
        self._fh.close()


class SummarySink:
    """Accumulates the trace-derived summary statistics of a run."""

    def __init__(self, track_v_drift):
        self.track_v_drift = track_v_drift
        self.v_drift = 0.0
        self._v0 = None
        self.gamma_min = math.inf
        self.gamma_max = -math.inf
        self.occupancy = {}

    def accept(self, batch):
        if batch.lam == 0.0:
            self._v0 = batch.V1.copy()
            self.occupancy = {}
        if self.track_v_drift and self._v0 is not None:
            rel = np.abs(batch.V - self._v0) / np.maximum(self._v0, 1e-12)
            self.v_drift = max(self.v_drift, float(rel.max()))
        self.gamma_min = min(self.gamma_min, batch.gamma)
        self.gamma_max = max(self.gamma_max, batch.gamma)
        if batch.lam in (0.0, 0.5, 1.0):
            self.occupancy[FLOAT_FORMAT % batch.lam] = {
                s: int(np.count_nonzero(batch.partition == s)) for s in (S1, S2, S3)
            }


class _Tee:
    def __init__(self, *sinks):
        self.sinks = sinks

    def accept(self, batch):
        for s in self.sinks:
            s.accept(batch)


@dataclass
class RunSummary:
    name: str
    seed: int
    mode: str
    status: str = "ok"
    error: str = None
    particles: int = 0
    final_mean: list = None
    final_covariance: list = None
    reference_mean: list = None
    reference_covariance: list = None
    mahalanobis_gap: float = None
    covariance_gap: float = None
    v_drift: float = None
    gamma_min: float = None
    gamma_max: float = None
    partition_occupancy: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)
    trace_rows: int = 0
    trace_path: str = None
    summary_path: str = None
    duration_s: float = 0.0
    version: str = __version__

    @property
    def ok(self):
        return self.status == "ok"

    def to_dict(self):
        return dataclasses.asdict(self)


def _tolist(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _fill_moments(summary, X, ref):
    summary.final_mean = _tolist(X.mean(axis=0))
    summary.reference_mean = _tolist(ref.mean)
    summary.reference_covariance = _tolist(ref.covariance)
    if X.shape[0] >= 2:
        sm = sample_moments(X)
        summary.final_covariance = _tolist(sm.covariance)
        summary.mahalanobis_gap = mahalanobis_gap(sm, ref)
        summary.covariance_gap = covariance_gap(sm, ref)


def _run_single(cfg, sink, threads, summary):
    hom = cfg.homotopy
    if cfg.initial_particles is not None:
        ens = Ensemble(cfg.initial_particles, 0.0)
    else:
        ens = sample_prior(hom, cfg.particles, cfg.seed)
    # lam = 0.5 is an occupancy checkpoint; a sweep keeps its exact grid
    half = cfg.integrator.steps // 2
    extra = (half,) if cfg.mode == "single_update" and cfg.integrator.steps % 2 == 0 else ()
    final = flow_to_posterior(
        ens, hom, cfg.diffusion, cfg.integrator, sink=sink, threads=threads, extra_records=extra
    )
    ref = conjugate_posterior(cfg.prior.mean, cfg.prior.covariance, cfg.likelihood)
    _fill_moments(summary, final.particles, ref)


def _run_sequential(cfg, sink, threads, summary):
    exact = kalman_filter(cfg.prior, cfg.dynamics, cfg.measurement, cfg.measurements)
    out = sequential_flow_filter(
        cfg.prior, cfg.dynamics, cfg.measurement, cfg.measurements, cfg.integrator,
        cfg.particles, diffusion=cfg.diffusion, threads=threads, sink=sink,
    )
    for k, ((est, _), ref) in enumerate(zip(out, exact)):
        summary.steps.append(
            {
                "step": k,
                "mean": _tolist(est.mean),
                "covariance": _tolist(est.covariance),
                "kalman_mean": _tolist(ref.mean),
                "kalman_covariance": _tolist(ref.covariance),
            }
        )
    if out:
        _fill_moments(summary, out[-1][1].particles, exact[-1])


def run(cfg, out_dir=None, threads=None):
    """Execute a scenario and write its trace CSV and summary JSON.

    Divergence and singularity errors are caught and recorded in the
    summary (``status`` != "ok"); I/O errors propagate.
    """
    start = time.perf_counter()
    out_dir = cfg.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, cfg.file_stem + "_trace.csv")
    summary_path = os.path.join(out_dir, cfg.file_stem + "_summary.json")
    summary = RunSummary(
        cfg.name, cfg.seed, cfg.mode, particles=cfg.particles,
        trace_path=trace_path, summary_path=summary_path,
    )
    csv_sink = CsvSink(trace_path, cfg.dimension)
    collector = SummarySink(track_v_drift=cfg.diffusion.is_zero)
    sink = _Tee(csv_sink, collector)
    try:
        if cfg.mode == "sequential":
            _run_sequential(cfg, sink, threads, summary)
        else:
            _run_single(cfg, sink, threads, summary)
    except DivergenceError as exc:
        summary.status, summary.error = "diverged", str(exc)
    except SingularHomotopyError as exc:
        summary.status, summary.error = "singular", str(exc)
    except FlowFiltError as exc:
        summary.status, summary.error = "failed", str(exc)
    finally:
        csv_sink.close()
    summary.trace_rows = csv_sink.rows
    if cfg.diffusion.is_zero:
        summary.v_drift = collector.v_drift
    if collector.gamma_min <= collector.gamma_max:
        summary.gamma_min, summary.gamma_max = collector.gamma_min, collector.gamma_max
    summary.partition_occupancy = collector.occupancy
    summary.duration_s = time.perf_counter() - start
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")
    return summary


def read_trace(path):
    """Load a trace CSV into a dict of column arrays (``partition`` stays text)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        raw = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in raw]
        if name == "partition":
            cols[name] = np.array(vals)
        elif name == "particle_id":
            cols[name] = np.array(vals, dtype=np.int64)
        else:
            cols[name] = np.array(vals, dtype=float)
    return header, cols


def builtin_scenario(name):
    """Path of a scenario file shipped with the package."""
    here = os.path.join(os.path.dirname(__file__), "scenarios", name)
    if not here.endswith(".json"):
        here += ".json"
    return here
