import numpy as np
import pytest

from flowfilt import Homotopy, QuadraticLogDensity, from_gaussian_prior


def random_spd(rng, n, low=0.3, high=3.0):
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Qm * rng.uniform(low, high, n)) @ Qm.T


def random_homotopy(rng, n, rank=None):
    """Gaussian prior with a (possibly rank-deficient) Gaussian-type likelihood."""
    rank = n if rank is None else rank
    P0 = random_spd(rng, n)
    prior = from_gaussian_prior(rng.standard_normal(n), P0)
    H = rng.standard_normal((rank, n))
    A_h = -H.T @ H
    return Homotopy(prior, QuadraticLogDensity(A_h, rng.standard_normal(n), rng.standard_normal()))


@pytest.fixture
def canonical():
    """Prior N(0, 1), measurement z = x + v with v ~ N(0, 1), z = 1."""
    return Homotopy.gaussian([0.0], [[1.0]], [[1.0]], [[1.0]], [1.0])


@pytest.fixture
def partial_2d():
    """Prior N(0, I2); only the first coordinate is measured."""
    return Homotopy.gaussian([0.0, 0.0], np.eye(2), [[1.0, 0.0]], [[1.0]], [1.0])


@pytest.fixture
def exponential_type():
    """Zero-curvature likelihood log h = beta'x + c (A_h = 0)."""
    prior = from_gaussian_prior([0.5, -1.0], [[1.0, 0.3], [0.3, 2.0]])
    return Homotopy(prior, QuadraticLogDensity(np.zeros((2, 2)), [0.7, -0.4], -0.2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report: one line per criterion in the terminal summary

def pytest_configure(config):
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    line = f"criterion {number} {'PASS' if rep.passed else 'FAIL'}  {title}: {detail}"
    item.config._criteria[number] = line
    print("\n" + line)


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_criteria", {})
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])


@pytest.fixture
def report(request):
    """Call with a detail string; it is shown on the criterion's PASS/FAIL line."""

    def set_detail(text):
        request.node.criterion_detail = text

    return set_detail
