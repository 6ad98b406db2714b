import numpy as np
import pytest

from dynekf import sim


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenario():
    return sim.build_scenario(0)


@pytest.fixture(scope="session")
def truth(scenario):
    return sim.ground_truth(scenario)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T / d + 0.1 * np.eye(d))


def central_diff(fn, x, h=1e-6):
    """Central finite-difference Jacobian of ``fn`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))).reshape(-1) / (2 * h)
    return J


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b).max(initial=0.0) / max(np.abs(b).max(initial=0.0), 1e-300)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion, printed after the run

ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
