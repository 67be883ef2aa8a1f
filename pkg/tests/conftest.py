import sys
from importlib import resources

import numpy as np
import pytest

from ludyn import load_model


def data_path(name):
    return str(resources.files("ludyn") / "data" / name)


def rel_err(x, ref):
    """Normwise relative error ``|x - ref|_inf / |ref|_inf`` (absolute when ``ref`` is zero)."""
    x, ref = np.asarray(x, dtype=float), np.asarray(ref, dtype=float)
    scale = np.abs(ref).max()
    return float(np.abs(x - ref).max() / (scale if scale > 0 else 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def pendulum():
    return load_model(data_path("pendulum.model"))


@pytest.fixture(scope="session")
def branched7():
    return load_model(data_path("branched7.model"))


@pytest.fixture(scope="session")
def humanoid12():
    return load_model(data_path("humanoid12.model"))


def random_sparse(rng, n, density=None):
    """Random sparse nonsingular test matrix: scattered normal entries plus a
    shifted diagonal that keeps it away from singularity."""
    density = rng.uniform(0.02, 0.2) if density is None else density
    A = np.where(rng.random((n, n)) < density, rng.normal(size=(n, n)), 0.0)
    shift = rng.normal(size=n)
    return A + np.diag(shift + 3.0 * np.sign(shift))


def floating_two_feet_data(tree, spec, rng):
    """State and sensor readings of a free-floating robot: the wrench through
    the base joint is cancelled by an external wrench on link 1.

    Returns ``(q, qd, qdd, fx, tau, y)``; ``fx`` and ``tau`` are the RNEA
    values the estimator should recover.
    """
    from ludyn import rnea
    from ludyn.indexing import VarId

    n = tree.n_links
    q, qd = rng.uniform(-np.pi, np.pi, (2, n))
    qdd = rng.normal(size=n)
    fx = rng.normal(size=(n, 6))
    fx[0] = 0.0
    _, d = rnea(tree, q, qd, qdd, fx)
    fx[0] = d[VarId("f", 1)]
    tau, d = rnea(tree, q, qd, qdd, fx)
    y = {e.channel: e.selector @ d[e.target] for e in spec.entries}
    return q, qd, qdd, fx, tau, y


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines at the end of the run."""
    module = sys.modules.get("test_acceptance")
    lines = sorted(getattr(module, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
