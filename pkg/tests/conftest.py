import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pfode import GaussianMixture, ProductMixture, build_schedule

settings.register_profile("pfode", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "pfode"))


@pytest.fixture(scope="session")
def gauss1():
    return GaussianMixture.gaussian([3.0], 1.0)


@pytest.fixture(scope="session")
def gmm1():
    return GaussianMixture([0.3, 0.7], [[-2.0], [1.5]], [0.25, 0.5])


@pytest.fixture(scope="session")
def gmm2():
    return GaussianMixture([0.4, 0.6], [[-1.0, 0.5], [1.2, -0.8]], [0.3, 0.7])


@pytest.fixture(scope="session")
def product3(gmm1):
    return ProductMixture.replicate(gmm1, 3)


@pytest.fixture(scope="session")
def sched():
    return build_schedule(256, 2.0, 4.0)


def fd_gradient(f, x, h=1e-5):
    """Central differences of a batch function ``f: (n, d) -> (n,)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        g[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    """Central differences of ``f: (n, d) -> (n, d)``; returns ``(n, d, d)`` with [i, a, b] = d f_a / d x_b."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    J = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, :, j] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
