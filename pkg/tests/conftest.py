import sys

import numpy as np
import pytest

from proxysvar.montecarlo import B as B_TRUE, PI1, DgpSpec, simulate
from proxysvar.proxy_model import ProxyMoments, build_restrictions

ALPHA_TRUE = np.array([6.246, -13.185])
B1_TRUE = np.array([0.196, 0.210, 0.017])


def population_moments(lam: float = 0.8, V=None) -> ProxyMoments:
    Su = B_TRUE @ B_TRUE.T
    Suw = B_TRUE[:, [2]] * lam
    return ProxyMoments(Su, Suw, 1000, V, "fixed" if V is not None else "none")


def design_restrictions():
    return build_restrictions([["a11", 0.0, "a13"]], "A1")


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


@pytest.fixture(scope="session")
def long_strong_path():
    return simulate(DgpSpec(T=50_000), seed=11)


@pytest.fixture(scope="session")
def pi1():
    return PI1.copy()


def central_difference(fun, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = eps * max(1.0, abs(x[i]))
        cols.append((fun(x + d) - fun(x - d)) / (2 * d[i]))
    return np.column_stack(cols)


def relative_gap(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
