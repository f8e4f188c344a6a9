import numpy as np
import pytest

from kernelgc import KernelSpec, SimulationConfig, TimeSeriesPanel, estimate_lagged_kernels, get_system, simulate

QUAD = KernelSpec(0.0, 2)
LINEAR = KernelSpec(0.0, 1)


def ex1_panel(n_s, rep=0, seed=20240601):
    return simulate(get_system("example1"), SimulationConfig(n_s, seed, rep))


def linear_var_panel(coeffs, n_s, seed, burn_in=500):
    """Gaussian VAR(p) data from explicit coefficient blocks."""
    coeffs = np.asarray(coeffs)
    p, D, _ = coeffs.shape
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n_s + burn_in, D))
    x = np.zeros_like(w)
    for t in range(len(w)):
        x[t] = w[t]
        for k in range(1, p + 1):
            if t - k >= 0:
                x[t] += coeffs[k - 1] @ x[t - k]
    return TimeSeriesPanel(x[burn_in:])


@pytest.fixture
def ex1_512():
    return ex1_panel(512)


@pytest.fixture
def random_kset():
    rng = np.random.default_rng(11)
    panel = TimeSeriesPanel(rng.standard_normal((400, 3)).cumsum(axis=0) * 0.1 + rng.standard_normal((400, 3)))
    return estimate_lagged_kernels(panel, QUAD, 8)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=str):
        terminalreporter.write_line(mod.RESULTS[key])
