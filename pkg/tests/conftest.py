import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evodiff.oracle import GaussianData, default_gmm
from evodiff.schedule import Parameterization, VPLinear, kappa

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class LinearKappaOracle:
    """Stub model ``a + b * kappa(t)``, independent of the state."""

    def __init__(self, schedule, a, b, mode=Parameterization.DATA):
        self.schedule, self.mode = schedule, Parameterization(mode)
        self.a, self.b = np.asarray(a, float), np.asarray(b, float)
        self.nfe = 0

    def evaluate(self, x, t):
        self.nfe += 1
        k = float(kappa(self.schedule, t, self.mode))
        return np.broadcast_to(self.a + self.b * k, np.shape(x)).copy()

    __call__ = evaluate

    def exact(self, x, t_from, t_to):
        """Closed-form transport of the integrated form between two times."""
        from evodiff.schedule import f_scale

        k0 = float(kappa(self.schedule, t_from, self.mode))
        k1 = float(kappa(self.schedule, t_to, self.mode))
        integral = self.a * (k1 - k0) + self.b * (k1**2 - k0**2) / 2
        s0 = float(f_scale(self.schedule, t_from, self.mode))
        s1 = float(f_scale(self.schedule, t_to, self.mode))
        return s1 * (x / s0 + integral)


class ConstantOracle:
    """Returns the same value everywhere, so every probe difference is zero."""

    def __init__(self, value, mode=Parameterization.DATA):
        self.value, self.mode, self.nfe = np.asarray(value, float), Parameterization(mode), 0

    def evaluate(self, x, t):
        self.nfe += 1
        return np.broadcast_to(self.value, np.shape(x)).copy()

    __call__ = evaluate


@pytest.fixture
def vp():
    return VPLinear()


@pytest.fixture
def gauss():
    return GaussianData([1.0, -0.5], [0.5, 2.0])


@pytest.fixture
def gmm():
    return default_gmm()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
