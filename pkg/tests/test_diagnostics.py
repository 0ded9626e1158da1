import numpy as np
import pytest
from conftest import ConstantOracle
from hypothesis import given
from hypothesis import strategies as st

from evodiff.diagnostics import (convergence_order, data_vs_noise_variance,
                                 delta_entropy_gradient_vs_ddim, entropy_scan, frechet_from_moments,
                                 frechet_gaussian, gaussian_entropy, gaussian_flow,
                                 reconstruction_decomposition_check, sliced_wasserstein,
                                 snr_interval, step_variance_trajectory, variance_interval)
from evodiff.exceptions import DomainError, NumericalError
from evodiff.oracle import DenoiserOracle, default_gmm
from evodiff.schedule import Parameterization, make_grid
from evodiff.solver import DDIM, EVODiff, HeunEDM, initial_noise


def test_gaussian_entropy_frozen():
    assert gaussian_entropy([1.0]) == pytest.approx(0.5 * (np.log(2 * np.pi) + 1), rel=1e-15)
    assert gaussian_entropy([2.0, 0.5]) == pytest.approx(np.log(2 * np.pi) + 1, rel=1e-15)
    with pytest.raises(DomainError):
        gaussian_entropy([0.0])


def test_entropy_boundary_is_exactly_zero():
    dh, (lo, hi) = delta_entropy_gradient_vs_ddim(2.0, 1.0, 1.0, 1.0)
    assert dh == 0.0 and (lo, hi) == (1.0, 2.0)


@given(st.floats(0.1, 10), st.floats(0.25, 4), st.floats(0.001, 0.999))
def test_entropy_non_positive_inside_interval(var_t, q, u):
    var_s = var_t * q
    lo, hi = variance_interval(var_t, var_s)
    if hi <= lo:
        return
    dh, _ = delta_entropy_gradient_vs_ddim(lo + u * (hi - lo), 1.0, var_t, var_s, d=3)
    assert dh <= 0


def test_entropy_positive_outside_interval():
    dh, (_, hi) = delta_entropy_gradient_vs_ddim(3.0, 1.0, 1.0, 1.0)
    assert hi == 2.0 and dh > 0


def test_snr_interval_mirror():
    assert snr_interval(1.0, 1.0) == (1.0, 2.0)
    assert snr_interval(1.0, 3.0)[1] == pytest.approx(3.0)


def test_entropy_scan():
    recs = entropy_scan(300, np.random.default_rng(0))
    assert len(recs) == 300
    assert all(r.interval[0] < r.ratio < r.interval[1] and r.delta_h <= 0 for r in recs)


def test_frechet_frozen_and_properties():
    assert frechet_from_moments([0.0], [[1.0]], [1.0], [[4.0]]) == pytest.approx(2.0)
    a = np.random.default_rng(0).standard_normal((400, 3))
    b = 2.0 * np.random.default_rng(1).standard_normal((400, 3)) + 1.0
    assert frechet_gaussian(a, b) == pytest.approx(frechet_gaussian(b, a), rel=1e-9)
    assert frechet_gaussian(a, b) > 0
    assert frechet_gaussian(a, a) == pytest.approx(0.0, abs=1e-9)


def test_frechet_errors():
    with pytest.raises(DomainError):
        frechet_gaussian(np.zeros((2, 3)), np.zeros((10, 3)))
    with pytest.raises(NumericalError):
        frechet_from_moments([0, 0], [[1.0, 0], [0, -1.0]], [0, 0], np.eye(2))


def test_sliced_wasserstein_shift():
    a = np.random.default_rng(0).standard_normal((500, 1))
    assert sliced_wasserstein(a, a + 0.7, 64) == pytest.approx(0.7, rel=1e-12)
    assert sliced_wasserstein(a, a, 64) == 0.0
    with pytest.raises(DomainError):
        sliced_wasserstein(a, a, 16)
    with pytest.raises(DomainError):
        sliced_wasserstein(a, a[:10], 64)


def test_sliced_wasserstein_seeded():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((200, 2)), rng.standard_normal((200, 2)) + 0.3
    v1 = sliced_wasserstein(a, b, 128, np.random.default_rng(7))
    v2 = sliced_wasserstein(a, b, 128, np.random.default_rng(7))
    assert v1 == v2


def test_decomposition_identity(gauss, vp):
    r = reconstruction_decomposition_check(DenoiserOracle(gauss, vp), vp, (0.3, 0.35), 5000,
                                           np.random.default_rng(0))
    assert r.residual <= 5 * r.standard_error
    assert r.mse == pytest.approx(r.variance_term + r.bias_term, abs=5 * r.standard_error + 1e-12)
    with pytest.raises(DomainError):
        reconstruction_decomposition_check(DenoiserOracle(gauss, vp), vp, (0.5, 0.3), 100,
                                           np.random.default_rng(0))


def test_decomposition_works_for_mixtures(vp):
    r = reconstruction_decomposition_check(DenoiserOracle(default_gmm(), vp), vp, (0.2, 0.4), 5000,
                                           np.random.default_rng(1))
    assert r.residual <= 5 * r.standard_error


def test_data_vs_noise_ordering(gauss, vp):
    g = make_grid(vp, "logsnr", 10)
    pair = (DenoiserOracle(gauss, vp, Parameterization.DATA),
            DenoiserOracle(gauss, vp, Parameterization.NOISE))
    recs = data_vs_noise_variance(pair, vp, g, 4000, np.random.default_rng(0))
    assert len(recs) == 10
    assert all(r.ordered for r in recs)
    assert all(r.coef_data < r.coef_noise for r in recs)


def test_convergence_ddim_first_order(gauss, vp):
    res = convergence_order(DDIM(), DenoiserOracle(gauss, vp), vp, [10, 20, 40], 640, n_trials=16)
    assert 0.8 <= res.slope <= 1.2 and not res.exact
    assert res.errors[0] > res.errors[1] > res.errors[2]


def test_convergence_exact_flag(vp):
    res = convergence_order(DDIM(), ConstantOracle([0.1, 0.2]), vp, [2, 4], 64, n_trials=4, dim=2)
    assert res.exact and np.isnan(res.slope)


def test_convergence_reference_too_coarse(gauss, vp):
    with pytest.raises(DomainError):
        convergence_order(DDIM(), DenoiserOracle(gauss, vp), vp, [20, 40], 320)


def test_gaussian_flow_composes(gauss, vp):
    x = np.random.default_rng(0).standard_normal((5, 2))
    direct = gaussian_flow(gauss, vp, x, 0.9, 0.1)
    two = gaussian_flow(gauss, vp, gaussian_flow(gauss, vp, x, 0.9, 0.5), 0.5, 0.1)
    np.testing.assert_allclose(direct, two, rtol=1e-13)


def test_trajectory_single_step(gauss, vp):
    g = make_grid(vp, "logsnr", 1)
    pts = step_variance_trajectory(DDIM(), DenoiserOracle(gauss, vp), g, vp, np.ones((4, 2)))
    assert len(pts) == 1 and pts[0].i == 1
    assert np.isfinite(pts[0].entropy_estimate)


def test_trajectory_evodiff_below_ddim(gauss, vp):
    g = make_grid(vp, "logsnr", 10)
    x = initial_noise(vp, g, (256, 2), np.random.default_rng(0))
    a = step_variance_trajectory(DDIM(), DenoiserOracle(gauss, vp), g, vp, x)
    b = step_variance_trajectory(EVODiff(), DenoiserOracle(gauss, vp), g, vp, x)
    wins = sum(q.var_estimate <= p.var_estimate for p, q in zip(a[1:-1], b[1:-1]))
    assert wins >= 0.8 * (len(a) - 2)


def test_trajectory_local_mode_and_reference(gmm, vp):
    g = make_grid(vp, "logsnr", 4)
    x = initial_noise(vp, g, (32, 2), np.random.default_rng(0))
    heun = step_variance_trajectory(HeunEDM(), DenoiserOracle(gmm, vp), g, vp, x, mode="local")
    ddim = step_variance_trajectory(DDIM(), DenoiserOracle(gmm, vp), g, vp, x, mode="local")
    assert len(heun) == 4
    assert sum(h.var_estimate for h in heun) < sum(d.var_estimate for d in ddim)
    with pytest.raises(DomainError):
        step_variance_trajectory(DDIM(), DenoiserOracle(gmm, vp), g, vp, x, mode="global")
