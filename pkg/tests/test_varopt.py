import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evodiff.exceptions import DegenerateDirection, DomainError
from evodiff.varopt import (EtaInputs, ZetaInputs, eta_star, grid_search_min, map_eta, map_zeta,
                           objective_value, random_instances, zeta_star)

vec = arrays(np.float64, 4, elements=st.floats(-3, 3))


def test_zeta_frozen():
    # P~ = P - sigma_h m = (2, 0); D = (1, 0); analytic = 2 / (0.5 * 1)
    z = ZetaInputs(P=np.array([2.5, 1.0]), D=np.array([1.0, 0.0]), m_t=np.array([1.0, 2.0]), sigma_h=0.5)
    assert zeta_star(z, "analytic") == pytest.approx(4.0)
    assert zeta_star(z, "literal") == pytest.approx(-4.0)


def test_eta_frozen():
    e = EtaInputs(B1=np.array([1.0, 0.0]), B2=np.array([-1.0, 0.0]))
    # |(1 - eta) B1 + eta B2| vanishes at eta = 1/2
    assert eta_star(e, "analytic") == pytest.approx(0.5)
    assert eta_star(e, "literal") == pytest.approx(0.5)
    # B1 = 0: the objective is minimised at 0, the literal form gives 1
    e0 = EtaInputs(B1=np.zeros(2), B2=np.array([0.3, -0.1]))
    assert eta_star(e0, "analytic") == 0.0
    assert eta_star(e0, "literal") == pytest.approx(1.0)


@given(vec, vec, vec, st.floats(0.05, 2.0))
def test_zeta_literal_is_negated_analytic(P, D, m, sh):
    assume(np.linalg.norm(D) > 1e-3)
    z = ZetaInputs(P, D, m, sh)
    assert abs(zeta_star(z, "literal")) == abs(zeta_star(z, "analytic"))


@given(vec, vec)
def test_eta_analytic_is_one_minus_literal(B1, B2):
    assume(np.linalg.norm(B1 - B2) > 1e-3)
    e = EtaInputs(B1, B2)
    assert eta_star(e, "analytic") == pytest.approx(1.0 - eta_star(e, "literal"), abs=1e-9)


@given(vec, vec, vec, st.floats(0.05, 2.0), st.floats(-10, 10))
def test_zeta_analytic_is_argmin(P, D, m, sh, probe):
    assume(np.linalg.norm(D) > 1e-2)
    z = ZetaInputs(P, D, m, sh)
    best = zeta_star(z, "analytic")
    f = lambda x: objective_value("zeta", x, z)
    assert f(best) <= f(probe) + 1e-9 * (1 + abs(f(probe)))


@given(vec, vec, st.floats(-10, 10))
def test_eta_analytic_is_argmin(B1, B2, probe):
    assume(np.linalg.norm(B1 - B2) > 1e-2)
    e = EtaInputs(B1, B2)
    best = eta_star(e, "analytic")
    f = lambda x: objective_value("eta", x, e)
    assert f(best) <= f(probe) + 1e-9 * (1 + abs(f(probe)))


def test_objective_matches_direct_norm():
    rng = np.random.default_rng(0)
    P, D, m, B1, B2 = rng.standard_normal((5, 6))
    z, e = ZetaInputs(P, D, m, 0.7), EtaInputs(B1, B2)
    x = 0.37
    assert objective_value("zeta", x, z) == pytest.approx(np.sum((P - 0.7 * m - 0.7 * x * D) ** 2))
    assert objective_value("eta", x, e) == pytest.approx(np.sum(((1 - x) * B1 + x * B2) ** 2))


def test_rowwise_and_masked():
    D = np.array([[1.0, 0.0], [0.0, 0.0]])
    z = ZetaInputs(np.ones((2, 2)), D, np.zeros((2, 2)), 1.0)
    with pytest.raises(DegenerateDirection):
        zeta_star(z)
    out = zeta_star(z, masked=True)
    assert out.shape == (2,) and np.isnan(out[1]) and out[0] == pytest.approx(-1.0)
    e = EtaInputs(np.ones((2, 2)), np.ones((2, 2)))
    assert np.all(np.isnan(eta_star(e, masked=True)))
    with pytest.raises(DegenerateDirection):
        eta_star(e)


def test_bad_formula_and_sigma():
    z = ZetaInputs(np.ones(2), np.ones(2), np.ones(2), 0.0)
    with pytest.raises(DomainError):
        zeta_star(z)
    with pytest.raises(DomainError):
        eta_star(EtaInputs(np.ones(2), np.zeros(2)), "other")


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 1))
def test_maps_monotone_and_bounded(a, b, mu):
    lo, hi = min(a, b), max(a, b)
    assert map_zeta(hi, mu) <= map_zeta(lo, mu)
    assert map_eta(lo) <= map_eta(hi)
    assert 0 < map_zeta(lo, mu) < 1
    assert 0.5 <= map_eta(lo) <= 1
    assert map_zeta(-lo, mu) == map_zeta(lo, mu)


def test_map_frozen():
    assert map_zeta(0.5, 0.5) == 0.5
    assert map_eta(0.0) == 0.5
    assert map_zeta(1.5, 0.5) == pytest.approx(1 / (1 + np.e))
    assert map_zeta(1.5, 0.5, sigma_ratio=2.0) == pytest.approx(1 / (1 + np.e**2))
    with pytest.raises(DomainError):
        map_zeta(1.0, 1.5)


def test_grid_search_frozen_and_flat():
    z = ZetaInputs(np.array([2.5, 1.0]), np.array([1.0, 0.0]), np.array([1.0, 2.0]), 0.5)
    assert grid_search_min("zeta", z).argmin == pytest.approx(4.0, abs=1e-9)
    flat = grid_search_min("eta", EtaInputs(np.zeros(2), np.zeros(2)))
    assert flat.flat and flat.argmin == -5.0
    with pytest.raises(DomainError):
        grid_search_min("eta", EtaInputs(np.ones(2), np.zeros(2)), lo=1, hi=0)


def test_random_instances_inside_search_range():
    for z, e in random_instances(200, 8, np.random.default_rng(0)):
        assert abs(zeta_star(z, "analytic")) <= 4.0 + 1e-9
        assert abs(eta_star(e, "analytic")) <= 4.0 + 1e-9
