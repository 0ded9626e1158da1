import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from evodiff.estimator import DiffusionSampler
from evodiff.oracle import GaussianData, MixtureData


@pytest.fixture
def data():
    return np.random.default_rng(0).normal(size=(800, 2)) * [1.0, 2.0] + [3.0, 0.0]


def test_get_set_params_and_clone():
    est = DiffusionSampler(steps=7, mu=0.3)
    p = est.get_params()
    assert p["steps"] == 7 and p["mu"] == 0.3 and p["solver"] == "evodiff"
    est.set_params(solver="ddim")
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est


def test_fit_gaussian_moments(data):
    est = DiffusionSampler(steps=10).fit(data)
    assert isinstance(est.distribution_, GaussianData)
    np.testing.assert_allclose(est.distribution_.mean, data.mean(0))
    assert est.n_features_in_ == 2


def test_fit_mixture(data):
    est = DiffusionSampler(n_components=3, random_state=0).fit(data)
    assert isinstance(est.distribution_, MixtureData) and est.distribution_.n_components == 3


def test_explicit_distribution_needs_no_data():
    d = GaussianData([0.0], [1.0])
    est = DiffusionSampler(distribution=d, steps=5).fit()
    assert est.distribution_ is d


def test_transform_and_nfe(data):
    est = DiffusionSampler(steps=12).fit(data)
    x_T = np.random.default_rng(1).standard_normal((4000, 2))
    out = est.transform(x_T)
    assert out.shape == x_T.shape
    assert est.last_run_.nfe == est.expected_nfe() == 13
    np.testing.assert_allclose(out.mean(0), data.mean(0), atol=0.15)
    np.testing.assert_allclose(out.std(0), data.std(0), rtol=0.1)


def test_sample_reproducible(data):
    est = DiffusionSampler(steps=6, random_state=4).fit(data)
    np.testing.assert_array_equal(est.sample(10), est.sample(10))


@pytest.mark.parametrize("solver", ["ddim", "dpmpp2m", "heun", "dpm2s", "remulti"])
def test_other_solvers(solver, data):
    out = DiffusionSampler(solver=solver, steps=8).fit(data).sample(16, random_state=0)
    assert out.shape == (16, 2) and np.all(np.isfinite(out))


def test_validation_errors(data):
    with pytest.raises(NotFittedError):
        DiffusionSampler().transform(np.zeros((2, 2)))
    est = DiffusionSampler().fit(data)
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        est.transform(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        DiffusionSampler(steps=0).fit(data)
    with pytest.raises(ValueError):
        DiffusionSampler().fit(None)
