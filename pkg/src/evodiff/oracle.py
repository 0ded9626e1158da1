"""Exact posterior-mean denoisers for Gaussian and Gaussian-mixture data."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import DomainError, NumericalError
from .schedule import NoiseSchedule, Parameterization, as_param, eval_schedule


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianData:
    """``N(mean, diag(var))``."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean, var = _frozen(np.atleast_1d(self.mean)), _frozen(np.atleast_1d(self.var))
        if mean.ndim != 1 or mean.shape != var.shape:
            raise DomainError("mean and var must be vectors of equal length")
        if not np.all(var > 0) or not np.all(np.isfinite(mean)):
            raise DomainError("variances must be positive and means finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.dim))

    def posterior_mean(self, x, alpha, sigma):
        v = self.var
        return self.mean + alpha * v / (alpha**2 * v + sigma**2) * (x - alpha * self.mean)

    def to_dict(self):
        return {"dist": "gaussian", "mean": self.mean.tolist(), "var": self.var.tolist()}


@dataclass(frozen=True, eq=False)
class MixtureData:
    """Mixture of diagonal Gaussians; ``means`` and ``vars`` are ``(K, d)``."""

    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        w = _frozen(np.atleast_1d(self.weights))
        m = _frozen(np.atleast_2d(self.means))
        v = _frozen(np.atleast_2d(self.vars))
        if w.ndim != 1 or m.shape != v.shape or m.shape[0] != w.size:
            raise DomainError("weights (K,), means (K, d) and vars (K, d) required")
        if not np.all(w > 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be positive and sum to 1")
        if not np.all(v > 0):
            raise DomainError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "vars", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[k] + np.sqrt(self.vars[k]) * rng.standard_normal((n, self.dim))

    def posterior_mean(self, x, alpha, sigma):
        x = np.asarray(x, dtype=float)
        xb = x[..., None, :]
        tot = alpha**2 * self.vars + sigma**2
        resid = xb - alpha * self.means
        loglik = -0.5 * np.sum(resid**2 / tot + np.log(2 * np.pi * tot), axis=-1)
        logr = np.log(self.weights) + loglik
        norm = logsumexp(logr, axis=-1, keepdims=True)
        if not np.all(np.isfinite(norm)):
            raise NumericalError("mixture responsibilities underflowed")
        resp = np.exp(logr - norm)
        comp = self.means + alpha * self.vars / tot * resid
        return np.sum(resp[..., None] * comp, axis=-2)

    def to_dict(self):
        return {"dist": "gmm", "weights": self.weights.tolist(),
                "means": self.means.tolist(), "vars": self.vars.tolist()}


DataDistribution = GaussianData | MixtureData


def default_gaussian(dim: int = 2) -> GaussianData:
    """Anisotropic, off-centre Gaussian; ``dim=2`` gives mean (1, -0.5), var (0.5, 2)."""
    if dim < 1:
        raise DomainError("dim >= 1 required")
    return GaussianData(np.linspace(1.0, -0.5, dim), np.geomspace(0.5, 2.0, dim))


def default_gmm(dim: int = 2, components: int = 4, radius: float = 2.0, var: float = 0.1) -> MixtureData:
    """Equal-weight mixture with means spread on a circle in the first two coordinates."""
    angles = 2 * np.pi * np.arange(components) / components
    means = np.zeros((components, dim))
    means[:, 0] = radius * np.cos(angles)
    if dim > 1:
        means[:, 1] = radius * np.sin(angles)
    return MixtureData(np.full(components, 1.0 / components), means, np.full((components, dim), var))


def distribution_from_dict(spec: dict) -> DataDistribution:
    spec = dict(spec)
    kind = spec.pop("dist", "gaussian")
    if kind == "gaussian":
        if "mean" in spec:
            return GaussianData(spec["mean"], spec["var"])
        return default_gaussian(int(spec.get("dim", 2)))
    if kind == "gmm":
        if "means" in spec:
            return MixtureData(spec["weights"], spec["means"], spec["vars"])
        return default_gmm(int(spec.get("dim", 2)), int(spec.get("components", 4)),
                           float(spec.get("radius", 2.0)), float(spec.get("var", 0.1)))
    raise DomainError(f"unknown distribution {kind!r}")


class DenoiserOracle:
    """Posterior-mean denoiser with an evaluation counter.

    One instance per solver run; the counter is guarded by a lock so that
    accidental sharing still counts correctly.
    """

    def __init__(self, distribution: DataDistribution, schedule: NoiseSchedule,
                 mode=Parameterization.DATA):
        self.distribution = distribution
        self.schedule = schedule
        self.mode = as_param(mode)
        self._nfe = 0
        self._lock = threading.Lock()

    @property
    def nfe(self) -> int:
        return self._nfe

    def reset(self):
        with self._lock:
            self._nfe = 0

    def fresh(self, mode=None) -> "DenoiserOracle":
        return DenoiserOracle(self.distribution, self.schedule, self.mode if mode is None else mode)

    def data_prediction(self, x, t):
        alpha, sigma, _ = eval_schedule(self.schedule, t)
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite input state")
        return self.distribution.posterior_mean(x, alpha, sigma)

    def noise_prediction(self, x, t):
        alpha, sigma, _ = eval_schedule(self.schedule, t)
        return (np.asarray(x, dtype=float) - alpha * self.data_prediction(x, t)) / sigma

    def evaluate(self, x, t):
        """Counted evaluation in the oracle's own parameterization."""
        out = self.data_prediction(x, t) if self.mode is Parameterization.DATA else self.noise_prediction(x, t)
        with self._lock:
            self._nfe += 1
        return out

    __call__ = evaluate


def cfg_combine(cond, uncond, w: float):
    """Classifier-free guidance: ``(1 + w) cond - w uncond``."""
    cond = np.asarray(cond, dtype=float)
    uncond = np.asarray(uncond, dtype=float)
    if cond.shape != uncond.shape:
        raise DomainError("cond and uncond must have the same shape")
    return (1.0 + w) * cond - w * uncond


def sample_forward(distribution: DataDistribution, schedule: NoiseSchedule, t: float,
                   rng: np.random.Generator, n: int | None = None):
    """Draw ``(x0, xt, eps)`` with ``xt = alpha_t x0 + sigma_t eps``."""
    alpha, sigma, _ = eval_schedule(schedule, t)
    m = 1 if n is None else n
    x0 = distribution.sample(m, rng)
    eps = rng.standard_normal(x0.shape)
    xt = alpha * x0 + sigma * eps
    if n is None:
        return x0[0], xt[0], eps[0]
    return x0, xt, eps
