"""Estimator-style front end: fit a data model, then transform noise into samples."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.mixture import GaussianMixture
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state

from .exceptions import DomainError
from .oracle import DenoiserOracle, GaussianData, MixtureData
from .schedule import make_grid, schedule_from_dict
from .solver import RunResult, initial_noise, make_solver, oracle_mode, run

_VAR_FLOOR = 1e-6


def check_samples(X, n_features: int | None = None, min_samples: int = 1, name: str = "X") -> np.ndarray:
    """Validate a finite 2-D float array, optionally with a fixed width."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_samples,
                    input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_steps(steps) -> int:
    if isinstance(steps, (bool, np.bool_)) or int(steps) != steps or steps < 1:
        raise ValueError("steps must be an integer >= 1")
    return int(steps)


class DiffusionSampler(TransformerMixin, BaseEstimator):
    """Probability-flow sampler driven by an exact posterior-mean denoiser.

    ``fit`` estimates a diagonal Gaussian (``n_components=1``) or a diagonal
    Gaussian mixture from data, unless an explicit ``distribution`` is given.
    ``transform`` maps initial noise ``x_T`` to samples at ``t_0``.
    """

    def __init__(self, solver="evodiff", steps=10, schedule="vp_linear", grid="logsnr",
                 n_components=1, distribution=None, mu=0.5, r_strategy="logsnr",
                 eta_formula="analytic", zeta_formula="literal", reuse_probe=True,
                 zeta_map="plain", corrector="interpolated", reduction="batch",
                 beta0=0.1, beta1=20.0, rho=7.0, t_start=None, t_end=None, random_state=None):
        self.solver = solver
        self.steps = steps
        self.schedule = schedule
        self.grid = grid
        self.n_components = n_components
        self.distribution = distribution
        self.mu = mu
        self.r_strategy = r_strategy
        self.eta_formula = eta_formula
        self.zeta_formula = zeta_formula
        self.reuse_probe = reuse_probe
        self.zeta_map = zeta_map
        self.corrector = corrector
        self.reduction = reduction
        self.beta0 = beta0
        self.beta1 = beta1
        self.rho = rho
        self.t_start = t_start
        self.t_end = t_end
        self.random_state = random_state

    def _build(self):
        sched = {"kind": self.schedule}
        if self.schedule == "vp_linear":
            sched.update(beta0=self.beta0, beta1=self.beta1)
        self.schedule_ = schedule_from_dict(sched)
        self.grid_ = make_grid(self.schedule_, self.grid, check_steps(self.steps), self.t_start,
                               self.t_end, self.rho)
        self.kind_ = make_solver(self.solver, mu=self.mu, r_strategy=self.r_strategy,
                                 eta_formula=self.eta_formula, zeta_formula=self.zeta_formula,
                                 reuse_probe=self.reuse_probe, zeta_map=self.zeta_map,
                                 corrector=self.corrector, reduction=self.reduction)

    def fit(self, X=None, y=None):
        if self.distribution is not None:
            if not isinstance(self.distribution, (GaussianData, MixtureData)):
                raise DomainError("distribution must be GaussianData or MixtureData")
            self.distribution_ = self.distribution
        else:
            if X is None:
                raise ValueError("X is required when no distribution is given")
            X = check_samples(X, min_samples=2)
            if int(self.n_components) < 1:
                raise ValueError("n_components must be >= 1")
            if self.n_components == 1:
                self.distribution_ = GaussianData(X.mean(axis=0), np.maximum(X.var(axis=0), _VAR_FLOOR))
            else:
                gm = GaussianMixture(n_components=int(self.n_components), covariance_type="diag",
                                     random_state=self.random_state).fit(X)
                w = gm.weights_ / gm.weights_.sum()
                self.distribution_ = MixtureData(w, gm.means_, np.maximum(gm.covariances_, _VAR_FLOOR))
        self.n_features_in_ = self.distribution_.dim
        self._build()
        return self

    def oracle(self) -> DenoiserOracle:
        check_is_fitted(self, "distribution_")
        return DenoiserOracle(self.distribution_, self.schedule_, oracle_mode(self.kind_))

    def run(self, X_T) -> RunResult:
        check_is_fitted(self, "distribution_")
        X_T = check_samples(X_T, self.n_features_in_, name="X_T")
        return run(self.kind_, self.oracle(), self.grid_, self.schedule_, X_T)

    def transform(self, X):
        """Integrate the flow from noise ``X`` (shape ``(n, d)``) to data space."""
        result = self.run(X)
        self.last_run_ = result
        return result.x0

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "distribution_")
        rng = check_random_state(self.random_state if random_state is None else random_state)
        gen = np.random.default_rng(rng.randint(2**32 - 1))
        X_T = initial_noise(self.schedule_, self.grid_, (int(n_samples), self.n_features_in_), gen)
        return self.transform(X_T)

    def expected_nfe(self) -> int:
        from .solver import expected_nfe

        check_is_fitted(self, "kind_")
        return expected_nfe(self.kind_, self.grid_.N)
