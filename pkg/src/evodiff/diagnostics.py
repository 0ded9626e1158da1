"""Entropy and variance checks plus sample-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, NumericalError
from .oracle import DenoiserOracle, GaussianData
from .schedule import NoiseSchedule, Parameterization, TimeGrid, eval_schedule, kappa
from .solver import SolverKind, run

LOG_2PI_E = np.log(2 * np.pi) + 1.0


def gaussian_entropy(var_diag) -> float:
    """Differential entropy of ``N(., diag(var_diag))``."""
    v = np.atleast_1d(np.asarray(var_diag, dtype=float))
    if v.size == 0 or np.any(~(v > 0)):
        raise DomainError("variances must be positive")
    return float(0.5 * v.size * LOG_2PI_E + 0.5 * np.sum(np.log(v)))


@dataclass(frozen=True)
class EntropyRecord:
    i: int
    var_p1: float
    var_p2: float
    delta_h: float
    interval: tuple[float, float]
    ratio: float = float("nan")

    def __post_init__(self):
        if self.var_p1 < 0 or self.var_p2 < 0:
            raise DomainError("variances must be non-negative")


def variance_interval(var_t: float, var_s: float) -> tuple[float, float]:
    """Ratios ``h/h_hat`` for which the gradient step lowers conditional entropy."""
    return 1.0, 4.0 * var_t / (var_s + var_t)


def snr_interval(snr_t: float, snr_s: float) -> tuple[float, float]:
    return 1.0, 4.0 * snr_s / (snr_t + snr_s)


def delta_entropy_gradient_vs_ddim(h: float, h_hat: float, var_t: float, var_s: float, d: int = 1):
    """Entropy change of a finite-difference gradient step relative to DDIM.

    Returns ``(delta_H, (lo, hi))``; ``delta_H <= 0`` for ``h/h_hat`` in ``[lo, hi]``.
    """
    if h_hat == 0:
        raise DomainError("h_hat must be nonzero")
    if not (var_t > 0 and var_s > 0):
        raise DomainError("variances must be positive")
    if d < 1:
        raise DomainError("dimension must be >= 1")
    rho = h / h_hat
    arg = 1.0 - rho + rho**2 / 4.0 + (rho**2 / 4.0) * (var_s / var_t)
    return 0.5 * d * float(np.log(abs(arg))), variance_interval(var_t, var_s)


def entropy_scan(n: int, rng: np.random.Generator, var_ratio=(0.25, 4.0)) -> list[EntropyRecord]:
    """Sample ``(var_t, var_s, h/h_hat)`` with the ratio strictly inside its interval.

    Variance ratios are log-uniform in ``var_ratio``; draws whose interval is
    empty (upper end at or below 1) are rejected and redrawn.
    """
    lo_q, hi_q = map(float, var_ratio)
    if not 0 < lo_q <= hi_q or n < 1:
        raise DomainError("n >= 1 and 0 < var_ratio[0] <= var_ratio[1] required")
    out = []
    while len(out) < n:
        var_t = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        var_s = var_t * float(np.exp(rng.uniform(np.log(lo_q), np.log(hi_q))))
        lo, hi = variance_interval(var_t, var_s)
        if hi <= lo:
            continue
        rho = float(rng.uniform(lo, hi))
        if not lo < rho < hi:
            continue
        dh, interval = delta_entropy_gradient_vs_ddim(rho, 1.0, var_t, var_s)
        out.append(EntropyRecord(len(out), var_t, var_s, dh, interval, rho))
    return out


# ---------------------------------------------------------- decomposition

@dataclass(frozen=True)
class DecompositionResult:
    mse: float
    variance_term: float
    bias_term: float
    residual: float
    standard_error: float


def reconstruction_decomposition_check(oracle: DenoiserOracle, schedule: NoiseSchedule, t_pair,
                                       n_samples: int, rng: np.random.Generator) -> DecompositionResult:
    """Monte-Carlo split of ``E|x_i - x_0|^2`` around ``mu = E[x_i | x_{i+1}, x_0]``.

    ``t_pair = (t_i, t_{i+1})`` with ``t_i <= t_{i+1}``. Conditioning on ``x_0``
    makes ``x_i - mu`` independent of ``mu - x_0``, so the cross term (reported
    as ``residual`` with its standard error) vanishes in expectation.
    """
    dist = oracle.distribution
    t_i, t_j = map(float, t_pair)
    if t_i > t_j:
        raise DomainError("t_pair must be ordered (t_i, t_{i+1}) with t_i <= t_{i+1}")
    if n_samples < 2:
        raise DomainError("n_samples >= 2 required")
    a_i, s_i, _ = eval_schedule(schedule, t_i)
    a_j, s_j, _ = eval_schedule(schedule, t_j)
    ratio = a_j / a_i
    extra = max(s_j**2 - ratio**2 * s_i**2, 0.0)

    x0 = dist.sample(n_samples, rng)
    xi = a_i * x0 + s_i * rng.standard_normal(x0.shape)
    xj = ratio * xi + np.sqrt(extra) * rng.standard_normal(x0.shape)
    # forward posterior q(x_i | x_{i+1}, x_0)
    mu = a_i * x0 + (ratio * s_i**2 / s_j**2) * (xj - a_j * x0)

    mse_k = np.sum((xi - x0) ** 2, axis=1)
    var_k = np.sum((xi - mu) ** 2, axis=1)
    bias_k = np.sum((mu - x0) ** 2, axis=1)
    cross = mse_k - var_k - bias_k
    return DecompositionResult(
        mse=float(mse_k.mean()), variance_term=float(var_k.mean()), bias_term=float(bias_k.mean()),
        residual=float(abs(cross.mean())), standard_error=float(cross.std(ddof=1) / np.sqrt(n_samples)))


# ------------------------------------------------------- data vs noise

@dataclass(frozen=True)
class ParamVarianceRecord:
    i: int
    t: float
    var_data: float
    var_noise: float
    linear_data: float
    linear_noise: float
    nonlinear_data: float
    nonlinear_noise: float
    coef_data: float
    coef_noise: float

    @property
    def ordered(self) -> bool:
        return self.var_data < self.var_noise


def data_vs_noise_variance(oracle_pair, schedule: NoiseSchedule, grid: TimeGrid, n_samples: int,
                           rng: np.random.Generator, x0=None) -> list[ParamVarianceRecord]:
    """Conditional (given ``x_0``) variance of one DDIM step under each parameterization.

    The step is split into a linear part (coefficient times ``x_{t_i}``) and a
    nonlinear part (model term), whose variances are added as independent terms.
    """
    data_oracle, noise_oracle = oracle_pair
    dist = data_oracle.distribution
    if x0 is None:
        x0 = dist.sample(1, rng)[0]
    x0 = np.asarray(x0, dtype=float)
    out = []
    for i in range(grid.N, 0, -1):
        t_cur, t_next = grid.t(i), grid.t(i - 1)
        a_c, s_c, _ = eval_schedule(schedule, t_cur)
        a_n, s_n, _ = eval_schedule(schedule, t_next)
        xt = a_c * x0 + s_c * rng.standard_normal((n_samples, x0.size))
        h_d = float(kappa(schedule, t_next, Parameterization.DATA) - kappa(schedule, t_cur, Parameterization.DATA))
        h_n = float(kappa(schedule, t_next, Parameterization.NOISE) - kappa(schedule, t_cur, Parameterization.NOISE))
        c_d, c_n = s_n / s_c, a_n / a_c
        lin_d = np.sum(np.var(c_d * xt, axis=0, ddof=1))
        lin_n = np.sum(np.var(c_n * xt, axis=0, ddof=1))
        nl_d = np.sum(np.var(s_n * h_d * data_oracle.data_prediction(xt, t_cur), axis=0, ddof=1))
        nl_n = np.sum(np.var(a_n * h_n * noise_oracle.noise_prediction(xt, t_cur), axis=0, ddof=1))
        out.append(ParamVarianceRecord(i, t_cur, float(lin_d + nl_d), float(lin_n + nl_n), float(lin_d),
                                       float(lin_n), float(nl_d), float(nl_n), float(c_d), float(c_n)))
    return out


# ----------------------------------------------------------------- metrics

def _check_samples(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise DomainError(f"{name} must be a finite (n, d) array")
    return a


def _psd_sqrt(m):
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _sym(c, tol=1e-10):
    c = 0.5 * (c + c.T)
    w = np.linalg.eigvalsh(c)
    if w.size and w.min() < -tol * max(1.0, abs(w.max())):
        raise NumericalError("covariance is not positive semi-definite")
    return c


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``."""
    mu_a, mu_b = np.atleast_1d(mu_a).astype(float), np.atleast_1d(mu_b).astype(float)
    cov_a, cov_b = _sym(np.atleast_2d(cov_a).astype(float)), _sym(np.atleast_2d(cov_b).astype(float))
    ra = _psd_sqrt(cov_a)
    w = np.linalg.eigvalsh(_sym(ra @ cov_b @ ra))
    tr_cross = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    val = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    return max(val, 0.0)


def frechet_gaussian(samples_a, samples_b) -> float:
    a, b = _check_samples(samples_a, "samples_a"), _check_samples(samples_b, "samples_b")
    if a.shape[1] != b.shape[1]:
        raise DomainError("dimension mismatch")
    d = a.shape[1]
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise DomainError("need at least d + 1 samples per side")
    return frechet_from_moments(a.mean(0), np.cov(a, rowvar=False).reshape(d, d),
                                b.mean(0), np.cov(b, rowvar=False).reshape(d, d))


def sliced_wasserstein(samples_a, samples_b, n_projections: int = 128,
                       rng: np.random.Generator | None = None) -> float:
    """Mean over random unit directions of the 1-D W2 between projections."""
    a, b = _check_samples(samples_a, "samples_a"), _check_samples(samples_b, "samples_b")
    if a.shape != b.shape:
        raise DomainError("sliced Wasserstein needs equal sample counts and dimensions")
    if n_projections < 32:
        raise DomainError("n_projections >= 32 required")
    rng = np.random.default_rng(0) if rng is None else rng
    dirs = rng.standard_normal((a.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    return float(np.mean(np.sqrt(np.mean((pa - pb) ** 2, axis=0))))


# ------------------------------------------------------------ convergence

@dataclass
class ConvergenceResult:
    slope: float
    Ns: list[int]
    errors: list[float]
    exact: bool = False


def convergence_order(kind: SolverKind, oracle, schedule: NoiseSchedule, Ns, N_ref: int,
                      n_trials: int = 64, seed: int = 0, grid_policy: str = "logsnr",
                      dim: int | None = None, exact_tol: float = 1e-12) -> ConvergenceResult:
    """Least-squares slope of ``-log(error)`` against ``log N``.

    The error is the trial-averaged distance to the solver's own ``N_ref`` run
    from the same ``x_T``. When every error is below ``exact_tol`` the fit is
    skipped and ``exact=True``.
    """
    from .schedule import make_grid

    Ns = sorted(int(n) for n in Ns)
    if N_ref < 16 * Ns[-1]:
        raise DomainError("N_ref >= 16 * max(Ns) required")
    if n_trials < 1:
        raise DomainError("n_trials >= 1 required")
    if dim is None:
        dim = oracle.distribution.dim
    fresh = getattr(oracle, "fresh", lambda: oracle)
    ref_grid = make_grid(schedule, grid_policy, N_ref)
    x_T = np.random.default_rng(seed).standard_normal((n_trials, dim)) * float(schedule.sigma(ref_grid.t(N_ref)))
    ref = run(kind, fresh(), ref_grid, schedule, x_T).x0
    errors = []
    for N in Ns:
        x0 = run(kind, fresh(), make_grid(schedule, grid_policy, N), schedule, x_T).x0
        errors.append(float(np.mean(np.linalg.norm(np.atleast_2d(x0 - ref), axis=-1))))
    scale = max(1.0, float(np.max(np.abs(ref))))
    if max(errors) <= exact_tol * scale:
        return ConvergenceResult(float("nan"), Ns, errors, exact=True)
    slope = -np.polyfit(np.log(Ns), np.log(errors), 1)[0]
    return ConvergenceResult(float(slope), Ns, errors)


# -------------------------------------------------------- entropy trajectory

def gaussian_flow(dist: GaussianData, schedule: NoiseSchedule, x, t_from: float, t_to: float):
    """Exact probability-flow transport of ``x`` for Gaussian data."""
    a_f, s_f, _ = eval_schedule(schedule, t_from)
    a_t, s_t, _ = eval_schedule(schedule, t_to)
    m, v = dist.mean, dist.var
    scale = np.sqrt(a_t**2 * v + s_t**2) / np.sqrt(a_f**2 * v + s_f**2)
    return a_t * m + scale * (x - a_f * m)


@dataclass(frozen=True)
class TrajectoryPoint:
    i: int
    t: float
    var_estimate: float
    dim: int

    @property
    def entropy_estimate(self) -> float:
        return gaussian_entropy(np.full(self.dim, max(self.var_estimate, np.finfo(float).tiny)))


def reference_transport(oracle, schedule: NoiseSchedule, x, t_from: float, t_to: float,
                        substeps: int = 200):
    """Fine second-order solve of the flow between two times (non-Gaussian data)."""
    from .schedule import make_grid
    from .solver import HeunEDM

    if t_from == t_to:
        return np.array(x, dtype=float, copy=True)
    grid = make_grid(schedule, "logsnr", substeps, t_start=t_from, t_end=t_to)
    probe = oracle.fresh(Parameterization.DATA) if hasattr(oracle, "fresh") else oracle
    return run(HeunEDM(), probe, grid, schedule, x).x0


def step_variance_trajectory(kind: SolverKind, oracle, grid: TimeGrid, schedule: NoiseSchedule,
                             x_T, reference=None, mode: str = "trajectory") -> list[TrajectoryPoint]:
    """Per-step spread of the solver's state around the exact probability flow.

    ``mode="trajectory"``: per-coordinate mean squared deviation of ``x_{t_{i-1}}``
    from the exact flow of the same ``x_T``. ``mode="local"``: deviation of the
    transition from the exact flow of the same ``x_{t_i}``. The exact flow is
    closed form for Gaussian data; otherwise ``reference(x, t_from, t_to)`` is
    used, defaulting to a fine second-order solve.
    """
    if mode not in ("trajectory", "local"):
        raise DomainError("mode must be 'trajectory' or 'local'")
    dist = oracle.distribution
    if reference is None:
        if isinstance(dist, GaussianData):
            reference = lambda x, a, b: gaussian_flow(dist, schedule, x, a, b)
        else:
            reference = lambda x, a, b: reference_transport(oracle, schedule, x, a, b)
    x_T = np.atleast_2d(np.asarray(x_T, dtype=float))
    dim = x_T.shape[1]
    if dim < 1:
        raise DomainError("dimension must be >= 1")
    pts: list[TrajectoryPoint] = []
    exact = [x_T]

    def cb(i, x_before, x_after, rec):
        if mode == "local":
            target = reference(x_before, grid.t(i), grid.t(i - 1))
        else:
            exact[0] = reference(exact[0], grid.t(i), grid.t(i - 1))
            target = exact[0]
        pts.append(TrajectoryPoint(i, grid.t(i), float(np.mean((x_after - target) ** 2)), dim))

    run(kind, oracle, grid, schedule, x_T, callback=cb)
    return pts


@dataclass
class MetricReport:
    frechet_gaussian: float = float("nan")
    sliced_wasserstein: float = float("nan")
    convergence_slope: float = float("nan")
    n_projections: int = 128
    n_samples: int = 0
    nfe: dict = field(default_factory=dict)
