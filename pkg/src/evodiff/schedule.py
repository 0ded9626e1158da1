"""Noise schedules, time grids and step-ratio strategies.

All time arrays follow the sampling direction: ``TimeGrid.times`` is stored
as ``[t_N, ..., t_0]`` (strictly decreasing) and ``grid.t(i)`` returns
``t_i`` with ``t_N`` the starting (noisiest) time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .exceptions import DomainError

_DOMAIN_RTOL = 1e-9
_DENOM_EPS = 1e-14


class Parameterization(str, enum.Enum):
    """Which quantity the denoiser predicts.

    The time variable ``kappa`` is ``alpha/sigma`` for data prediction and
    ``sigma/alpha`` for noise prediction.
    """

    DATA = "data"
    NOISE = "noise"


def as_param(param) -> Parameterization:
    return param if isinstance(param, Parameterization) else Parameterization(str(param))


class NoiseSchedule:
    """Base class. Subclasses provide ``log_alpha``, ``sigma`` and ``inverse_lambda``."""

    kind: ClassVar[str] = ""
    t_min: float = 0.0
    t_max: float = 1.0
    default_t_end: float = 1e-3

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t)) or np.any(t <= self.t_min):
            raise DomainError(f"time {t} outside ({self.t_min}, {self.t_max}] for {self.kind}")
        if np.any(t > self.t_max * (1 + _DOMAIN_RTOL)):
            raise DomainError(f"time {t} outside ({self.t_min}, {self.t_max}] for {self.kind}")
        return np.minimum(t, self.t_max)

    def log_alpha(self, t):
        raise NotImplementedError

    def log_sigma(self, t):
        raise NotImplementedError

    def alpha(self, t):
        return np.exp(self.log_alpha(t))

    def sigma(self, t):
        return np.exp(self.log_sigma(t))

    def lam(self, t):
        """Half log-SNR, ``log(alpha/sigma)``."""
        return self.log_alpha(t) - self.log_sigma(t)

    def inverse_lambda(self, lam):
        raise NotImplementedError

    def default_span(self) -> tuple[float, float]:
        return float(self.t_max), float(self.default_t_end)

    def to_dict(self) -> dict:
        raise NotImplementedError


class _VP(NoiseSchedule):
    def log_sigma(self, t):
        la = self.log_alpha(t)
        s2 = -np.expm1(2.0 * la)
        if np.any(s2 <= 0):
            raise DomainError(f"sigma vanishes at t={t}")
        return 0.5 * np.log(s2)

    @staticmethod
    def _log_alpha_from_lambda(lam):
        return -0.5 * np.logaddexp(0.0, -2.0 * np.asarray(lam, dtype=float))


@dataclass(frozen=True)
class VPLinear(_VP):
    """Variance preserving schedule with linear ``beta(t) = beta0 + t (beta1 - beta0)``."""

    beta0: float = 0.1
    beta1: float = 20.0
    t_max: float = 1.0
    kind: ClassVar[str] = "vp_linear"

    def __post_init__(self):
        if not (self.beta1 > self.beta0 >= 0):
            raise DomainError("VPLinear requires beta1 > beta0 >= 0")

    def log_alpha(self, t):
        t = self._check(t)
        return -0.25 * t**2 * (self.beta1 - self.beta0) - 0.5 * t * self.beta0

    def inverse_lambda(self, lam):
        db = self.beta1 - self.beta0
        tmp = 2.0 * db * np.logaddexp(-2.0 * np.asarray(lam, dtype=float), 0.0)
        t = tmp / (np.sqrt(self.beta0**2 + tmp) + self.beta0) / db
        return self._check(t)

    def to_dict(self):
        return {"kind": self.kind, "beta0": self.beta0, "beta1": self.beta1, "t_max": self.t_max}


@dataclass(frozen=True)
class VPCosine(_VP):
    """Cosine variance preserving schedule in continuous time."""

    s: float = 0.008
    t_max: float = 0.9946
    kind: ClassVar[str] = "vp_cosine"

    def __post_init__(self):
        # alpha hits zero at t = 1; keep the domain strictly inside
        if not (0 < self.t_max < 1) or self.s <= 0:
            raise DomainError("VPCosine requires 0 < t_max < 1 and s > 0")

    @property
    def _log_alpha0(self):
        return np.log(np.cos(self.s / (1 + self.s) * np.pi / 2))

    def log_alpha(self, t):
        t = self._check(t)
        return np.log(np.cos((t + self.s) / (1 + self.s) * np.pi / 2)) - self._log_alpha0

    def inverse_lambda(self, lam):
        la = self._log_alpha_from_lambda(lam)
        t = 2 * (1 + self.s) / np.pi * np.arccos(np.exp(la + self._log_alpha0)) - self.s
        return self._check(t)

    def to_dict(self):
        return {"kind": self.kind, "s": self.s, "t_max": self.t_max}


@dataclass(frozen=True)
class VEEDM(NoiseSchedule):
    """Variance exploding schedule with ``alpha = 1`` and ``sigma = t``."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    kind: ClassVar[str] = "ve_edm"

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise DomainError("VEEDM requires 0 < sigma_min < sigma_max")

    @property
    def t_max(self):
        return self.sigma_max

    @property
    def default_t_end(self):
        return self.sigma_min

    def log_alpha(self, t):
        return np.zeros_like(self._check(t))

    def log_sigma(self, t):
        return np.log(self._check(t))

    def inverse_lambda(self, lam):
        return self._check(np.exp(-np.asarray(lam, dtype=float)))

    def to_dict(self):
        return {"kind": self.kind, "sigma_min": self.sigma_min, "sigma_max": self.sigma_max}


SCHEDULES = {cls.kind: cls for cls in (VPLinear, VPCosine, VEEDM)}


def schedule_from_dict(spec: dict) -> NoiseSchedule:
    spec = dict(spec)
    kind = spec.pop("kind", "vp_linear")
    if kind not in SCHEDULES:
        raise DomainError(f"unknown schedule kind {kind!r}; choose from {sorted(SCHEDULES)}")
    return SCHEDULES[kind](**spec)


def eval_schedule(schedule: NoiseSchedule, t):
    """Return ``(alpha, sigma, lambda)`` at ``t``."""
    la, ls = schedule.log_alpha(t), schedule.log_sigma(t)
    return np.exp(la), np.exp(ls), la - ls


def log_kappa(schedule: NoiseSchedule, t, param=Parameterization.DATA):
    lam = schedule.lam(t)
    return lam if as_param(param) is Parameterization.DATA else -lam


def kappa(schedule: NoiseSchedule, t, param=Parameterization.DATA):
    return np.exp(log_kappa(schedule, t, param))


def kappa_inverse(schedule: NoiseSchedule, k, param=Parameterization.DATA):
    """Time at which ``kappa`` equals ``k``."""
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise DomainError("kappa must be positive")
    lk = np.log(k)
    return schedule.inverse_lambda(lk if as_param(param) is Parameterization.DATA else -lk)


def f_scale(schedule: NoiseSchedule, t, param=Parameterization.DATA):
    """Scale ``s_t`` with ``f(x) = x / s_t`` in the integrated form of the ODE."""
    return schedule.sigma(t) if as_param(param) is Parameterization.DATA else schedule.alpha(t)


GRID_POLICIES = ("uniform", "logsnr", "edm")
_POLICY_ALIASES = {"time_uniform": "uniform", "logsnr_uniform": "logsnr", "karras": "edm", "edm_karras": "edm"}


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray
    policy: str = "custom"
    rho: float = 7.0

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise DomainError("a grid needs at least two times (N >= 1)")
        if not np.all(np.diff(t) < 0):
            raise DomainError("grid times must be strictly decreasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def N(self) -> int:
        return self.times.size - 1

    def t(self, i: int) -> float:
        if not 0 <= i <= self.N:
            raise IndexError(f"grid index {i} outside [0, {self.N}]")
        return float(self.times[self.N - i])

    def h(self, schedule, i, param=Parameterization.DATA) -> float:
        """``kappa(t_{i-1}) - kappa(t_i)``."""
        return float(kappa(schedule, self.t(i - 1), param) - kappa(schedule, self.t(i), param))

    def h_lambda(self, schedule, i) -> float:
        return float(schedule.lam(self.t(i - 1)) - schedule.lam(self.t(i)))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())

    def __repr__(self):
        return f"TimeGrid(policy={self.policy!r}, N={self.N}, t_start={self.times[0]:g}, t_end={self.times[-1]:g})"


def make_grid(schedule: NoiseSchedule, policy: str = "logsnr", N: int = 10,
              t_start: float | None = None, t_end: float | None = None, rho: float = 7.0) -> TimeGrid:
    policy = _POLICY_ALIASES.get(policy, policy)
    if policy not in GRID_POLICIES:
        raise DomainError(f"unknown grid policy {policy!r}; choose from {GRID_POLICIES}")
    if int(N) != N or N < 1:
        raise DomainError("N >= 1 required")
    N = int(N)
    d_start, d_end = schedule.default_span()
    t_start = d_start if t_start is None else float(t_start)
    t_end = d_end if t_end is None else float(t_end)
    if not t_start > t_end > 0:
        raise DomainError("t_start > t_end > 0 required")
    schedule._check([t_start, t_end])

    if policy == "uniform":
        times = np.linspace(t_start, t_end, N + 1)
    elif policy == "logsnr":
        lam = np.linspace(schedule.lam(t_start), schedule.lam(t_end), N + 1)
        times = schedule.inverse_lambda(lam)
    else:
        if rho <= 0:
            raise DomainError("rho must be positive")
        # sigma of the equivalent VE process, exp(-lambda)
        s_max = float(np.exp(-schedule.lam(t_start)))
        s_min = float(np.exp(-schedule.lam(t_end)))
        frac = np.arange(N + 1) / N
        sig = (s_max ** (1 / rho) + frac * (s_min ** (1 / rho) - s_max ** (1 / rho))) ** rho
        times = schedule.inverse_lambda(-np.log(sig))
    times = np.array(times, dtype=float)
    times[0], times[-1] = t_start, t_end
    if not np.all(np.diff(times) < 0):
        raise DomainError(f"{policy} grid with N={N} is not strictly decreasing")
    return TimeGrid(times, policy=policy, rho=rho)


def edm_sigmas(sigma_min: float, sigma_max: float, N: int, rho: float = 7.0) -> np.ndarray:
    """Karras noise levels ``sigma_0..sigma_N`` in sampling order."""
    i = np.arange(N + 1)
    return (sigma_max ** (1 / rho) + i / N * (sigma_min ** (1 / rho) - sigma_max ** (1 / rho))) ** rho


R_STRATEGIES = ("logsnr", "normvar", "arctan", "refined", "confidence")


@dataclass(frozen=True)
class RStrategy:
    kind: str = "logsnr"
    beta: float = 0.5

    def __post_init__(self):
        if self.kind not in R_STRATEGIES:
            raise DomainError(f"unknown r-strategy {self.kind!r}; choose from {R_STRATEGIES}")


def _ratio(num, den):
    if np.any(np.abs(den) < _DENOM_EPS):
        raise DomainError("step-ratio denominator below 1e-14")
    return num / den


def _rel_increment(v_new, v_old):
    # (Var_t - Var_{t-1}) / Var_t, with the roles swapped when the order flips
    if v_new < v_old:
        v_new, v_old = v_old, v_new
    return (v_new - v_old) / v_new


def _cos_sim(a, b):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    den = na * nb
    return np.where(den > 0, np.sum(a * b, axis=-1) / np.where(den > 0, den, 1.0), 0.0)


def step_ratio(strategy: RStrategy, grid: TimeGrid, schedule: NoiseSchedule, i: int,
               context=None, param=Parameterization.DATA):
    """Ratio ``r_i`` of the previous to the current step in the chosen space.

    ``context`` is a ``(direction, state)`` pair and is required only for the
    confidence strategy; the result is then one ratio per sample row.
    """
    if isinstance(strategy, str):
        strategy = RStrategy(strategy)
    if not 1 <= i <= grid.N - 1:
        raise DomainError(f"step ratio needs 1 <= i <= N-1, got i={i}, N={grid.N}")
    t_prev, t_cur, t_next = grid.t(i - 1), grid.t(i), grid.t(i + 1)
    kind = strategy.kind

    def r_logsnr():
        lk = log_kappa(schedule, np.array([t_prev, t_cur, t_next]), param)
        return float(_ratio(lk[1] - lk[2], lk[0] - lk[1]))

    def r_normvar():
        v = schedule.sigma(np.array([t_prev, t_cur, t_next])) ** 2
        return float(_ratio(_rel_increment(v[2], v[1]), _rel_increment(v[1], v[0])))

    def r_arctan():
        k = kappa(schedule, np.array([t_prev, t_cur, t_next]), param)
        h_cur, h_older = k[0] - k[1], k[1] - k[2]
        return float(_ratio(np.arctan(h_older), np.arctan(h_cur)))

    if kind == "logsnr":
        return r_logsnr()
    if kind == "normvar":
        return r_normvar()
    if kind == "arctan":
        return r_arctan()
    if kind == "refined":
        return float(np.sqrt(r_normvar() * r_arctan()))
    if context is None:
        raise DomainError("confidence strategy requires a (direction, state) context")
    direction, state = context
    w = np.clip(1.0 + strategy.beta * _cos_sim(direction, state), 0.5, 1.5)
    return r_logsnr() * w
