"""Probability-flow ODE solvers written in the integrated ``kappa`` form.

With ``f(x) = x / s_t`` (``s = sigma`` for data prediction, ``s = alpha`` for
noise prediction) every update has the shape ``f(x_{i-1}) = f(x_i) + U`` and
only the increment ``U`` differs between methods.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, ClassVar

import numpy as np
from scipy.optimize import brentq

from . import varopt
from .exceptions import DomainError, NumericalError
from .schedule import (NoiseSchedule, Parameterization, RStrategy, TimeGrid, as_param,
                       f_scale, kappa, kappa_inverse, step_ratio)

_H_EPS = 1e-14


# ---------------------------------------------------------------- solver kinds

@dataclass(frozen=True)
class SolverKind:
    name: ClassVar[str] = ""
    multistep: ClassVar[bool] = False
    evals_per_step: ClassVar[int] = 1

    def to_dict(self) -> dict:
        out = {"solver": self.name}
        for k, v in self.__dict__.items():
            out[k] = v.kind if isinstance(v, RStrategy) else v
        return out


@dataclass(frozen=True)
class DDIM(SolverKind):
    name: ClassVar[str] = "ddim"


@dataclass(frozen=True)
class FDSingle(SolverKind):
    r: float = 1.0
    name: ClassVar[str] = "fd"
    evals_per_step: ClassVar[int] = 2

    def __post_init__(self):
        if not self.r >= 1:
            raise DomainError("r >= 1 required")


RE_PRESETS = ("half", "snr")


@dataclass(frozen=True)
class RESingle(SolverKind):
    gamma: float = 0.5
    r: float = 1.0
    preset: str | None = None
    name: ClassVar[str] = "re"
    evals_per_step: ClassVar[int] = 2

    def __post_init__(self):
        if self.preset is not None and self.preset not in RE_PRESETS:
            raise DomainError(f"preset must be one of {RE_PRESETS}")
        if not 0 < self.gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        if not self.r >= 1:
            raise DomainError("r >= 1 required")


@dataclass(frozen=True)
class HeunEDM(SolverKind):
    name: ClassVar[str] = "heun"
    evals_per_step: ClassVar[int] = 2


@dataclass(frozen=True)
class DPMSolver2S(SolverKind):
    r1: float = 0.5
    form: str = "literal"
    name: ClassVar[str] = "dpm2s"
    evals_per_step: ClassVar[int] = 2

    def __post_init__(self):
        if not 0 < self.r1 <= 1:
            raise DomainError("r1 must lie in (0, 1]")
        if self.form not in ("literal", "gradient"):
            raise DomainError("form must be 'literal' or 'gradient'")


@dataclass(frozen=True)
class PlainKappa(SolverKind):
    name: ClassVar[str] = "plain_kappa"
    multistep: ClassVar[bool] = True


@dataclass(frozen=True)
class DPMpp2M(SolverKind):
    name: ClassVar[str] = "dpmpp2m"
    multistep: ClassVar[bool] = True


@dataclass(frozen=True)
class REMulti(SolverKind):
    """``zeta`` is a fixed float in (0, 1] or ``"remark"`` (sigma-squared weights)."""

    interp: str = "explicit"
    zeta: float | str = "remark"
    r_strategy: RStrategy = RStrategy()
    name: ClassVar[str] = "remulti"
    multistep: ClassVar[bool] = True

    def __post_init__(self):
        if self.interp not in ("explicit", "implicit"):
            raise DomainError("interp must be 'explicit' or 'implicit'")
        if isinstance(self.r_strategy, str):
            object.__setattr__(self, "r_strategy", RStrategy(self.r_strategy))
        if self.zeta != "remark":
            z = float(self.zeta)
            if not 0 < z <= 1:
                raise DomainError("fixed zeta must lie in (0, 1]")
            object.__setattr__(self, "zeta", z)


@dataclass(frozen=True)
class EVODiff(SolverKind):
    mu: float = 0.5
    r_strategy: RStrategy = RStrategy()
    eta_formula: str = "analytic"
    zeta_formula: str = "literal"
    reuse_probe: bool = True
    zeta_map: str = "plain"
    corrector: str = "interpolated"
    reduction: str = "batch"
    name: ClassVar[str] = "evodiff"
    multistep: ClassVar[bool] = True

    def __post_init__(self):
        if isinstance(self.r_strategy, str):
            object.__setattr__(self, "r_strategy", RStrategy(self.r_strategy))
        if not 0 <= self.mu <= 1:
            raise DomainError("mu must lie in [0, 1]")
        for attr, ok in (("eta_formula", varopt.FORMULAS), ("zeta_formula", varopt.FORMULAS),
                         ("zeta_map", ("plain", "scaled")), ("corrector", ("interpolated", "plain")),
                         ("reduction", ("batch", "sample"))):
            if getattr(self, attr) not in ok:
                raise DomainError(f"{attr} must be one of {ok}")


SOLVERS: dict[str, type[SolverKind]] = {
    cls.name: cls for cls in (DDIM, FDSingle, RESingle, HeunEDM, DPMSolver2S,
                              PlainKappa, DPMpp2M, REMulti, EVODiff)
}


def make_solver(name: str, **params) -> SolverKind:
    """Build a solver kind from its name, ignoring parameters it does not take."""
    if name not in SOLVERS:
        raise DomainError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}")
    cls = SOLVERS[name]
    fields = cls.__dataclass_fields__
    return cls(**{k: v for k, v in params.items() if k in fields and v is not None})


def expected_nfe(kind: SolverKind, N: int) -> int:
    """Documented oracle-evaluation count of a full run over ``N`` steps."""
    if isinstance(kind, EVODiff) or (isinstance(kind, REMulti) and kind.interp == "implicit"):
        if N == 1:
            return 1
        reuse = kind.reuse_probe if isinstance(kind, EVODiff) else True
        return N + 1 if reuse else 2 * N - 1
    return kind.evals_per_step * N


def oracle_mode(kind: SolverKind) -> Parameterization:
    """Parameterization a solver kind expects from its oracle."""
    return Parameterization.NOISE if isinstance(kind, DPMSolver2S) else Parameterization.DATA


# ------------------------------------------------------------------- records

@dataclass
class StepRecord:
    """Per-step diagnostics. Array fields hold one value per sample row."""

    i: int
    t: float
    zeta: np.ndarray | float = np.nan
    eta: np.ndarray | float = np.nan
    r: np.ndarray | float = np.nan
    zeta_raw: np.ndarray | float = np.nan
    eta_raw: np.ndarray | float = np.nan
    nfe_delta: int = 0
    flags: tuple[str, ...] = ()
    zeta_fallback: np.ndarray | bool = False
    eta_fallback: np.ndarray | bool = False
    predictor_state: np.ndarray | None = None
    corrected_state: np.ndarray | None = None

    def summary(self) -> dict:
        def m(v):
            v = np.asarray(v, dtype=float)
            return float(np.nanmean(v)) if v.size and not np.all(np.isnan(v)) else float("nan")

        return {"i": self.i, "t_i": self.t, "zeta": m(self.zeta), "eta": m(self.eta), "r": m(self.r),
                "zeta_raw": m(self.zeta_raw), "eta_raw": m(self.eta_raw), "nfe": self.nfe_delta,
                "fallback_flags": "|".join(self.flags)}


@dataclass
class Evaluation:
    t: float
    x: np.ndarray
    value: np.ndarray


class EvalHistory:
    """Ring buffer of past model evaluations, newest last, plus a pending probe."""

    def __init__(self, capacity: int = 2):
        if capacity < 2:
            raise ValueError("capacity >= 2 required")
        self._buf: deque[Evaluation] = deque(maxlen=capacity)
        self.pending: Evaluation | None = None

    def push(self, t, x, value):
        if self._buf and not t < self._buf[-1].t:
            raise DomainError("history times must strictly decrease")
        self._buf.append(Evaluation(float(t), x, value))

    def at(self, t) -> Evaluation | None:
        for e in reversed(self._buf):
            if e.t == t:
                return e
        return None

    def __len__(self):
        return len(self._buf)

    @property
    def last(self) -> Evaluation | None:
        return self._buf[-1] if self._buf else None


# --------------------------------------------------------------- primitives

def _param(oracle) -> Parameterization:
    return as_param(getattr(oracle, "mode", Parameterization.DATA))


def _advance(x, t_from, t_to, update, schedule, param):
    """Solve ``f(y) = f(x) + update`` for ``y`` at ``t_to``."""
    return f_scale(schedule, t_to, param) * (x / f_scale(schedule, t_from, param) + update)


def _h(schedule, t_from, t_to, param) -> float:
    return float(kappa(schedule, t_to, param) - kappa(schedule, t_from, param))


def _times(grid: TimeGrid, i: int):
    if not 1 <= i <= grid.N:
        raise DomainError(f"step index {i} outside [1, {grid.N}]")
    return grid.t(i), grid.t(i - 1)


def ddim_transition(x, t_from, t_to, schedule, oracle, value=None):
    """First-order step between arbitrary times; ``t_from == t_to`` is the identity."""
    param = _param(oracle)
    d = oracle.evaluate(x, t_from) if value is None else value
    if t_from == t_to:
        return np.array(x, dtype=float, copy=True)
    return _advance(x, t_from, t_to, _h(schedule, t_from, t_to, param) * d, schedule, param)


def ddim_step(x, i, grid, schedule, oracle):
    t_cur, t_next = _times(grid, i)
    return ddim_transition(x, t_cur, t_next, schedule, oracle)


def _midpoint(schedule, t_cur, h, r, param):
    h_hat = h / r
    if abs(h_hat) < _H_EPS:
        raise DomainError("intermediate step below 1e-14")
    if r == 1:
        return None, h_hat
    s = float(kappa_inverse(schedule, kappa(schedule, t_cur, param) + h_hat, param))
    return s, h_hat


def _gradient_step(x, i, grid, schedule, oracle, r, gamma):
    param = _param(oracle)
    t_cur, t_next = _times(grid, i)
    h = _h(schedule, t_cur, t_next, param)
    d_cur = oracle.evaluate(x, t_cur)
    s, h_hat = _midpoint(schedule, t_cur, h, r, param)
    s = t_next if s is None else s
    x_s = _advance(x, t_cur, s, h_hat * d_cur, schedule, param)
    d_s = oracle.evaluate(x_s, s)
    F = (d_s - d_cur) / h_hat
    update = h * (gamma * d_s + (1 - gamma) * d_cur) + 0.5 * h * h * F
    return _advance(x, t_cur, t_next, update, schedule, param)


def fd_single_step(x, i, grid, schedule, oracle, r=1.0):
    """Finite-difference gradient step through an intermediate point at ``h/r``."""
    if not r >= 1:
        raise DomainError("r >= 1 required")
    return _gradient_step(x, i, grid, schedule, oracle, r, 0.0)


def snr_preset(schedule, t_cur, t_next, param=Parameterization.DATA):
    """``(r, gamma)`` of the SNR-balanced preset.

    ``r`` depends on the SNR at the intermediate point it defines, so it is
    solved as a scalar fixed point on ``[1, sqrt(2)]``.
    """
    h = _h(schedule, t_cur, t_next, param)
    snr_t = float(np.exp(2 * schedule.lam(t_cur)))

    def snr_s(r):
        s = float(kappa_inverse(schedule, kappa(schedule, t_cur, param) + h / r, param))
        return float(np.exp(2 * schedule.lam(s)))

    def g(r):
        ss = snr_s(r)
        return r - np.sqrt(2 * ss / (snr_t + ss))

    if g(1.0) >= 0:
        r = 1.0
    else:
        r = brentq(g, 1.0, np.sqrt(2.0), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    ss = snr_s(r)
    return float(r), snr_t / (snr_t + ss)


def re_single_step(x, i, grid, schedule, oracle, gamma=0.5, r=1.0, preset=None):
    """Gradient step that also blends the intermediate evaluation with weight ``gamma``."""
    if preset == "half":
        gamma, r = 0.5, 1.0
    elif preset == "snr":
        t_cur, t_next = _times(grid, i)
        r, gamma = snr_preset(schedule, t_cur, t_next, _param(oracle))
    elif preset is not None:
        raise DomainError(f"preset must be one of {RE_PRESETS}")
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    if not r >= 1:
        raise DomainError("r >= 1 required")
    return _gradient_step(x, i, grid, schedule, oracle, r, gamma)


def heun_edm_step(x, i, grid, schedule, oracle):
    """Trapezoidal step with a first-order predictor."""
    param = _param(oracle)
    t_cur, t_next = _times(grid, i)
    h = _h(schedule, t_cur, t_next, param)
    d_cur = oracle.evaluate(x, t_cur)
    x_pred = _advance(x, t_cur, t_next, h * d_cur, schedule, param)
    d_next = oracle.evaluate(x_pred, t_next)
    return _advance(x, t_cur, t_next, 0.5 * h * (d_cur + d_next), schedule, param)


def dpm_solver_2s_step(x, i, grid, schedule, oracle, r1=0.5, form="literal"):
    """Second-order single-step exponential integrator for noise prediction.

    ``form="literal"`` uses the exponential coefficients, ``form="gradient"`` the
    equivalent finite-difference rewrite in ``kappa = sigma/alpha``.
    """
    if _param(oracle) is not Parameterization.NOISE:
        raise DomainError("dpm_solver_2s_step needs a noise-prediction oracle")
    if not 0 < r1 <= 1:
        raise DomainError("r1 must lie in (0, 1]")
    param = Parameterization.NOISE
    t_cur, t_next = _times(grid, i)
    lam_cur, lam_next = float(schedule.lam(t_cur)), float(schedule.lam(t_next))
    h_lam = lam_next - lam_cur
    s = float(schedule.inverse_lambda(lam_cur + r1 * h_lam))
    eps_cur = oracle.evaluate(x, t_cur)
    x_s = _advance(x, t_cur, s, _h(schedule, t_cur, s, param) * eps_cur, schedule, param)
    eps_s = oracle.evaluate(x_s, s)
    if form == "literal":
        k_next = float(kappa(schedule, t_next, param))
        c = k_next * np.expm1(h_lam)
        update = -c * eps_cur - c * (eps_s - eps_cur) / (2 * r1)
    elif form == "gradient":
        h = _h(schedule, t_cur, t_next, param)
        h_lam_hat = float(schedule.lam(s)) - lam_cur
        update = h * eps_cur + 0.5 * h * h_lam / h_lam_hat * (eps_s - eps_cur)
    else:
        raise DomainError("form must be 'literal' or 'gradient'")
    return _advance(x, t_cur, t_next, update, schedule, param)


# ----------------------------------------------------------------- multistep

MULTISTEP_VARIANTS = ("plain_kappa", "dpmpp2m", "dpmpp2m_literal", "remulti")


def _current(x, t, oracle, history, reuse):
    """Model value at ``(x, t)``, taken from a pending probe when allowed."""
    p = history.pending
    history.pending = None
    if reuse and p is not None and p.t == t:
        return p.x, p.value
    return x, oracle.evaluate(x, t)


def _remark_zeta(schedule, grid, i, interp):
    s = lambda k: float(schedule.sigma(grid.t(k))) ** 2
    if interp == "explicit":
        return s(i) / (s(i) + s(i + 1))
    return s(i - 1) / (s(i) + s(i - 1))


def _multistep(x, i, grid, schedule, oracle, history, variant, r_strategy=None,
               zeta_policy=None, interp="explicit", reuse=True):
    if variant not in MULTISTEP_VARIANTS:
        raise DomainError(f"variant must be one of {MULTISTEP_VARIANTS}")
    param = _param(oracle)
    t_cur, t_next = _times(grid, i)
    rec = StepRecord(i=i, t=t_cur)
    start = oracle.nfe
    x_at, m_cur = _current(x, t_cur, oracle, history, reuse)
    prev = history.at(grid.t(i + 1)) if i < grid.N else None
    h = _h(schedule, t_cur, t_next, param)

    if prev is None:
        out = _advance(x, t_cur, t_next, h * m_cur, schedule, param)
        rec.flags = ("warmup",)
    elif variant == "dpmpp2m_literal":
        if param is not Parameterization.DATA:
            raise DomainError("the literal DPM-Solver++ form needs a data-prediction oracle")
        r = step_ratio(RStrategy("logsnr"), grid, schedule, i, param=param)
        lam_cur, lam_next = float(schedule.lam(t_cur)), float(schedule.lam(t_next))
        c = float(kappa(schedule, t_next, param)) * np.expm1(-(lam_next - lam_cur))
        update = -c * m_cur - c * (m_cur - prev.value) / (2 * r)
        out = _advance(x, t_cur, t_next, update, schedule, param)
        rec.r = r
    else:
        if variant == "plain_kappa":
            r = _h(schedule, grid.t(i + 1), t_cur, param) / h
            zeta = 1.0
        elif variant == "dpmpp2m":
            r = step_ratio(RStrategy("logsnr"), grid, schedule, i, param=param)
            zeta = 1.0
        else:
            strat = r_strategy or RStrategy()
            ctx = ((m_cur - prev.value) / h, x) if strat.kind == "confidence" else None
            r = step_ratio(strat, grid, schedule, i, context=ctx, param=param)
            zp = "remark" if zeta_policy is None else zeta_policy
            zeta = _remark_zeta(schedule, grid, i, interp) if zp == "remark" else float(zp)
        r_col = np.asarray(r, dtype=float)[..., None] if np.ndim(r) else r
        if np.any(np.abs(np.asarray(r)) < _H_EPS):
            raise DomainError("degenerate step ratio")
        b_bl = (m_cur - prev.value) / (r_col * h)
        if variant == "remulti" and interp == "implicit":
            pred = _advance(x, t_cur, t_next, h * m_cur + 0.5 * h * h * b_bl, schedule, param)
            m_hat = oracle.evaluate(pred, t_next)
            b_bar = (m_hat - m_cur) / h
            rec.predictor_state = pred
            if reuse:
                history.pending = Evaluation(t_next, pred, m_hat)
        else:
            b_bar = b_bl
        out = _advance(x, t_cur, t_next, h * m_cur + 0.5 * h * h * zeta * b_bar, schedule, param)
        rec.r, rec.zeta = r, zeta
    history.push(t_cur, x_at, m_cur)
    rec.nfe_delta = oracle.nfe - start
    return out, rec


def multistep_step(x, i, grid, schedule, oracle, history, variant="dpmpp2m", r_strategy=None,
                   zeta_policy=None, interp="explicit"):
    """One linear-multistep update; the first call (empty history) is a DDIM warm-up."""
    return _multistep(x, i, grid, schedule, oracle, history, variant, r_strategy,
                      zeta_policy, interp)[0]


# ------------------------------------------------------------------- EVODiff

def evodiff_step(x, i, grid, schedule, oracle, history, cfg: EVODiff | None = None):
    """Variance-optimised multistep update. Returns ``(x_next, record)``."""
    cfg = cfg or EVODiff()
    if _param(oracle) is not Parameterization.DATA:
        raise DomainError("EVODiff needs a data-prediction oracle")
    param = Parameterization.DATA
    t_cur, t_next = _times(grid, i)
    rec = StepRecord(i=i, t=t_cur)
    start = oracle.nfe
    x_at, m_cur = _current(x, t_cur, oracle, history, cfg.reuse_probe)
    prev = history.at(grid.t(i + 1)) if i < grid.N else None
    h = _h(schedule, t_cur, t_next, param)
    sig_cur, sig_next = float(schedule.sigma(t_cur)), float(schedule.sigma(t_next))
    g = (sig_next / sig_cur) * x + sig_next * h * m_cur

    if prev is None:
        history.push(t_cur, x_at, m_cur)
        rec.flags = ("warmup",)
        rec.nfe_delta = oracle.nfe - start
        return g, rec

    # backward gradient and predictor
    ctx = ((m_cur - prev.value) / h, x) if cfg.r_strategy.kind == "confidence" else None
    r = step_ratio(cfg.r_strategy, grid, schedule, i, context=ctx, param=param)
    r_col = np.asarray(r, dtype=float)[..., None] if np.ndim(r) else r
    b_bl = (m_cur - prev.value) / (r_col * h)
    x_hat = g + sig_next * (0.5 * h * h) * b_bl

    # probe and forward gradient
    m_hat = oracle.evaluate(x_hat, t_next)
    D = m_hat - m_cur
    b_st = D / h

    # inner products run over the whole state array ("batch") or per sample row
    if cfg.reduction == "batch" and np.ndim(x) > 1:
        rows = np.shape(x)[:-1]
        flat = lambda a: np.reshape(a, (1, -1))
        spread = lambda v: np.broadcast_to(np.asarray(v).reshape(()), rows).copy()
    else:
        flat = spread = lambda a: a

    eta_raw = spread(varopt.eta_star(varopt.EtaInputs(flat(b_st), flat(b_bl)), cfg.eta_formula, masked=True))
    eta_fb = np.isnan(eta_raw)
    eta = np.where(eta_fb, 1.0, varopt.map_eta(np.nan_to_num(eta_raw)))

    # state-difference quantities for zeta
    ratio = sig_cur / sig_next
    x_hat2 = ratio * x_hat - sig_cur * h * m_hat + sig_cur * (0.5 * h * h) * b_st
    P = x_hat2 + ratio * x_hat - 2.0 * x
    zeta_raw = spread(varopt.zeta_star(varopt.ZetaInputs(flat(P), flat(D), flat(m_cur), sig_cur * h),
                                       cfg.zeta_formula, masked=True))
    zeta_fb = np.isnan(zeta_raw)
    scale = None
    if cfg.zeta_map == "scaled":
        scale = sig_cur / float(schedule.sigma(grid.t(i + 1)))
    zeta = np.where(zeta_fb, 1.0, varopt.map_zeta(np.nan_to_num(zeta_raw), cfg.mu, scale))

    e = np.asarray(eta, dtype=float)[..., None]
    z = np.asarray(zeta, dtype=float)[..., None]
    if cfg.corrector == "interpolated":
        blend = (1 - e / 2) * z * b_st + (e / 2) * (1 - z) * b_bl
    else:
        blend = (1 - e / 2) * b_st + (e / 2) * b_bl
    corrected = g + sig_next * (h * h / (2 * z)) * blend
    zfb = zeta_fb[..., None] if np.ndim(zeta_fb) else zeta_fb
    out = np.where(zfb, x_hat, corrected)

    history.push(t_cur, x_at, m_cur)
    if cfg.reuse_probe:
        history.pending = Evaluation(t_next, x_hat, m_hat)
    flags = []
    if np.any(zeta_fb):
        flags.append("zeta")
    if np.any(eta_fb | zeta_fb):
        flags.append("eta")
    eta = np.where(zeta_fb, 1.0, eta)
    rec.zeta, rec.eta, rec.r = zeta, eta, r
    rec.zeta_raw, rec.eta_raw = zeta_raw, eta_raw
    rec.zeta_fallback, rec.eta_fallback = zeta_fb, eta_fb | zeta_fb
    rec.flags = tuple(flags)
    rec.predictor_state, rec.corrected_state = x_hat, out
    rec.nfe_delta = oracle.nfe - start
    return out, rec


# ----------------------------------------------------------------------- run

@dataclass
class RunResult:
    x0: np.ndarray
    records: list[StepRecord]
    nfe: int

    def record_rows(self) -> list[dict]:
        return [r.summary() for r in self.records]


def initial_noise(schedule: NoiseSchedule, grid: TimeGrid, shape, rng: np.random.Generator):
    """``x_T ~ N(0, sigma_T^2 I)`` at the grid's start time."""
    return float(schedule.sigma(grid.t(grid.N))) * rng.standard_normal(shape)


def run(kind: SolverKind, oracle, grid: TimeGrid, schedule: NoiseSchedule, x_T=None,
        seed: int | None = None, *, shape=None, keep_states: bool = False,
        callback: Callable | None = None) -> RunResult:
    """Integrate from ``t_N`` to ``t_0``.

    When ``x_T`` is omitted it is drawn from ``initial_noise`` with ``seed`` and
    ``shape``. ``callback(i, x_before, x_after, record)`` is invoked after every step.
    """
    if x_T is None:
        if shape is None:
            raise ValueError("shape is required when x_T is not given")
        x_T = initial_noise(schedule, grid, shape, np.random.default_rng(seed))
    x = np.array(x_T, dtype=float, copy=True)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite initial state", index=grid.N)
    start = oracle.nfe
    history = EvalHistory() if kind.multistep else None
    records: list[StepRecord] = []

    for i in range(grid.N, 0, -1):
        before_nfe = oracle.nfe
        x_prev = x
        if isinstance(kind, EVODiff):
            x, rec = evodiff_step(x, i, grid, schedule, oracle, history, kind)
        elif isinstance(kind, (PlainKappa, DPMpp2M, REMulti)):
            if isinstance(kind, REMulti):
                x, rec = _multistep(x, i, grid, schedule, oracle, history, "remulti",
                                    kind.r_strategy, kind.zeta, kind.interp)
            else:
                x, rec = _multistep(x, i, grid, schedule, oracle, history, kind.name)
        else:
            if isinstance(kind, DDIM):
                x = ddim_step(x, i, grid, schedule, oracle)
            elif isinstance(kind, FDSingle):
                x = fd_single_step(x, i, grid, schedule, oracle, kind.r)
            elif isinstance(kind, RESingle):
                x = re_single_step(x, i, grid, schedule, oracle, kind.gamma, kind.r, kind.preset)
            elif isinstance(kind, HeunEDM):
                x = heun_edm_step(x, i, grid, schedule, oracle)
            elif isinstance(kind, DPMSolver2S):
                x = dpm_solver_2s_step(x, i, grid, schedule, oracle, kind.r1, kind.form)
            else:
                raise DomainError(f"unsupported solver kind {kind!r}")
            rec = StepRecord(i=i, t=grid.t(i), nfe_delta=oracle.nfe - before_nfe)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state after step i={i}", index=i)
        if not keep_states:
            rec.predictor_state = rec.corrected_state = None
        records.append(rec)
        if callback is not None:
            callback(i, x_prev, x, rec)
    return RunResult(x, records, oracle.nfe - start)
