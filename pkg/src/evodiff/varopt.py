"""Closed-form variance-control parameters and brute-force checks.

Every function reduces over the last axis, so a ``(n, d)`` batch yields one
value per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import DegenerateDirection, DomainError

DEGENERATE_NORM = 1e-12
FORMULAS = ("literal", "analytic")


@dataclass(frozen=True)
class ZetaInputs:
    P: np.ndarray
    D: np.ndarray
    m_t: np.ndarray
    sigma_h: float | np.ndarray

    @property
    def p_tilde(self):
        return np.asarray(self.P) - _col(self.sigma_h) * np.asarray(self.m_t)


@dataclass(frozen=True)
class EtaInputs:
    B1: np.ndarray
    B2: np.ndarray

    @property
    def b_tilde(self):
        return np.asarray(self.B1) - np.asarray(self.B2)


def _col(s):
    s = np.asarray(s, dtype=float)
    return s[..., None] if s.ndim else s


def _dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def _check_formula(formula):
    if formula not in FORMULAS:
        raise DomainError(f"formula must be one of {FORMULAS}")


def degenerate_rows(v) -> np.ndarray:
    return np.linalg.norm(np.asarray(v, dtype=float), axis=-1) < DEGENERATE_NORM


def zeta_star(inp: ZetaInputs, formula: str = "literal", *, masked: bool = False):
    """Projection coefficient of ``P~`` on ``sigma_h D``.

    ``"analytic"`` is the argmin of ``|P~ - sigma_h zeta D|^2``; ``"literal"`` is its
    negation. With ``masked=True`` degenerate rows return NaN instead of raising.
    """
    _check_formula(formula)
    D = np.asarray(inp.D, dtype=float)
    sh = np.asarray(inp.sigma_h, dtype=float)
    if np.any(sh == 0):
        raise DomainError("sigma_h must be nonzero")
    bad = degenerate_rows(D)
    if np.any(bad) and not masked:
        raise DegenerateDirection("|D| below 1e-12")
    dd = np.where(bad, 1.0, _dot(D, D))
    val = _dot(D, inp.p_tilde) / (sh * dd)
    val = np.where(bad, np.nan, val)
    val = -val if formula == "literal" else val
    return float(val) if np.ndim(val) == 0 else val


def eta_star(inp: EtaInputs, formula: str = "analytic", *, masked: bool = False):
    """Blend weight between two gradient estimates.

    ``"analytic"`` minimises ``|(1 - eta) B1 + eta B2|^2`` and equals ``1 - literal``.
    """
    _check_formula(formula)
    bt = inp.b_tilde
    bad = degenerate_rows(bt)
    if np.any(bad) and not masked:
        raise DegenerateDirection("|B1 - B2| below 1e-12")
    bb = np.where(bad, 1.0, _dot(bt, bt))
    if formula == "literal":
        val = -_dot(bt, inp.B2) / bb
    else:
        val = _dot(bt, inp.B1) / bb
    val = np.where(bad, np.nan, val)
    return float(val) if np.ndim(val) == 0 else val


def map_zeta(raw, mu: float = 0.5, sigma_ratio: float | None = None):
    """``Sigmoid(-s (|raw| - mu))`` with ``s`` = 1 or a sigma ratio."""
    if not 0.0 <= mu <= 1.0:
        raise DomainError("mu must lie in [0, 1]")
    s = 1.0 if sigma_ratio is None else float(sigma_ratio)
    out = expit(-s * (np.abs(raw) - mu))
    return float(out) if np.ndim(out) == 0 else out


def map_eta(raw):
    out = expit(np.abs(raw))
    return float(out) if np.ndim(out) == 0 else out


def _quadratic(objective, inputs):
    # coefficients (c0, c1, c2) of the objective as a polynomial in the scalar
    if objective == "zeta":
        a = np.asarray(inputs.p_tilde, dtype=float)
        b = float(inputs.sigma_h) * np.asarray(inputs.D, dtype=float)
        return a @ a, -2.0 * (a @ b), b @ b
    if objective == "eta":
        a = np.asarray(inputs.B1, dtype=float)
        b = np.asarray(inputs.B2, dtype=float) - a
        return a @ a, 2.0 * (a @ b), b @ b
    raise DomainError("objective must be 'zeta' or 'eta'")


def objective_value(objective: str, x, inputs):
    """``|P~ - sigma_h x D|^2`` (zeta) or ``|(1 - x) B1 + x B2|^2`` (eta)."""
    c0, c1, c2 = _quadratic(objective, inputs)
    x = np.asarray(x, dtype=float)
    return c0 + x * (c1 + x * c2)


@dataclass(frozen=True)
class GridSearchResult:
    argmin: float
    flat: bool


def grid_search_min(objective: str, inputs, lo: float = -5.0, hi: float = 5.0,
                    step: float = 1e-4) -> GridSearchResult:
    """Brute-force argmin of the zeta or eta objective over ``lo + k*step``.

    A flat objective returns ``lo`` with ``flat=True``.
    """
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo) or step <= 0:
        raise DomainError("finite range with hi > lo and positive step required")
    c0, c1, c2 = _quadratic(objective, inputs)
    if c1 == 0 and c2 == 0:
        return GridSearchResult(float(lo), True)
    xs = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    vals = c0 + xs * (c1 + xs * c2)
    return GridSearchResult(float(xs[int(np.argmin(vals))]), False)


def random_instances(n: int, d: int, rng: np.random.Generator, bound: float = 4.0):
    """Seeded ``(ZetaInputs, EtaInputs)`` pairs whose true argmins lie in ``[-bound, bound]``.

    Each objective is built as a planted coefficient along a random direction plus
    isotropic noise, so the Rayleigh quotients stay inside the grid-search range.
    """
    if n < 1 or d < 1:
        raise DomainError("n >= 1 and d >= 1 required")
    out = []
    for _ in range(n):
        D = rng.standard_normal(d)
        sigma_h = rng.uniform(0.1, 1.0)
        m_t = rng.standard_normal(d)
        p_tilde = sigma_h * rng.uniform(-bound, bound) * D + 0.5 * _orth(rng.standard_normal(d), D)
        bt = rng.standard_normal(d)
        B1 = rng.uniform(-bound, bound) * bt + 0.5 * _orth(rng.standard_normal(d), bt)
        out.append((ZetaInputs(p_tilde + sigma_h * m_t, D, m_t, sigma_h), EtaInputs(B1, B1 - bt)))
    return out


def _orth(v, u):
    return v - u * (v @ u) / (u @ u)
