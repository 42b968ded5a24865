"""Oracle-side evaluation: error metrics, rate bundles and the four score-sum conditions.

The conditions are evaluated along the segment ``beta_eta = beta* + eta (beta_hat - beta*)``
using the clean covariates ``x_i`` (for ``r_i``) and the observed ``X_i``
(for ``R_i``).  Every sum carries the prefactor ``L w_i`` with ``L = lambda_o sqrt(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import OracleInstance
from .huber import EstimationResult, huber_score
from .robust_weights import RobustWeightResult

DEFAULT_ETA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))


@dataclass(frozen=True)
class RateBundle:
    r_o: float
    r_d: float
    r_d_prime: float
    sqrt_eps: float


def rates(n: int, d: int, eps: float) -> RateBundle:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    r_o = 0.0 if eps == 0.0 else eps * math.sqrt(math.log(1.0 / eps))
    return RateBundle(
        r_o=r_o,
        r_d=math.sqrt(d * math.log(d) / n),
        r_d_prime=math.sqrt(d / n),
        sqrt_eps=math.sqrt(eps),
    )


def error_metrics(result: EstimationResult, oracle: OracleInstance) -> dict:
    delta = np.asarray(result.beta_hat, dtype=float) - oracle.beta_star
    clean = oracle.clean_idx
    pred = oracle.x_clean[clean] @ delta
    if result.robust is not None:
        mu_hat = result.robust.mu_w
    elif result.mu_w_used is not None:
        mu_hat = result.mu_w_used
    else:
        mu_hat = None
    return {
        "l2_error": float(np.linalg.norm(delta)),
        "prediction_rmse_clean": float(np.sqrt(np.mean(pred ** 2))) if clean.size else math.nan,
        "mu_error": math.nan if mu_hat is None else float(np.linalg.norm(np.asarray(mu_hat) - oracle.mu)),
    }


@dataclass(frozen=True)
class ConditionReport:
    eta_grid: np.ndarray
    delta_norm: np.ndarray
    lhs1: np.ndarray
    lhs2: np.ndarray
    lhs3: np.ndarray
    lhs4: np.ndarray
    c1: float
    c2: float
    c3: float
    c4: float
    r0_bound: float

    def ratio1(self) -> np.ndarray:
        return _safe_div(self.lhs1, self.delta_norm)

    def ratio4(self) -> np.ndarray:
        return _safe_div(self.lhs4, self.delta_norm ** 2)

    def to_dict(self) -> dict:
        return {
            "eta_grid": self.eta_grid.tolist(),
            "delta_norm": self.delta_norm.tolist(),
            "lhs1": self.lhs1.tolist(),
            "lhs2": self.lhs2.tolist(),
            "lhs3": self.lhs3.tolist(),
            "lhs4": self.lhs4.tolist(),
            "c_candidates": {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c4": self.c4},
            "r0_bound": self.r0_bound,
        }


def _safe_div(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    out = np.full(a.shape, np.nan)
    ok = b > 0
    out[ok] = a[ok] / b[ok]
    return out


class _Terms:
    """Shared pieces of the condition sums for one (oracle, weights, L)."""

    def __init__(self, oracle: OracleInstance, rw: RobustWeightResult, lambda_scaled: float):
        if not lambda_scaled > 0:
            raise ValueError(f"lambda_scaled must be positive, got {lambda_scaled}")
        ds = oracle.dataset
        self.n = ds.n
        self.L = float(lambda_scaled)
        self.w = rw.w.w
        mu = np.asarray(rw.mu_w, dtype=float)
        self.y = ds.y
        self.xc = oracle.x_clean - mu
        self.Xc = ds.X - mu
        self.xi = oracle.xi
        self.beta_star = oracle.beta_star
        self.out = np.zeros(self.n, dtype=bool)
        self.out[oracle.outlier_idx] = True
        self.pref = self.L * self.w

    def r(self, v) -> np.ndarray:
        return (self.y - self.n * self.w * (self.xc @ v)) / self.L

    def R(self, v) -> np.ndarray:
        return (self.y - self.n * self.w * (self.Xc @ v)) / self.L


def check_conditions(
    oracle: OracleInstance,
    rw: RobustWeightResult,
    beta_hat,
    lambda_scaled: float,
    eta_grid: Sequence[float] = DEFAULT_ETA_GRID,
    c2: Optional[float] = None,
) -> ConditionReport:
    """Evaluate the four score-sum conditions along the path to ``beta_hat``.

    c1 is the largest of lhs1..lhs3 over ||delta||, c2 the smallest
    lhs4 / ||delta||^2 (unless given), c3 the largest shortfall
    (c2 ||delta||^2 - lhs4)_+ / ||delta||, and c4 = 0.
    """
    eta_grid = np.asarray(list(eta_grid), dtype=float)
    if eta_grid.size == 0:
        raise ValueError("eta grid is empty")
    t = _Terms(oracle, rw, lambda_scaled)
    full = np.asarray(beta_hat, dtype=float) - t.beta_star
    h_xi = huber_score(t.xi / t.L)
    h_r_star = huber_score(t.r(t.beta_star))
    o = t.out

    lhs = np.zeros((4, eta_grid.size))
    dn = np.zeros(eta_grid.size)
    for k, eta in enumerate(eta_grid):
        delta = eta * full
        beta_eta = t.beta_star + delta
        dn[k] = np.linalg.norm(delta)
        xd = t.xc @ delta
        Xd = t.Xc @ delta
        h_r = huber_score(t.r(beta_eta))
        h_R = huber_score(t.R(beta_eta))
        lhs[0, k] = abs(np.sum(t.pref * h_xi * xd))
        lhs[1, k] = abs(np.sum((t.pref * h_r * xd)[o]))
        lhs[2, k] = abs(np.sum((t.pref * h_R * Xd)[o]))
        lhs[3, k] = np.sum(t.pref * (-h_r + h_r_star) * xd)

    pos = dn > 0
    if pos.any():
        c1 = float(np.max(lhs[:3, pos] / dn[pos]))
        c2_fit = float(np.min(lhs[3, pos] / dn[pos] ** 2))
        c2_val = c2_fit if c2 is None else float(c2)
        c3 = float(np.max(np.maximum(c2_val * dn[pos] ** 2 - lhs[3, pos], 0.0) / dn[pos]))
    else:
        c1, c2_val, c3 = 0.0, math.nan if c2 is None else float(c2), 0.0
    c4 = 0.0
    r0 = (3 * c1 + c3 + math.sqrt(max(c2_val * c4, 0.0))) / c2_val if c2_val > 0 else math.inf
    return ConditionReport(
        eta_grid=eta_grid,
        delta_norm=dn,
        lhs1=lhs[0],
        lhs2=lhs[1],
        lhs3=lhs[2],
        lhs4=lhs[3],
        c1=c1,
        c2=c2_val,
        c3=c3,
        c4=c4,
        r0_bound=r0,
    )


def split_identity(oracle: OracleInstance, rw: RobustWeightResult, beta_eta, lambda_scaled: float):
    """The observed-data monotone sum computed directly and via its clean/outlier split.

    Returns ``(direct, reassembled)`` where ``direct`` is
    ``sum_i L w_i (h(R_i(beta*)) - h(R_i(beta_eta))) (X_i - mu_w) . delta`` and
    ``reassembled`` is the clean-covariate sum over all rows plus the
    observed-minus-clean correction over the outlier rows.  On clean rows
    ``r_i = R_i`` and ``x_i = X_i``, so the two agree exactly.
    """
    t = _Terms(oracle, rw, lambda_scaled)
    beta_eta = np.asarray(beta_eta, dtype=float)
    delta = beta_eta - t.beta_star
    xd, Xd = t.xc @ delta, t.Xc @ delta
    dR = -huber_score(t.R(beta_eta)) + huber_score(t.R(t.beta_star))
    dr = -huber_score(t.r(beta_eta)) + huber_score(t.r(t.beta_star))
    direct = float(np.sum(t.pref * dR * Xd))
    o = t.out
    reassembled = float(
        np.sum(t.pref * dr * xd) + np.sum((t.pref * dR * Xd)[o]) - np.sum((t.pref * dr * xd)[o])
    )
    return direct, reassembled
