"""Robust weights on the capped simplex by spectral filtering.

Starting from uniform weights and the coordinate-wise median as center, each
outer iteration computes the top eigenpair of the weighted second moment.  If
the top eigenvalue is under the mode's threshold the weights are returned as
certified; otherwise points with a large squared projection on the top
eigenvector are downweighted and the center moves to the weighted mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import EPS_LIMIT, Dataset, n_outliers
from .simplex import WeightVector, cap, project, project_on_support, uniform
from .spectral import coordwise_median, dual_objective, top_eigenpair, weighted_second_moment

MODES = ("identity_cov", "bounded_cov")
DEFAULT_C_TERM = {"identity_cov": 2.0, "bounded_cov": 9.0}


def eps_log_inv_eps(eps: float) -> float:
    return 0.0 if eps <= 0.0 else eps * math.log(1.0 / eps)


def robust_scale_sq(X) -> float:
    """max_j (1.4826 * MAD_j)^2, a plug-in for the covariance cap sigma_c^2."""
    X = np.asarray(X, dtype=float)
    mad = np.median(np.abs(X - np.median(X, axis=0)), axis=0)
    return float(np.max((1.4826 * mad) ** 2))


@dataclass(frozen=True)
class RobustWeightConfig:
    eps: float = 0.0
    mode: str = "identity_cov"
    c_term: Optional[float] = None
    sigma_c_sq: Optional[float] = None
    max_outer: Optional[int] = None
    filter_rounds_per_outer: int = 5
    power_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eps < EPS_LIMIT:
            raise ValueError(f"eps must lie in [0, 1/3), got {self.eps}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.c_term is not None and not self.c_term > 0:
            raise ValueError(f"c_term must be positive, got {self.c_term}")
        if self.sigma_c_sq is not None and not self.sigma_c_sq > 0:
            raise ValueError(f"sigma_c_sq must be positive, got {self.sigma_c_sq}")
        if self.max_outer is not None and self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.filter_rounds_per_outer < 1:
            raise ValueError("filter_rounds_per_outer must be >= 1")

    @property
    def c(self) -> float:
        return DEFAULT_C_TERM[self.mode] if self.c_term is None else self.c_term

    def outer_budget(self, d: int) -> int:
        if self.max_outer is not None:
            return self.max_outer
        return 4 * math.ceil(math.log2(d + 1)) + 8

    def threshold(self, ds: Dataset) -> float:
        if self.mode == "identity_cov":
            return 1.0 + self.c * (eps_log_inv_eps(self.eps) + math.sqrt(ds.d / ds.n))
        sigma_c_sq = self.sigma_c_sq if self.sigma_c_sq is not None else robust_scale_sq(ds.X)
        return self.c * sigma_c_sq


@dataclass(frozen=True)
class RobustWeightResult:
    w: WeightVector
    mu_w: np.ndarray
    nu_final: np.ndarray
    lambda_max: float
    dual_cert: float
    outer_iters: int
    terminated_by: str
    threshold: float = math.nan
    lambda_history: tuple = field(default=())

    def __post_init__(self):
        w = self.w
        o = n_outliers(w.eps, w.n)
        if w.n_small() > 2 * o:
            raise ValueError(f"{w.n_small()} weights below 1/(2n) but at most {2 * o} allowed")
        if self.terminated_by not in ("certificate", "budget"):
            raise ValueError(f"unknown termination {self.terminated_by!r}")

    def to_dict(self) -> dict:
        return {
            "w": self.w.w.tolist(),
            "mu_w": np.asarray(self.mu_w).tolist(),
            "lambda_max": self.lambda_max,
            "dual_cert": self.dual_cert,
            "outer_iters": self.outer_iters,
            "terminated_by": self.terminated_by,
        }


def _scores(ds: Dataset, nu, v) -> np.ndarray:
    return ((ds.X - nu) @ v) ** 2


def filter_update(ds: Dataset, w: WeightVector, nu, v, eps: float) -> WeightVector:
    """One multiplicative filtering round along ``v``.

    ``w_i <- w_i (1 - s_i / s_max)`` with ``s_i = ((X_i - nu) . v)^2`` and
    ``s_max`` taken over the points that still carry weight, then renormalised
    and projected back onto the capped simplex.  Points that reach zero stay
    at zero unless the survivors cannot hold unit mass under the cap; in that
    case the lowest-score removed points are readmitted first.
    """
    nu = np.asarray(nu, dtype=float)
    s = _scores(ds, nu, np.asarray(v, dtype=float))
    active = w.w > 0
    s_max = float(s[active].max())
    if s_max <= 0.0:
        return w
    raw = w.w * (1.0 - s / s_max)
    raw[~active] = 0.0
    total = raw.sum()
    if total <= 0.0:
        return w
    raw /= total

    support = raw > 0
    c = cap(ds.n, eps)
    need = math.ceil(1.0 / c - 1e-9)
    missing = need - int(np.count_nonzero(support))
    if missing > 0:
        dropped = np.flatnonzero(~support)
        support[dropped[np.argsort(s[dropped], kind="stable")[:missing]]] = True
    try:
        return project_on_support(raw, eps, support)
    except ValueError:
        return project(raw, eps)


def _state(ds: Dataset, w: WeightVector, nu, cfg: RobustWeightConfig):
    pair = top_eigenpair(weighted_second_moment(ds, w, nu), tol=cfg.power_tol, seed=cfg.seed)
    return pair.value, pair.vector


def robust_weights(ds: Dataset, cfg: RobustWeightConfig) -> RobustWeightResult:
    if ds.n < 1:
        raise ValueError("empty dataset")
    eps = cfg.eps
    thr = cfg.threshold(ds)
    budget = cfg.outer_budget(ds.d)

    w = uniform(ds.n, eps)
    nu = coordwise_median(ds.X)
    history = []
    best = None

    def finish(w, nu, lam, v, iters, how):
        return RobustWeightResult(
            w=w,
            mu_w=w.w @ ds.X,
            nu_final=np.asarray(nu, dtype=float),
            lambda_max=float(lam),
            dual_cert=dual_objective(ds, nu, v, eps),
            outer_iters=iters,
            terminated_by=how,
            threshold=thr,
            lambda_history=tuple(history),
        )

    for it in range(1, budget + 1):
        lam, v = _state(ds, w, nu, cfg)
        history.append(lam)
        if best is None or lam < best[2]:
            best = (w, nu, lam, v, it)
        if lam <= thr:
            return finish(w, nu, lam, v, it, "certificate")
        for r in range(cfg.filter_rounds_per_outer):
            if r > 0:
                lam_r, v = _state(ds, w, nu, cfg)
                if lam_r <= thr:
                    break
            w_next = filter_update(ds, w, nu, v, eps)
            if w_next is w:
                break
            w = w_next
        nu = w.w @ ds.X

    # the last recentred state has not been checked yet
    lam, v = _state(ds, w, nu, cfg)
    history.append(lam)
    if lam <= thr:
        return finish(w, nu, lam, v, budget, "certificate")
    if lam < best[2]:
        best = (w, nu, lam, v, budget)
    bw, bnu, blam, bv, _ = best
    return finish(bw, bnu, blam, bv, budget, "budget")


def certificate(ds: Dataset, result: RobustWeightResult, cfg: RobustWeightConfig) -> dict:
    """Recompute lambda_max at the returned (w, nu) and compare to the threshold."""
    pair = top_eigenpair(weighted_second_moment(ds, result.w, result.nu_final), tol=cfg.power_tol, seed=cfg.seed)
    thr = cfg.threshold(ds)
    return {
        "lambda_max": pair.value,
        "threshold": thr,
        "pass": bool(pair.value <= thr),
        "dual_cert": dual_objective(ds, result.nu_final, pair.vector, cfg.eps),
    }
