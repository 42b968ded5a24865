"""The capped simplex {w : sum(w) = 1, 0 <= w_i <= 1/((1-eps) n)}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUM_TOL = 1e-10
CAP_SLACK = 1e-12


def cap(n: int, eps: float) -> float:
    return 1.0 / ((1.0 - eps) * n)


def _check_eps(eps: float) -> None:
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")


def is_member(w, eps: float, sum_tol: float = SUM_TOL, cap_slack: float = CAP_SLACK) -> bool:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0 or not np.all(np.isfinite(w)):
        return False
    c = cap(w.size, eps)
    return bool(
        abs(w.sum() - 1.0) <= sum_tol and w.min() >= -cap_slack and w.max() <= c + cap_slack
    )


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    eps: float

    def __post_init__(self):
        _check_eps(self.eps)
        w = np.array(self.w, dtype=float).reshape(-1)
        if not is_member(w, self.eps):
            raise ValueError("weights are not in the capped simplex")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def cap(self) -> float:
        return cap(self.n, self.eps)

    def n_small(self) -> int:
        """Number of weights below 1/(2n)."""
        return int(np.count_nonzero(self.w < 0.5 / self.n))


def uniform(n: int, eps: float) -> WeightVector:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return WeightVector(np.full(n, 1.0 / n), eps)


def _clipped_sum(v: np.ndarray, tau: float, c: float) -> float:
    return float(np.clip(v - tau, 0.0, c).sum())


def _project_capped(v: np.ndarray, c: float, max_iter: int, tol: float) -> np.ndarray:
    lo, hi = float(v.min()) - 1.0, float(v.max())
    tau = 0.5 * (lo + hi)
    for _ in range(max_iter):
        tau = 0.5 * (lo + hi)
        s = _clipped_sum(v, tau, c)
        if abs(s - 1.0) <= tol:
            break
        if s > 1.0:
            lo = tau
        else:
            hi = tau
        if hi - lo <= 0.0:
            break

    z = v - tau
    free = (z > 0.0) & (z < c)
    if free.any():
        n_cap = np.count_nonzero(z >= c)
        exact = (v[free].sum() + n_cap * c - 1.0) / np.count_nonzero(free)
        z_exact = v - exact
        # keep the polished tau only if it leaves the clip pattern intact
        if np.array_equal((z_exact > 0.0) & (z_exact < c), free) and np.count_nonzero(z_exact >= c) == n_cap:
            tau = exact
    return np.clip(v - tau, 0.0, c)


def project(v, eps: float, max_iter: int = 200, tol: float = 1e-12) -> WeightVector:
    """Euclidean projection of ``v`` onto the capped simplex.

    The minimiser has the form ``clip(v - tau, 0, cap)``; ``tau`` is found by
    bisection on ``[min(v) - 1, max(v)]`` and then recomputed exactly from the
    free coordinates so the sum constraint holds to rounding.
    """
    _check_eps(eps)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("v must be a non-empty finite vector")
    return WeightVector(_project_capped(v, cap(v.size, eps), max_iter, tol), eps)


def project_on_support(v, eps: float, support, max_iter: int = 200, tol: float = 1e-12) -> WeightVector:
    """Euclidean projection onto the face of the capped simplex with ``w_i = 0`` off ``support``.

    ``support`` must hold at least ``1 / cap`` indices, otherwise the face is
    empty and ``ValueError`` is raised.
    """
    _check_eps(eps)
    v = np.asarray(v, dtype=float).reshape(-1)
    support = np.asarray(support, dtype=bool).reshape(-1)
    if support.shape != v.shape:
        raise ValueError("support mask must match v")
    c = cap(v.size, eps)
    if np.count_nonzero(support) * c < 1.0 - SUM_TOL:
        raise ValueError("support too small for the capped simplex")
    w = np.zeros_like(v)
    w[support] = _project_capped(v[support], c, max_iter, tol)
    return WeightVector(w, eps)


def kkt_residual(w, v, eps: float) -> float:
    """How far ``w`` is from satisfying ``w = clip(v - tau, 0, cap)`` with sum 1.

    ``tau`` is estimated from the free coordinates (or bracketed from the
    bound ones when none are free).
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    c = cap(w.size, eps)
    free = (w > CAP_SLACK) & (w < c - CAP_SLACK)
    if free.any():
        tau = float(np.mean(v[free] - w[free]))
    else:
        at_cap = w >= c - CAP_SLACK
        # zeros need tau >= v_i, capped entries need tau <= v_i - cap
        lower = float(np.max(v[~at_cap])) if (~at_cap).any() else -np.inf
        upper = float(np.min(v[at_cap] - c)) if at_cap.any() else np.inf
        if lower <= upper:
            tau = lower if np.isfinite(lower) else upper
        else:
            tau = 0.5 * (lower + upper)
    return float(max(np.max(np.abs(np.clip(v - tau, 0.0, c) - w)), abs(w.sum() - 1.0)))
