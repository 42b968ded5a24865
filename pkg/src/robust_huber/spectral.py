"""Weighted second moments, top eigenpairs and coordinate-wise medians."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .dataset import Dataset
from .simplex import WeightVector


@dataclass(frozen=True)
class SecondMoment:
    """M = sum_i w_i (X_i - center)(X_i - center)^T."""

    M: np.ndarray
    center: np.ndarray


class EigenPair(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool
    iters: int


def coordwise_median(X) -> np.ndarray:
    """Column medians; for even n the lower median (sorted index (n-1)//2)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = X.shape[0]
    if n < 1:
        raise ValueError("need at least one row")
    return np.sort(X, axis=0)[(n - 1) // 2].copy()


def _weights(w) -> np.ndarray:
    return w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def weighted_second_moment(ds: Dataset, w, nu) -> SecondMoment:
    w = _weights(w)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if w.shape[0] != ds.n or nu.shape[0] != ds.d:
        raise ValueError("dimension mismatch between data, weights and center")
    Z = ds.X - nu
    M = (Z * w[:, None]).T @ Z
    return SecondMoment(M=0.5 * (M + M.T), center=nu)


def _matrix(M) -> np.ndarray:
    return M.M if isinstance(M, SecondMoment) else np.asarray(M, dtype=float)


def top_eigenpair(M, tol: float = 1e-10, max_iter: int = 10_000, seed: Optional[int] = 0) -> EigenPair:
    """Largest eigenpair of a symmetric PSD matrix by power iteration.

    Stops once ``||M v - lam v|| <= tol * max(lam, 1)``.  If the iterate
    stops moving (relative change below 1e-14) before that, the iteration is
    restarted once from a fresh random vector; the best iterate is returned
    with ``converged=False`` when the budget runs out.
    """
    A = _matrix(M)
    d = A.shape[0]
    if d == 1:
        return EigenPair(float(A[0, 0]), np.ones(1), True, 0)
    rng = np.random.default_rng(seed)
    best = None
    iters = 0
    for _attempt in range(2):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        while iters < max_iter:
            iters += 1
            Av = A @ v
            lam = float(v @ Av)
            resid = float(np.linalg.norm(Av - lam * v))
            if best is None or resid < best[2]:
                best = (lam, v.copy(), resid)
            if resid <= tol * max(lam, 1.0):
                return EigenPair(lam, v, True, iters)
            norm = np.linalg.norm(Av)
            if norm == 0.0:
                # v lies in the null space; any unit vector is an eigenvector of the zero matrix
                if not A.any():
                    return EigenPair(0.0, v, True, iters)
                break
            v_new = Av / norm
            stalled = np.linalg.norm(v_new - v) <= 1e-14
            v = v_new
            if stalled:
                break
    lam, v, _ = best
    return EigenPair(lam, v, False, iters)


def dual_objective(ds: Dataset, nu, v, eps: float) -> float:
    """Average of the smallest floor((1-eps) n) scores ((X_i - nu) . v)^2.

    With M = v v^T this is a feasible point of the dual program, hence a lower
    bound on lambda_max of any weighted second moment centred at ``nu``.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("v must be a unit vector")
    scores = np.sort(((ds.X - np.asarray(nu, dtype=float)) @ v) ** 2)
    k = max(int(math.floor((1.0 - eps) * ds.n + 1e-9)), 1)
    return float(scores[:k].mean())
