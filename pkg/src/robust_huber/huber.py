"""Weighted Huber regression, its joint (theta, beta) form, and baselines.

With weights ``w``, weighted mean ``mu_w = sum_i w_i X_i`` and threshold
``L = lambda_o * sqrt(n)`` (``lambda_scaled`` below), the fitted design rows
are ``A_i = n w_i (X_i - mu_w)`` and the objective is

    F(beta) = (L^2 / n) * sum_i H((y_i - A_i . beta) / L)

which equals ``sum_i lambda_o^2 H(R_i(beta))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dataset import Dataset, n_outliers
from .robust_weights import RobustWeightConfig, RobustWeightResult, certificate, robust_weights
from .simplex import WeightVector, uniform

SOLVERS = ("backtracking_gd", "lbfgs_like_quasi_newton")
ARMIJO_C = 1e-4
SHRINK = 0.5


def huber_loss(t):
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    out = np.where(a <= 1.0, 0.5 * t * t, a - 0.5)
    return out if out.ndim else float(out)


def huber_score(t):
    out = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class HuberConfig:
    lambda_scaled: Optional[float] = None
    grad_tol: float = 1e-10
    max_iter: int = 20_000
    step: str = "backtracking_gd"
    beta0: Optional[tuple] = None

    def __post_init__(self):
        if self.lambda_scaled is not None and not self.lambda_scaled > 0:
            raise ValueError(f"lambda_scaled must be positive, got {self.lambda_scaled}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.step not in SOLVERS:
            raise ValueError(f"step must be one of {SOLVERS}, got {self.step!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class EstimationResult:
    beta_hat: np.ndarray
    objective: float
    grad_norm: float
    iters: int
    converged: bool
    lambda_scaled: float = math.nan
    weights_used: Optional[WeightVector] = None
    mu_w_used: Optional[np.ndarray] = None
    theta_hat: Optional[np.ndarray] = None
    robust: Optional[RobustWeightResult] = None
    certificate: Optional[dict] = None

    @property
    def ok(self) -> bool:
        """Solver converged and, if a weight stage ran, it ended on its certificate."""
        return self.converged and (self.robust is None or self.robust.terminated_by == "certificate")

    def to_dict(self) -> dict:
        out = {
            "beta_hat": np.asarray(self.beta_hat).tolist(),
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "iters": self.iters,
            "converged": self.converged,
            "lambda_scaled": self.lambda_scaled,
        }
        if self.certificate is not None:
            out["certificate"] = dict(self.certificate)
        if self.robust is not None:
            out["terminated_by"] = self.robust.terminated_by
            out["mu_w"] = np.asarray(self.robust.mu_w).tolist()
        return out


def weighted_design(ds: Dataset, w, mu_w) -> np.ndarray:
    """Rows ``n w_i (X_i - mu_w)``."""
    w = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    return (ds.n * w)[:, None] * (ds.X - np.asarray(mu_w, dtype=float))


def residual_R(ds: Dataset, w, mu_w, beta, lambda_scaled: float) -> np.ndarray:
    A = weighted_design(ds, w, mu_w)
    return (ds.y - A @ np.asarray(beta, dtype=float)) / lambda_scaled


class HuberObjective:
    """F and its gradient for a fixed design ``A`` and threshold ``L``."""

    def __init__(self, y: np.ndarray, A: np.ndarray, lambda_scaled: float):
        self.y = y
        self.A = A
        self.L = float(lambda_scaled)
        self.n = y.shape[0]

    def value(self, beta) -> float:
        R = (self.y - self.A @ beta) / self.L
        return float(self.L ** 2 / self.n * huber_loss(R).sum())

    def grad(self, beta) -> np.ndarray:
        R = (self.y - self.A @ beta) / self.L
        return -(self.L / self.n) * (self.A.T @ huber_score(R))

    def value_grad(self, beta):
        R = (self.y - self.A @ beta) / self.L
        f = float(self.L ** 2 / self.n * huber_loss(R).sum())
        g = -(self.L / self.n) * (self.A.T @ huber_score(R))
        return f, g

    def lipschitz(self) -> float:
        """Upper bound on the gradient's Lipschitz constant, lambda_max(A^T A) / n."""
        return float(np.linalg.eigvalsh(self.A.T @ self.A / self.n)[-1])


def _gd(obj: HuberObjective, beta: np.ndarray, cfg: HuberConfig):
    lip = obj.lipschitz()
    if lip <= 0.0:
        f, g = obj.value_grad(beta)
        return beta, f, g, 0, True
    base_step = 1.0 / lip
    f, g = obj.value_grad(beta)
    prev = None
    it = 0
    while it < cfg.max_iter:
        gn = float(np.linalg.norm(g))
        if gn <= cfg.grad_tol * (1.0 + abs(f)):
            return beta, f, g, it, True
        it += 1
        t = base_step
        if prev is not None:
            s, yv = beta - prev[0], g - prev[1]
            sy = float(s @ yv)
            if sy > 0.0:
                t = float(s @ s) / sy
        # Armijo backtracking; any t <= 1/lip is accepted, so this terminates
        while True:
            cand = beta - t * g
            fc = obj.value(cand)
            if fc <= f - ARMIJO_C * t * gn * gn or t <= base_step:
                break
            t *= SHRINK
        prev = (beta, g)
        beta = cand
        f, g = obj.value_grad(beta)
    gn = float(np.linalg.norm(g))
    return beta, f, g, it, gn <= cfg.grad_tol * (1.0 + abs(f))


def _lbfgs(obj: HuberObjective, beta: np.ndarray, cfg: HuberConfig):
    from scipy.optimize import minimize

    res = minimize(
        obj.value_grad,
        beta,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_iter, "gtol": 0.0, "ftol": 0.0, "maxcor": 20},
    )
    beta = np.asarray(res.x, dtype=float)
    f, g = obj.value_grad(beta)
    used = int(res.nit)
    if np.linalg.norm(g) > cfg.grad_tol * (1.0 + abs(f)) and used < cfg.max_iter:
        # L-BFGS stalls on the kinks of H; finish with gradient steps
        beta, f, g, extra, _ = _gd(obj, beta, replace(cfg, max_iter=cfg.max_iter - used))
        used += extra
    return beta, f, g, used, bool(np.linalg.norm(g) <= cfg.grad_tol * (1.0 + abs(f)))


def default_lambda_scaled(ds: Dataset, w, mu_w, eps: float, max_steps: int = 20) -> float:
    """1.345 * 1.4826 * median |residual| of a trimmed least-squares pass.

    Least squares of ``y`` on ``A`` is refit on the ``n - ceil(eps n)`` rows with
    the smallest absolute residual until that row set stops changing (at most
    ``max_steps`` refits); the median runs over the kept rows.  Falls back to
    a unit scale when the residuals vanish.
    """
    A = weighted_design(ds, w, mu_w)
    y = ds.y
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    r = y - A @ beta
    o = n_outliers(eps, ds.n)
    if o > 0:
        keep = None
        for _ in range(max_steps):
            new_keep = np.sort(np.argsort(np.abs(r), kind="stable")[: ds.n - o])
            if keep is not None and np.array_equal(new_keep, keep):
                break
            keep = new_keep
            beta = np.linalg.lstsq(A[keep], y[keep], rcond=None)[0]
            r = y - A @ beta
        r = r[keep]
    scale = 1.4826 * float(np.median(np.abs(r)))
    if scale <= 1e-12 * (1.0 + float(np.max(np.abs(y)))):
        scale = 1.0
    return 1.345 * scale


def _fit(ds: Dataset, w: WeightVector, mu_w, cfg: HuberConfig) -> EstimationResult:
    mu_w = np.asarray(mu_w, dtype=float)
    L = cfg.lambda_scaled if cfg.lambda_scaled is not None else default_lambda_scaled(ds, w, mu_w, w.eps)
    obj = HuberObjective(ds.y, weighted_design(ds, w, mu_w), L)
    beta0 = np.zeros(ds.d) if cfg.beta0 is None else np.asarray(cfg.beta0, dtype=float).copy()
    solver = _gd if cfg.step == "backtracking_gd" else _lbfgs
    beta, f, g, iters, ok = solver(obj, beta0, cfg)
    return EstimationResult(
        beta_hat=beta,
        objective=f,
        grad_norm=float(np.linalg.norm(g)),
        iters=iters,
        converged=ok,
        lambda_scaled=L,
        weights_used=w,
        mu_w_used=mu_w,
    )


def weighted_huber_fit(ds: Dataset, rw, cfg: HuberConfig = HuberConfig()) -> EstimationResult:
    """Minimise F for the weights (and weighted mean) of ``rw``.

    ``rw`` is a :class:`RobustWeightResult` or a :class:`WeightVector`; in the
    latter case the weighted mean is computed from it.
    """
    if isinstance(rw, RobustWeightResult):
        out = _fit(ds, rw.w, rw.mu_w, cfg)
        return replace(out, robust=rw)
    return _fit(ds, rw, rw.w @ ds.X, cfg)


def soft_threshold(e, t: float) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    return np.sign(e) * np.maximum(np.abs(e) - t, 0.0)


def joint_fit(ds: Dataset, rw, cfg: HuberConfig = HuberConfig()) -> EstimationResult:
    """Alternating minimisation of the l1-penalised joint least-squares program.

    theta-step: ``sqrt(n) theta_i = soft_threshold(y_i - A_i . beta, L)``;
    beta-step: least squares of ``y - sqrt(n) theta`` on ``A``.  After the
    theta-step the beta-gradient of the joint objective is exactly the Huber
    gradient, which is what the stopping rule measures.
    """
    if isinstance(rw, RobustWeightResult):
        w, mu_w = rw.w, rw.mu_w
    else:
        w, mu_w = rw, rw.w @ ds.X
    L = cfg.lambda_scaled if cfg.lambda_scaled is not None else default_lambda_scaled(ds, w, mu_w, w.eps)
    A = weighted_design(ds, w, mu_w)
    obj = HuberObjective(ds.y, A, L)
    pinv = np.linalg.pinv(A)
    beta = np.zeros(ds.d) if cfg.beta0 is None else np.asarray(cfg.beta0, dtype=float).copy()
    converged = False
    it = 0
    f, g = obj.value_grad(beta)
    while it < cfg.max_iter:
        if np.linalg.norm(g) <= cfg.grad_tol * (1.0 + abs(f)):
            converged = True
            break
        it += 1
        u = soft_threshold(ds.y - A @ beta, L)
        beta = pinv @ (ds.y - u)
        f, g = obj.value_grad(beta)
    else:
        converged = bool(np.linalg.norm(g) <= cfg.grad_tol * (1.0 + abs(f)))
    theta = soft_threshold(ds.y - A @ beta, L) / math.sqrt(ds.n)
    return EstimationResult(
        beta_hat=beta,
        objective=f,
        grad_norm=float(np.linalg.norm(g)),
        iters=it,
        converged=converged,
        lambda_scaled=L,
        weights_used=w,
        mu_w_used=np.asarray(mu_w, dtype=float),
        theta_hat=theta,
        robust=rw if isinstance(rw, RobustWeightResult) else None,
    )


def joint_objective(ds: Dataset, w, mu_w, beta, theta, lambda_scaled: float) -> float:
    """sum_i (1/2n) (y_i - A_i . beta - sqrt(n) theta_i)^2 + lambda_o ||theta||_1."""
    n = ds.n
    A = weighted_design(ds, w, mu_w)
    r = ds.y - A @ np.asarray(beta, dtype=float) - math.sqrt(n) * np.asarray(theta, dtype=float)
    return float((r @ r) / (2 * n) + lambda_scaled / math.sqrt(n) * np.abs(theta).sum())


def two_step_estimate(
    ds: Dataset,
    eps: float,
    rw_cfg: Optional[RobustWeightConfig] = None,
    huber_cfg: Optional[HuberConfig] = None,
) -> EstimationResult:
    """Robust weights followed by weighted Huber regression."""
    rw_cfg = RobustWeightConfig(eps=eps) if rw_cfg is None else replace(rw_cfg, eps=eps)
    huber_cfg = HuberConfig() if huber_cfg is None else huber_cfg
    rw = robust_weights(ds, rw_cfg)
    out = weighted_huber_fit(ds, rw, huber_cfg)
    return replace(out, certificate=certificate(ds, rw, rw_cfg))


def ols_fit(ds: Dataset) -> EstimationResult:
    """Least squares through the origin; adds 1e-10 ridge jitter when X is rank deficient."""
    X, y = ds.X, ds.y
    G = X.T @ X
    if np.linalg.matrix_rank(G) < ds.d:
        G = G + 1e-10 * np.eye(ds.d)
    beta = np.linalg.solve(G, X.T @ y)
    r = y - X @ beta
    g = -(X.T @ r) / ds.n
    return EstimationResult(
        beta_hat=beta,
        objective=float(r @ r / (2 * ds.n)),
        grad_norm=float(np.linalg.norm(g)),
        iters=1,
        converged=True,
    )


def plain_huber_fit(ds: Dataset, cfg: HuberConfig = HuberConfig()) -> EstimationResult:
    """Huber regression with uniform weights, centred at the sample mean."""
    return weighted_huber_fit(ds, uniform(ds.n, 0.0), cfg)
