"""Synthetic regression data under strong contamination, plus CSV ingestion.

The observed model is ``y_i = X_i @ beta + xi_i + sqrt(n) * theta_i`` where
``X_i = x_i + rho_i`` and ``rho_i = 0, theta_i = 0`` on clean rows.  Every
:class:`OracleInstance` keeps the clean covariates, the noise and the
per-row shifts so that the identity can be checked after the fact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

DESIGNS = ("gaussian_identity", "rademacher", "uniform_scaled", "student_t", "gaussian_cov")
NOISES = ("gaussian", "student_t", "laplace")
ATTACKS = ("none", "point_cluster", "leverage", "response_only", "mean_shift")

EPS_LIMIT = 1.0 / 3.0


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observed responses ``y`` (length n) and covariates ``X`` (n x d)."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = _frozen(self.y).reshape(-1)
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if y.shape[0] < 2:
            raise ValueError("need at least 2 samples")
        if X.shape[1] < 1:
            raise ValueError("need at least 1 covariate")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("dataset contains NaN or Inf")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GeneratorSpec:
    """Distribution of the clean covariates and noise.

    ``design`` is one of :data:`DESIGNS`; all designs except ``gaussian_cov``
    have identity covariance (student_t and uniform are rescaled to unit
    variance).  ``df`` parameterises the student_t design, ``cov`` the
    gaussian_cov design.  ``noise`` is one of :data:`NOISES` with scale
    ``noise_scale`` (and ``noise_df`` for student_t noise).
    """

    design: str = "gaussian_identity"
    mu: Optional[Sequence[float]] = None
    df: float = 5.0
    cov: Optional[Sequence[Sequence[float]]] = None
    noise: str = "gaussian"
    noise_scale: float = 1.0
    noise_df: float = 3.0
    sigma_sq: float = 1.0
    sigma_c: float = 1.0
    m4: float = 3.0 ** 0.25

    def validate(self, d: Optional[int] = None) -> None:
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}; expected one of {NOISES}")
        if self.design == "student_t" and not self.df > 4:
            raise ValueError(f"student_t design needs df > 4 for a finite kurtosis bound, got {self.df}")
        if self.noise == "student_t" and not self.noise_df > 1:
            raise ValueError(f"student_t noise needs df > 1, got {self.noise_df}")
        for name in ("noise_scale", "sigma_sq", "sigma_c", "m4"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.design == "gaussian_cov":
            if self.cov is None:
                raise ValueError("gaussian_cov design needs cov")
            cov = np.asarray(self.cov, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise ValueError("cov must be a symmetric square matrix")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValueError("cov must be positive semidefinite")
            if d is not None and cov.shape[0] != d:
                raise ValueError(f"cov is {cov.shape[0]}x{cov.shape[0]} but d={d}")
        if d is not None and self.mu is not None and len(self.mu) != d:
            raise ValueError(f"mu has length {len(self.mu)} but d={d}")

    def mean(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.mu is None else np.asarray(self.mu, dtype=float)

    def covariance(self, d: int) -> np.ndarray:
        if self.design == "gaussian_cov":
            return np.asarray(self.cov, dtype=float)
        return np.eye(d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("mu", "cov"):
            if out[k] is not None:
                out[k] = np.asarray(out[k], dtype=float).tolist()
        return out


@dataclass(frozen=True)
class ContaminationSpec:
    """Which rows the adversary replaces and how.

    Attack parameters (unused ones are ignored):

    * ``point_cluster``: every outlier row becomes ``(center_y, center_x)``;
      ``center_x`` defaults to ``100 * e_1``.
    * ``leverage``: ``X_i = x_i + scale * u`` with ``u`` the unit direction of
      ``beta_star``; with ``response_flip`` the response is ``-X_i @ beta_star + xi_i``.
    * ``response_only``: covariates untouched; the rows with the largest
      projection on ``u`` get ``magnitude`` added to their response.
    * ``mean_shift``: ``X_i = x_i + magnitude / sqrt(eps) * direction`` (so the
      added second moment stays about ``magnitude**2`` whatever eps is) and the
      clean response minus ``response_shift``.  ``direction`` defaults to ``u``.
    """

    eps: float = 0.0
    attack: str = "none"
    seed: int = 0
    center_x: Optional[Sequence[float]] = None
    center_y: float = 0.0
    scale: float = 100.0
    response_flip: bool = True
    magnitude: float = 10.0
    direction: Optional[Sequence[float]] = None
    response_shift: float = 0.0

    def validate(self) -> None:
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}; expected one of {ATTACKS}")
        if not 0.0 <= self.eps < EPS_LIMIT:
            raise ValueError(f"eps must lie in [0, 1/3), got {self.eps}")

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("center_x", "direction"):
            if out[k] is not None:
                out[k] = np.asarray(out[k], dtype=float).tolist()
        return out


def n_outliers(eps: float, n: int) -> int:
    """o = ceil(eps * n), guarded against float noise like 0.1 * 30 = 3.0000000000000004."""
    return int(math.ceil(round(eps * n, 9)))


@dataclass(frozen=True)
class OracleInstance:
    dataset: Dataset
    beta_star: np.ndarray
    x_clean: np.ndarray
    xi: np.ndarray
    outlier_idx: np.ndarray
    rho: np.ndarray
    theta_resp: np.ndarray
    mu: np.ndarray
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    contamination: Optional[ContaminationSpec] = None
    seed: int = 0

    def __post_init__(self):
        for name in ("beta_star", "x_clean", "xi", "rho", "theta_resp", "mu"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        idx = np.array(sorted(int(i) for i in self.outlier_idx), dtype=int)
        idx.setflags(write=False)
        object.__setattr__(self, "outlier_idx", idx)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def clean_idx(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.outlier_idx] = False
        return np.flatnonzero(mask)

    @property
    def clean_dataset(self) -> Dataset:
        """The uncontaminated data ``(x_i @ beta_star + xi_i, x_i)``."""
        return Dataset(y=self.x_clean @ self.beta_star + self.xi, X=self.x_clean)

    def model_residual(self) -> float:
        """max_i |y_i - X_i @ beta_star - xi_i - sqrt(n) theta_i|."""
        ds = self.dataset
        r = ds.y - ds.X @ self.beta_star - self.xi - math.sqrt(self.n) * self.theta_resp
        return float(np.max(np.abs(r)))

    def sidecar(self) -> dict:
        """JSON-able replay record: regenerate with :func:`replay`."""
        return {
            "beta_star": self.beta_star.tolist(),
            "outlier_idx": self.outlier_idx.tolist(),
            "seed": self.seed,
            "spec": {
                "n": self.n,
                "d": self.d,
                "generator": self.generator.to_dict(),
                "contamination": None if self.contamination is None else self.contamination.to_dict(),
            },
        }


def _draw_design(spec: GeneratorSpec, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if spec.design == "gaussian_identity":
        z = rng.standard_normal((n, d))
    elif spec.design == "rademacher":
        z = rng.choice(np.array([-1.0, 1.0]), size=(n, d))
    elif spec.design == "uniform_scaled":
        z = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(n, d))
    elif spec.design == "student_t":
        z = rng.standard_t(spec.df, size=(n, d)) * math.sqrt((spec.df - 2.0) / spec.df)
    else:
        z = rng.multivariate_normal(np.zeros(d), np.asarray(spec.cov, dtype=float), size=n, method="eigh")
    return z + spec.mean(d)


def _draw_noise(spec: GeneratorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.noise == "gaussian":
        return spec.noise_scale * rng.standard_normal(n)
    if spec.noise == "student_t":
        return spec.noise_scale * rng.standard_t(spec.noise_df, size=n)
    return rng.laplace(0.0, spec.noise_scale, size=n)


def generate(spec: GeneratorSpec, n: int, d: int, beta_star: Sequence[float], seed: int) -> OracleInstance:
    """Draw a clean instance ``y = x @ beta_star + xi``."""
    if n < 2 or d < 1:
        raise ValueError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    beta_star = np.asarray(beta_star, dtype=float).reshape(-1)
    if beta_star.shape[0] != d:
        raise ValueError(f"beta_star has length {beta_star.shape[0]} but d={d}")
    spec.validate(d)
    rng = np.random.default_rng(seed)
    x = _draw_design(spec, n, d, rng)
    xi = _draw_noise(spec, n, rng)
    return OracleInstance(
        dataset=Dataset(y=x @ beta_star + xi, X=x),
        beta_star=beta_star,
        x_clean=x,
        xi=xi,
        outlier_idx=np.array([], dtype=int),
        rho=np.zeros((n, d)),
        theta_resp=np.zeros(n),
        mu=spec.mean(d),
        generator=spec,
        contamination=None,
        seed=seed,
    )


def _unit_direction(beta: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(beta)
    if norm == 0:
        u = np.zeros(beta.shape[0])
        u[0] = 1.0
        return u
    return beta / norm


def contaminate(inst: OracleInstance, spec: ContaminationSpec) -> OracleInstance:
    """Replace ``ceil(eps * n)`` rows of ``inst`` according to ``spec.attack``.

    Any earlier contamination of ``inst`` is discarded first; the attack is
    applied to the clean rows ``(x_clean, xi)``.
    """
    spec.validate()
    n, d = inst.n, inst.d
    o = n_outliers(spec.eps, n)
    if spec.attack == "none" or o == 0:
        o = 0
    elif o > n / 3.0:
        raise ValueError(f"ceil(eps*n) = {o} exceeds n/3 for n={n}")

    rng = np.random.default_rng(spec.seed)
    beta = inst.beta_star
    u = _unit_direction(beta)
    x = np.array(inst.x_clean)
    y_clean = x @ beta + inst.xi
    X = x.copy()
    y = y_clean.copy()

    if o == 0:
        idx = np.array([], dtype=int)
    elif spec.attack == "response_only":
        proj = (x - x.mean(axis=0)) @ u
        idx = np.sort(np.argsort(-proj, kind="stable")[:o])
        y[idx] += spec.magnitude
    else:
        idx = np.sort(rng.choice(n, size=o, replace=False))
        if spec.attack == "point_cluster":
            if spec.center_x is None:
                center = np.zeros(d)
                center[0] = 100.0
            else:
                center = np.broadcast_to(np.asarray(spec.center_x, dtype=float), (d,))
            X[idx] = center
            y[idx] = spec.center_y
        elif spec.attack == "leverage":
            X[idx] = x[idx] + spec.scale * u
            sign = -1.0 if spec.response_flip else 1.0
            y[idx] = sign * (X[idx] @ beta) + inst.xi[idx]
        elif spec.attack == "mean_shift":
            direction = u if spec.direction is None else _unit_direction(np.asarray(spec.direction, dtype=float))
            X[idx] = x[idx] + spec.magnitude / math.sqrt(spec.eps) * direction
            y[idx] = y_clean[idx] - spec.response_shift

    rho = np.zeros((n, d))
    theta = np.zeros(n)
    rho[idx] = X[idx] - x[idx]
    theta[idx] = (y[idx] - X[idx] @ beta - inst.xi[idx]) / math.sqrt(n)
    return replace(
        inst,
        dataset=Dataset(y=y, X=X),
        outlier_idx=idx,
        rho=rho,
        theta_resp=theta,
        contamination=spec,
    )


def make_instance(
    generator: GeneratorSpec,
    contamination: Optional[ContaminationSpec],
    n: int,
    d: int,
    beta_star: Sequence[float],
    seed: int,
) -> OracleInstance:
    inst = generate(generator, n, d, beta_star, seed)
    if contamination is not None:
        inst = contaminate(inst, contamination)
    return inst


def replay(sidecar: dict) -> OracleInstance:
    """Rebuild the :class:`OracleInstance` described by :meth:`OracleInstance.sidecar`."""
    spec = sidecar["spec"]
    gen = GeneratorSpec(**spec["generator"])
    cont = spec.get("contamination")
    cont = None if cont is None else ContaminationSpec(**cont)
    inst = make_instance(gen, cont, spec["n"], spec["d"], sidecar["beta_star"], sidecar["seed"])
    if inst.outlier_idx.tolist() != list(sidecar["outlier_idx"]):
        raise ValueError("sidecar outlier_idx does not match the replayed instance")
    return inst


def save_sidecar(inst: OracleInstance, path) -> None:
    Path(path).write_text(json.dumps(inst.sidecar(), indent=2))


def load_sidecar(path) -> OracleInstance:
    return replay(json.loads(Path(path).read_text()))


# -- CSV ---------------------------------------------------------------------


class CSVFormatError(ValueError):
    """Base class for CSV ingestion errors; ``row``/``column`` are 1-based (row 1 is the header)."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class MalformedHeaderError(CSVFormatError):
    pass


class NonNumericCellError(CSVFormatError):
    pass


class RaggedRowError(CSVFormatError):
    pass


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j + 1}" for j in range(ds.d)])
        for yi, xi in zip(ds.y, ds.X):
            writer.writerow([format(v, ".17g") for v in (yi, *xi)])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedHeaderError("empty file, expected header y,x1,...,xd", row=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "y":
        raise MalformedHeaderError(f"header must start with y followed by x1..xd, got {header}", row=1)
    for j, h in enumerate(header[1:], start=1):
        if h != f"x{j}":
            raise MalformedHeaderError(f"expected x{j}, got {h!r}", row=1, column=j + 1)
    width = len(header)
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise RaggedRowError(f"expected {width} cells, got {len(row)}", row=r)
        parsed = []
        for c, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCellError(f"non-numeric cell {cell!r}", row=r, column=c) from None
            if not math.isfinite(v):
                raise NonNumericCellError(f"non-finite cell {cell!r}", row=r, column=c)
            parsed.append(v)
        values.append(parsed)
    if len(values) < 2:
        raise CSVFormatError(f"need at least 2 data rows, got {len(values)}")
    arr = np.array(values)
    return Dataset(y=arr[:, 0], X=arr[:, 1:])
