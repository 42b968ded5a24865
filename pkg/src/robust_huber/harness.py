"""Monte-Carlo sweeps over (size, contamination, estimator, seed) with CSV/JSON output."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import ContaminationSpec, GeneratorSpec, contaminate, generate
from .diagnostics import error_metrics
from .huber import HuberConfig, ols_fit, plain_huber_fit, two_step_estimate
from .robust_weights import RobustWeightConfig

ESTIMATORS = ("two_step", "plain_huber", "ols", "oracle_huber_on_clean")
RECORD_FIELDS = (
    "eps", "n", "d", "attack", "estimator", "seed",
    "l2_error", "mu_error", "lambda_max", "runtime_ms", "converged",
)
SCHEMA_VERSION = 1


def default_beta_star(d: int) -> np.ndarray:
    return np.ones(d) / math.sqrt(d)


@dataclass(frozen=True)
class ExperimentSpec:
    generator: GeneratorSpec
    contaminations: Tuple[ContaminationSpec, ...]
    sizes: Tuple[Tuple[int, int], ...]
    estimators: Tuple[str, ...] = ("two_step",)
    seeds: Tuple[int, ...] = (0,)
    rw_cfg: RobustWeightConfig = field(default_factory=RobustWeightConfig)
    huber_cfg: HuberConfig = field(default_factory=HuberConfig)
    master_seed: int = 0
    beta_star: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "contaminations", tuple(self.contaminations))
        object.__setattr__(self, "sizes", tuple((int(n), int(d)) for n, d in self.sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.contaminations:
            raise ValueError("contamination grid is empty")
        if not self.sizes:
            raise ValueError("size grid is empty")
        if not self.estimators:
            raise ValueError("no estimators selected")
        if not self.seeds:
            raise ValueError("seed list is empty")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}; expected a subset of {ESTIMATORS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        for n, d in self.sizes:
            if n < 2 or d < 1:
                raise ValueError(f"bad size (n={n}, d={d})")
            self.generator.validate(d)
            if self.beta_star is not None and len(self.beta_star) != d:
                raise ValueError(f"beta_star has length {len(self.beta_star)} but d={d}")
        for c in self.contaminations:
            c.validate()

    def beta_for(self, d: int) -> np.ndarray:
        return default_beta_star(d) if self.beta_star is None else np.asarray(self.beta_star, dtype=float)

    def cells(self) -> List[Tuple[int, int, int, int, ContaminationSpec]]:
        """(cell index, size index, n, d, contamination) in sweep order."""
        out = []
        for si, (n, d) in enumerate(self.sizes):
            for c in self.contaminations:
                out.append((len(out), si, n, d, c))
        return out


@dataclass(frozen=True)
class ExperimentRecord:
    eps: float
    n: int
    d: int
    attack: str
    estimator: str
    seed: int
    l2_error: float
    mu_error: float
    lambda_max: float
    runtime_ms: float
    converged: bool
    error: str = ""

    def row(self) -> list:
        return [getattr(self, k) for k in RECORD_FIELDS]


def _child_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _run_estimator(name: str, inst, eps: float, spec: ExperimentSpec):
    ds = inst.dataset
    if name == "two_step":
        res = two_step_estimate(ds, eps, spec.rw_cfg, spec.huber_cfg)
        return res, res.robust.lambda_max, res.ok
    if name == "plain_huber":
        res = plain_huber_fit(ds, spec.huber_cfg)
        return res, math.nan, res.converged
    if name == "ols":
        res = ols_fit(ds)
        return res, math.nan, res.converged
    res = plain_huber_fit(inst.clean_dataset, spec.huber_cfg)
    return res, math.nan, res.converged


def _run_task(args) -> List[ExperimentRecord]:
    spec, cell_idx, size_idx, n, d, cont, seed = args
    base = dict(eps=cont.eps, n=n, d=d, attack=cont.attack, seed=seed)

    def failed(est, msg):
        return ExperimentRecord(
            estimator=est, l2_error=math.nan, mu_error=math.nan, lambda_max=math.nan,
            runtime_ms=math.nan, converged=False, error=msg, **base,
        )

    try:
        inst = generate(spec.generator, n, d, spec.beta_for(d), _child_seed(spec.master_seed, size_idx, seed))
        inst = contaminate(inst, replace(cont, seed=_child_seed(spec.master_seed, cell_idx, seed)))
    except Exception as exc:  # noqa: BLE001 - a bad cell must not stop the sweep
        return [failed(e, f"{type(exc).__name__}: {exc}") for e in spec.estimators]

    out = []
    for est in spec.estimators:
        t0 = time.perf_counter()
        try:
            res, lam, ok = _run_estimator(est, inst, cont.eps, spec)
            m = error_metrics(res, inst)
            mu_err = m["mu_error"] if est != "ols" else math.nan
            out.append(ExperimentRecord(
                estimator=est, l2_error=m["l2_error"], mu_error=mu_err, lambda_max=float(lam),
                runtime_ms=1e3 * (time.perf_counter() - t0), converged=bool(ok), **base,
            ))
        except Exception as exc:  # noqa: BLE001
            out.append(failed(est, f"{type(exc).__name__}: {exc}"))
    return out


def _tasks(spec: ExperimentSpec):
    for cell_idx, size_idx, n, d, cont in spec.cells():
        for seed in spec.seeds:
            yield (spec, cell_idx, size_idx, n, d, cont, seed)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def run_sweep(spec: ExperimentSpec, out_path=None, workers: int = 1) -> List[ExperimentRecord]:
    """Run every (cell, seed) task; records are written to ``out_path`` as they arrive.

    Each task draws its clean data from a stream keyed by (master seed, size
    index, seed) and its contamination from (master seed, cell index, seed),
    so serial and parallel runs produce identical records in identical order.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    records: List[ExperimentRecord] = []
    fh = writer = None
    if out_path is not None:
        fh = open(out_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        fh.flush()
    try:
        if workers == 1:
            results = map(_run_task, _tasks(spec))
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_task, _tasks(spec))
        try:
            for batch in results:
                for rec in batch:
                    records.append(rec)
                    if writer is not None:
                        writer.writerow([_format(v) for v in rec.row()])
                if fh is not None:
                    fh.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if fh is not None:
            fh.close()
    return records


def read_records(path) -> List[ExperimentRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise ValueError(f"unexpected record header {reader.fieldnames}")
        out = []
        for r in reader:
            out.append(ExperimentRecord(
                eps=float(r["eps"]), n=int(r["n"]), d=int(r["d"]), attack=r["attack"],
                estimator=r["estimator"], seed=int(r["seed"]), l2_error=float(r["l2_error"]),
                mu_error=float(r["mu_error"]), lambda_max=float(r["lambda_max"]),
                runtime_ms=float(r["runtime_ms"]), converged=r["converged"] == "true",
            ))
    return out


def summarize(records: Iterable[ExperimentRecord]) -> List[dict]:
    """Median and IQR of l2_error per (eps, n, d, attack, estimator) cell.

    Failed records (NaN error) are counted in ``n_failed`` and left out of
    the statistics.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.eps, r.n, r.d, r.estimator, r.attack), []).append(r.l2_error)
    rows = []
    for key in sorted(groups):
        eps, n, d, est, attack = key
        vals = np.asarray(groups[key], dtype=float)
        ok = vals[np.isfinite(vals)]
        if ok.size:
            q1, med, q3 = np.percentile(ok, [25, 50, 75])
        else:
            q1 = med = q3 = math.nan
        rows.append({
            "eps": eps, "n": n, "d": d, "attack": attack, "estimator": est,
            "median_error": float(med), "iqr": float(q3 - q1),
            "n_seeds": int(ok.size), "n_failed": int(vals.size - ok.size),
        })
    return rows


def write_summary(rows: Sequence[dict], path, spec: Optional[ExperimentSpec] = None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "rows": list(rows)}
    if spec is not None:
        doc["master_seed"] = spec.master_seed
    Path(path).write_text(json.dumps(finite_json(doc), indent=2, allow_nan=False))


def finite_json(obj):
    """Replace NaN and infinities by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_json(v) for v in obj]
    return obj


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) on log(x)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log slope needs positive values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
