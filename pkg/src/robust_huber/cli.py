"""Command-line front end: generate, estimate, robust-mean, sweep, certify.

Exit codes: 0 success, 1 input or configuration error, 2 the solver or the
weight stage ran out of budget.  Every long flag ``--foo-bar`` can also be
set through the environment variable ``RH_FOO_BAR``; an explicit flag wins.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .dataset import (
    ATTACKS,
    DESIGNS,
    ContaminationSpec,
    GeneratorSpec,
    load_csv,
    load_sidecar,
    make_instance,
    save_csv,
    save_sidecar,
)
from .diagnostics import check_conditions
from .harness import ExperimentSpec, finite_json, default_beta_star, run_sweep, summarize, write_summary
from .huber import SOLVERS, HuberConfig, default_lambda_scaled, two_step_estimate
from .robust_weights import MODES, RobustWeightConfig, robust_weights

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2
ENV_PREFIX = "RH_"


class ConfigError(ValueError):
    pass


# -- config files ------------------------------------------------------------


def _key_line(node, path: Sequence[Any]) -> Optional[int]:
    """1-based line of the mapping key reached by ``path`` in a composed YAML tree."""
    line = None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    line, node = k.start_mark.line + 1, v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


class _Config:
    def __init__(self, path):
        self.path = str(path)
        text = Path(path).read_text()
        try:
            self.data = yaml.safe_load(text) or {}
            self.tree = yaml.compose(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{self.path}: invalid YAML: {exc}") from None
        if not isinstance(self.data, dict):
            raise ConfigError(f"{self.path}: top level must be a mapping")

    def where(self, path: Sequence[Any]) -> str:
        dotted = ".".join(f"[{p}]" if isinstance(p, int) else str(p) for p in path).replace(".[", "[")
        line = _key_line(self.tree, path)
        return f"{self.path}:{line}: {dotted}" if line else f"{self.path}: {dotted}"

    def check_keys(self, mapping, allowed, path):
        if not isinstance(mapping, dict):
            raise ConfigError(f"{self.where(path)}: expected a mapping")
        for k in mapping:
            if k not in allowed:
                raise ConfigError(f"{self.where(list(path) + [k])}: unknown key {k!r}")

    def build(self, cls, mapping, path, **extra):
        names = [f.name for f in dataclasses.fields(cls)]
        self.check_keys(mapping, names, path)
        try:
            return cls(**{**mapping, **extra})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.where(path)}: {exc}") from None


SWEEP_KEYS = (
    "generator", "contamination", "sizes", "estimators", "seeds",
    "master_seed", "beta_star", "robust_weights", "huber",
)


def _tuplify(mapping: dict, keys) -> dict:
    out = dict(mapping)
    for k in keys:
        if isinstance(out.get(k), list):
            out[k] = tuple(out[k])
    return out


def _stage_configs(cfg: Optional[_Config]):
    rw, hub = {}, {}
    if cfg is not None:
        rw = cfg.data.get("robust_weights") or {}
        hub = cfg.data.get("huber") or {}
        cfg.check_keys(rw, [f.name for f in dataclasses.fields(RobustWeightConfig)], ["robust_weights"])
        cfg.check_keys(hub, [f.name for f in dataclasses.fields(HuberConfig)], ["huber"])
    return dict(rw), _tuplify(hub, ["beta0"])


def experiment_from_config(cfg: _Config) -> ExperimentSpec:
    data = cfg.data
    cfg.check_keys(data, SWEEP_KEYS, [])
    for key in ("contamination", "sizes"):
        if key not in data:
            raise ConfigError(f"{cfg.path}: missing required key {key!r}")
    gen = cfg.build(GeneratorSpec, data.get("generator") or {}, ["generator"])
    conts = data["contamination"]
    if not isinstance(conts, list):
        raise ConfigError(f"{cfg.where(['contamination'])}: expected a list")
    contaminations = [cfg.build(ContaminationSpec, c, ["contamination", i]) for i, c in enumerate(conts)]
    rw, hub = _stage_configs(cfg)
    try:
        rw_cfg = RobustWeightConfig(**rw)
        huber_cfg = HuberConfig(**hub)
        return ExperimentSpec(
            generator=gen,
            contaminations=contaminations,
            sizes=[tuple(s) for s in data["sizes"]],
            estimators=data.get("estimators", ["two_step"]),
            seeds=data.get("seeds", [0]),
            rw_cfg=rw_cfg,
            huber_cfg=huber_cfg,
            master_seed=int(data.get("master_seed", 0)),
            beta_star=None if data.get("beta_star") is None else tuple(data["beta_star"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


# -- output helpers ----------------------------------------------------------


def _emit(doc: dict, out: Optional[str]) -> None:
    text = json.dumps(finite_json(doc), indent=2, allow_nan=False)
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _optional_config(path) -> Optional[_Config]:
    return None if path is None else _Config(path)


def _rw_config(args, cfg: Optional[_Config]) -> RobustWeightConfig:
    rw, _ = _stage_configs(cfg)
    for key, flag in (("mode", "mode"), ("c_term", "c_term"), ("sigma_c_sq", "sigma_c_sq"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            rw[key] = val
    rw["eps"] = args.eps
    return RobustWeightConfig(**rw)


def _huber_config(args, cfg: Optional[_Config]) -> HuberConfig:
    _, hub = _stage_configs(cfg)
    if getattr(args, "lambda_scaled", None) is not None:
        hub["lambda_scaled"] = args.lambda_scaled
    if getattr(args, "step", None) is not None:
        hub["step"] = args.step
    return HuberConfig(**hub)


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _optional_config(args.config)
    gen_map = {} if cfg is None else (cfg.data.get("generator") or {})
    cont_map = {} if cfg is None else (cfg.data.get("contamination") or {})
    if cfg is not None:
        cfg.check_keys(cfg.data, ("generator", "contamination", "beta_star"), [])
        if isinstance(cont_map, list):
            raise ConfigError(f"{cfg.where(['contamination'])}: generate takes a single mapping")
    if args.design is not None:
        gen_map = {**gen_map, "design": args.design}
    gen = GeneratorSpec(**gen_map) if cfg is None else cfg.build(GeneratorSpec, gen_map, ["generator"])
    cont_over = {"eps": args.eps, "seed": args.seed}
    if args.attack is not None:
        cont_over["attack"] = args.attack
    elif "attack" not in cont_map:
        cont_over["attack"] = "none" if args.eps == 0 else "point_cluster"
    cont = ContaminationSpec(**{**cont_map, **cont_over})
    gen.validate(args.d)
    cont.validate()
    beta = default_beta_star(args.d)
    if cfg is not None and cfg.data.get("beta_star") is not None:
        beta = np.asarray(cfg.data["beta_star"], dtype=float)
    inst = make_instance(gen, cont, args.n, args.d, beta, args.seed)
    save_csv(inst.dataset, args.out)
    sidecar = args.sidecar or str(Path(args.out).with_suffix(".oracle.json"))
    save_sidecar(inst, sidecar)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _optional_config(args.config)
    if cfg is not None:
        cfg.check_keys(cfg.data, ("robust_weights", "huber"), [])
    ds = load_csv(args.input)
    rw_cfg = _rw_config(args, cfg)
    res = two_step_estimate(ds, args.eps, rw_cfg, _huber_config(args, cfg))
    doc = {"schema_version": 1, **res.to_dict()}
    _emit(doc, args.out)
    return EXIT_OK if res.ok else EXIT_BUDGET


def cmd_robust_mean(args) -> int:
    cfg = _optional_config(args.config)
    if cfg is not None:
        cfg.check_keys(cfg.data, ("robust_weights",), [])
    ds = load_csv(args.input)
    rw = robust_weights(ds, _rw_config(args, cfg))
    doc = {"schema_version": 1, "threshold": rw.threshold, **rw.to_dict()}
    _emit(doc, args.out)
    return EXIT_OK if rw.terminated_by == "certificate" else EXIT_BUDGET


def cmd_sweep(args) -> int:
    spec = experiment_from_config(_Config(args.config))
    records = run_sweep(spec, out_path=args.out, workers=args.workers)
    rows = summarize(records)
    if args.summary:
        write_summary(rows, args.summary, spec)
    return EXIT_OK


def cmd_certify(args) -> int:
    inst = load_sidecar(args.sidecar)
    ds = inst.dataset
    eps = args.eps
    if eps is None:
        eps = 0.0 if inst.contamination is None else inst.contamination.eps
    args.eps = eps
    cfg = _optional_config(args.config)
    if cfg is not None:
        cfg.check_keys(cfg.data, ("robust_weights", "huber"), [])
    rw_cfg = _rw_config(args, cfg)
    rw = robust_weights(ds, rw_cfg)

    lam = args.lambda_scaled
    if args.at_truth:
        beta_hat = inst.beta_star
    elif args.estimate:
        est = json.loads(Path(args.estimate).read_text())
        if "beta_hat" not in est:
            raise ConfigError(f"{args.estimate}: missing beta_hat")
        beta_hat = np.asarray(est["beta_hat"], dtype=float)
        if beta_hat.shape != (ds.d,):
            raise ConfigError(f"{args.estimate}: beta_hat has {beta_hat.size} entries but d={ds.d}")
        if lam is None:
            lam = est.get("lambda_scaled")
    else:
        res = two_step_estimate(ds, eps, rw_cfg, _huber_config(args, cfg))
        beta_hat = res.beta_hat
        lam = lam if lam is not None else res.lambda_scaled
    if lam is None:
        lam = default_lambda_scaled(ds, rw.w, rw.mu_w, eps)
    report = check_conditions(inst, rw, beta_hat, float(lam))
    doc = {
        "schema_version": 1,
        "beta_hat": np.asarray(beta_hat).tolist(),
        "lambda_scaled": float(lam),
        "terminated_by": rw.terminated_by,
        "lambda_max": rw.lambda_max,
        **report.to_dict(),
    }
    _emit(doc, args.out)
    return EXIT_OK if rw.terminated_by == "certificate" else EXIT_BUDGET


# -- parser ------------------------------------------------------------------


def _add_weight_flags(p, eps_default: Optional[float] = 0.0):
    p.add_argument("--eps", type=float, default=eps_default, help="contamination fraction, must be < 1/3")
    p.add_argument("--mode", choices=MODES, default=None, help="covariance regime (default identity_cov)")
    p.add_argument("--c-term", dest="c_term", type=float, default=None,
                   help="threshold constant (default 2 for identity_cov, 9 for bounded_cov)")
    p.add_argument("--sigma-c-sq", dest="sigma_c_sq", type=float, default=None,
                   help="covariance cap for bounded_cov (default: robust MAD estimate)")
    p.add_argument("--seed", type=int, default=None, help="power-iteration seed (default 0)")
    p.add_argument("--config", default=None, help="YAML file with robust_weights/huber sections")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="robust-huber", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV and its oracle sidecar", formatter_class=fmt)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--attack", choices=ATTACKS, default=None,
                   help="default: none when eps=0, else point_cluster")
    p.add_argument("--design", choices=DESIGNS, default=None, help="default gaussian_identity")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--sidecar", default=None, help="oracle JSON path (default: <out>.oracle.json)")
    p.add_argument("--config", default=None, help="YAML with generator/contamination/beta_star")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", help="two-step weighted Huber regression", formatter_class=fmt)
    p.add_argument("--input", required=True, help="dataset CSV")
    _add_weight_flags(p)
    p.add_argument("--lambda", dest="lambda_scaled", type=float, default=None,
                   help="Huber threshold on the residual scale (default: trimmed MAD plug-in)")
    p.add_argument("--step", choices=SOLVERS, default=None, help="solver (default backtracking_gd)")
    p.add_argument("--out", default=None, help="result JSON (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("robust-mean", help="robust weights and weighted mean", formatter_class=fmt)
    p.add_argument("--input", required=True, help="dataset CSV")
    _add_weight_flags(p)
    p.add_argument("--out", default=None, help="result JSON (default stdout)")
    p.set_defaults(func=cmd_robust_mean)

    p = sub.add_parser("sweep", help="run a Monte-Carlo sweep from a YAML config", formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="record CSV")
    p.add_argument("--summary", default=None, help="summary JSON")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("certify", help="evaluate the score-sum conditions on an oracle instance",
                       formatter_class=fmt)
    p.add_argument("--sidecar", required=True, help="oracle JSON written by generate")
    p.add_argument("--estimate", default=None, help="estimate JSON (default: run estimate)")
    p.add_argument("--at-truth", dest="at_truth", action="store_true", help="evaluate at beta_hat = beta*")
    _add_weight_flags(p, eps_default=None)
    p.add_argument("--lambda", dest="lambda_scaled", type=float, default=None)
    p.add_argument("--step", choices=SOLVERS, default=None)
    p.add_argument("--out", default=None, help="report JSON (default stdout)")
    p.set_defaults(func=cmd_certify)
    return parser


_TRUE = {"1", "true", "yes", "on"}


def _apply_env(parser: argparse.ArgumentParser, environ) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                _apply_env(sp, environ)
            continue
        longs = [o for o in action.option_strings if o.startswith("--")]
        if not longs or action.dest == "help":
            continue
        key = ENV_PREFIX + longs[0][2:].replace("-", "_").upper()
        if key not in environ:
            continue
        raw = environ[key]
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.strip().lower() in _TRUE
        else:
            # argparse runs ``type`` on string defaults
            action.default = raw
        action.required = False


def main(argv: Optional[Sequence[str]] = None, environ=None) -> int:
    parser = build_parser()
    _apply_env(parser, os.environ if environ is None else environ)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, TypeError, yaml.YAMLError) as exc:
        print(f"robust-huber {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
