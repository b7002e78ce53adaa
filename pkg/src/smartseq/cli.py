"""Command-line entry point: ``smartseq <command> --config cfg.json --out dir``.

Commands are ``simulate``, ``calibrate``, ``ingest``, ``compare`` and
``analyze-limits``.  Every output embeds the provenance triple (sha256 of
the canonical config, seed, package version).  CSV files start with one
``#`` comment line carrying it; JSON files carry a ``provenance`` object.
Floats are written in shortest round-trip form.

Exit codes: 0 success, 1 structured run error (error manifest written),
2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .ingest import compute_z_scores, fit_empirical_null, load_delimited_table, load_grayscale_image
from .metrics import ensemble_from_runs, per_run_metrics
from .model import ConstantMean, ListMean, MixtureModel, UniformMean, derive_seed, sample_ground_truth
from .posterior import oracle_hyper
from .procedures import ModelStream, run_distilled_sensing, run_smart
from .simulate import (METHODS, SETTINGS, SweepSpec, default_grid, resolve_threads, run_ds_matched_comparison,
                       run_sweep)
from .thresholds import (ErrorBudget, InfeasibleBudgetError, MCConfig, approx_thresholds,
                         calibrate_oracle_thresholds, kl_divergence_normal, limit_bounds)

U64_MAX = 2 ** 64 - 1

# -- schemas --------------------------------------------------------------------

_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_pos_int = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": U64_MAX}

_MODEL = {
    "type": "object",
    "required": ["pi", "alt_means"],
    "additionalProperties": False,
    "properties": {
        "p": _pos_int,
        "pi": _prob,
        "alt_means": {
            "oneOf": [
                {"type": "object", "required": ["kind", "value"], "additionalProperties": False,
                 "properties": {"kind": {"const": "constant"}, "value": {"type": "number"}}},
                {"type": "object", "required": ["kind", "low", "high"], "additionalProperties": False,
                 "properties": {"kind": {"const": "uniform"}, "low": {"type": "number"},
                                "high": {"type": "number"}}},
                {"type": "object", "required": ["kind", "values"], "additionalProperties": False,
                 "properties": {"kind": {"const": "list"},
                                "values": {"type": "array", "items": {"type": "number"}, "minItems": 1}}},
            ]
        },
        "null_mean": {"type": "number"},
        "null_sd": {"type": "number", "exclusiveMinimum": 0},
        "alt_prior_sd": {"type": "number", "minimum": 0},
    },
}

_COMMON = {"seed": _seed, "threads": {"oneOf": [_pos_int, {"const": "auto"}]}}

SCHEMAS = {
    "simulate": {
        "type": "object",
        "required": ["setting", "p", "replications", "alpha", "gamma", "methods"],
        "additionalProperties": False,
        "properties": {
            **_COMMON,
            "setting": {"enum": list(SETTINGS)},
            "param": {"type": "string"},
            "grid": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "p": _pos_int,
            "replications": _pos_int,
            "alpha": _prob,
            "gamma": _prob,
            "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
            "cap": _pos_int,
            "ds_stages": _pos_int,
            "base_model": _MODEL,
        },
    },
    "calibrate": {
        "type": "object",
        "required": ["model", "alpha", "gamma"],
        "additionalProperties": False,
        "properties": {
            **_COMMON,
            "model": _MODEL,
            "alpha": _prob,
            "gamma": _prob,
            "mc": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"p": _pos_int, "replications": {"type": "integer", "minimum": 2},
                               "tol": {"type": "number", "exclusiveMinimum": 0}, "cap": _pos_int,
                               "iterations": _pos_int, "max_tl_ratio": {"type": "number", "minimum": 1}},
            },
        },
    },
    "ingest": {
        "type": "object",
        "required": ["input"],
        "additionalProperties": False,
        "properties": {
            **_COMMON,
            "input": {"type": "string"},
            "format": {"enum": ["table", "pgm"]},
            "c": {"type": "number", "exclusiveMinimum": 0},
            "min_size": _pos_int,
            "pi_floor": _prob,
        },
    },
    "compare": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            **_COMMON,
            "model": _MODEL,
            "null_fit": {"type": "string"},
            "p": _pos_int,
            "alpha": _prob,
            "gamma": _prob,
            "ds_stages": _pos_int,
            "replications": _pos_int,
            "cap": _pos_int,
        },
    },
    "analyze-limits": {
        "type": "object",
        "required": ["pi", "eta", "f_p", "epsilon"],
        "additionalProperties": False,
        "properties": {
            **_COMMON,
            "pi": _prob,
            "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
            "f_p": {"type": "number", "exclusiveMinimum": 1},
            "epsilon": {"type": "number", "exclusiveMinimum": 0},
            "d_kl": {"type": "number", "exclusiveMinimum": 0},
            "d_min": {"type": "number", "exclusiveMinimum": 0},
            "null": {"$ref": "#/$defs/normal"},
            "alt": {"$ref": "#/$defs/normal"},
        },
        "oneOf": [{"required": ["d_kl"]}, {"required": ["null", "alt"]}],
        "$defs": {"normal": {"type": "object", "required": ["mean", "sd"], "additionalProperties": False,
                             "properties": {"mean": {"type": "number"},
                                            "sd": {"type": "number", "exclusiveMinimum": 0}}}},
    },
}


class ConfigError(ValueError):
    pass


def validate_config(command: str, config) -> None:
    """Raise :class:`ConfigError` listing every violation with its JSON-pointer path."""
    errors = sorted(Draft202012Validator(SCHEMAS[command]).iter_errors(config), key=lambda e: [str(x) for x in e.absolute_path])
    if errors:
        lines = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


def _pointer(path) -> str:
    parts = [str(p).replace("~", "~0").replace("/", "~1") for p in path]
    return "/" + "/".join(parts) if parts else "/"


# -- formatting -------------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class Provenance:
    def __init__(self, config: dict, seed: int):
        self.config = config
        self.seed = seed
        self.hash = config_hash(config)

    def as_dict(self) -> dict:
        return {"config_sha256": self.hash, "seed": self.seed, "version": __version__}

    def comment(self) -> str:
        return f"# config_sha256={self.hash} seed={self.seed} version={__version__}\n"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path: Path, payload: dict, prov: Provenance) -> None:
    body = dict(_jsonable(payload), provenance=prov.as_dict())
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header: list, rows, prov: Provenance) -> None:
    buf = io.StringIO()
    buf.write(prov.comment())
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


# -- config to objects --------------------------------------------------------------

def model_from_config(d: dict, p: int | None = None) -> MixtureModel:
    am = d["alt_means"]
    kind = am["kind"]
    if kind == "constant":
        alt = ConstantMean(am["value"])
    elif kind == "uniform":
        alt = UniformMean(am["low"], am["high"])
    else:
        alt = ListMean(tuple(am["values"]))
    p = p if p is not None else d.get("p", 1)
    return MixtureModel(p=p, pi=d["pi"], alt_means=alt, null_mean=d.get("null_mean", 0.0),
                        null_sd=d.get("null_sd", 1.0), alt_prior_sd=d.get("alt_prior_sd", 1.0))


def sweep_spec_from_config(cfg: dict, seed: int) -> SweepSpec:
    setting = cfg["setting"]
    grid = cfg.get("grid")
    if grid is None:
        grid = default_grid(setting)
    base = model_from_config(cfg["base_model"], cfg["p"]) if "base_model" in cfg else None
    return SweepSpec(setting=setting, grid=tuple(grid), p=cfg["p"], replications=cfg["replications"],
                     budget=ErrorBudget(cfg["alpha"], cfg["gamma"]), methods=tuple(cfg["methods"]), seed=seed,
                     param=cfg.get("param"), cap=cfg.get("cap", 100), ds_stages=cfg.get("ds_stages"),
                     base_model=base)


# -- commands -------------------------------------------------------------------

SWEEP_COLUMNS = ["method", "grid_param", "grid_value", "rep", "fdp", "mdp", "fnp", "east", "total_obs"]
SUMMARY_COLUMNS = ["method", "grid_param", "grid_value", "replications", "fpr", "fpr_se", "mdr", "mdr_se",
                   "fnr", "fnr_se", "east", "east_se", "total_obs", "flags"]


def cmd_simulate(cfg: dict, out: Path, seed: int, threads: int) -> int:
    prov = Provenance(cfg, seed)
    spec = sweep_spec_from_config(cfg, seed)
    res = run_sweep(spec, threads=threads)
    rows, summary = [], []
    for value in spec.grid:
        for m in spec.methods:
            key = (m, value)
            if key not in res.reports:
                continue
            for r, rm in enumerate(res.runs[key]):
                rows.append([m, spec.param, value, r, rm.fdp, rm.mdp, rm.fnp, rm.east, rm.total_obs])
            rep = res.reports[key]
            se = rep.mc_se
            summary.append([m, spec.param, value, rep.replications, rep.fpr, se["fpr"], rep.mdr, se["mdr"],
                            rep.fnr, se["fnr"], rep.east, se["east"], rep.total_obs, ";".join(rep.flags)])
    write_csv(out / "sweep_results.csv", SWEEP_COLUMNS, rows, prov)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary, prov)
    write_json(out / "provenance.json", {"config": cfg, "spec": res.provenance["spec"]}, prov)
    if res.errors:
        errs = [{"method": m, "grid_value": v, "error": msg} for (m, v), msg in res.errors.items()]
        write_json(out / "errors.json", {"errors": errs}, prov)
        return 1
    return 0


def cmd_calibrate(cfg: dict, out: Path, seed: int, threads: int, approx: bool = False) -> int:
    prov = Provenance(cfg, seed)
    budget = ErrorBudget(cfg["alpha"], cfg["gamma"])
    mc_cfg = dict(cfg.get("mc", {}))
    model = model_from_config(cfg["model"], mc_cfg.get("p", MCConfig.p))
    if approx:
        thr = approx_thresholds(budget, model.pi)
        payload = dict(mode="approx", t_l=thr.t_l, t_u=thr.t_u, A=thr.A, B=thr.B, pi=thr.pi)
        write_json(out / "thresholds.json", payload, prov)
        return 0
    mc = MCConfig(seed=seed, threads=threads, **mc_cfg)
    try:
        res = calibrate_oracle_thresholds(model, budget, mc)
    except (InfeasibleBudgetError, ValueError) as exc:
        write_json(out / "calibration_error.json",
                   dict(error=str(exc), binding=getattr(exc, "binding", None), alpha=budget.alpha,
                        gamma=budget.gamma), prov)
        return 1
    thr = res.thresholds
    payload = dict(mode="monte-carlo", t_l=thr.t_l, t_u=thr.t_u, A=thr.A, B=thr.B, pi=thr.pi,
                   achieved_fpr=res.achieved_fpr, achieved_mdr=res.achieved_mdr, fpr_se=res.fpr_se,
                   mdr_se=res.mdr_se, q11=res.q11, converged=res.converged,
                   mc_config=dict(p=mc.p, replications=mc.replications, seed=mc.seed, tol=mc.tol, cap=mc.cap,
                                  iterations=mc.iterations, max_tl_ratio=mc.max_tl_ratio))
    write_json(out / "thresholds.json", payload, prov)
    return 0


def _load_pilot(cfg: dict, base: Path):
    path = Path(cfg["input"])
    if not path.is_absolute():
        path = base / path
    fmt_ = cfg.get("format") or ("pgm" if path.suffix.lower() in (".pgm", ".pnm") else "table")
    return load_grayscale_image(path) if fmt_ == "pgm" else load_delimited_table(path)


def cmd_ingest(cfg: dict, out: Path, seed: int, threads: int, base: Path = Path(".")) -> int:
    prov = Provenance(cfg, seed)
    try:
        data = _load_pilot(cfg, base)
    except (OSError, ValueError) as exc:
        write_json(out / "null_fit.json", dict(error=str(exc)), prov)
        return 1
    try:
        z = compute_z_scores(data)
    except ValueError as exc:
        write_json(out / "null_fit.json", dict(p=data.p, source=data.source, error=str(exc)), prov)
        return 1
    ids = data.ids if data.ids is not None else [str(i) for i in range(data.p)]
    write_csv(out / "zscores.csv", ["location_id", "z"], zip(ids, z.tolist()), prov)
    payload = dict(p=data.p, source=data.source)
    if data.shape is not None:
        payload["shape"] = list(data.shape)
    try:
        fit = fit_empirical_null(z, c=cfg.get("c", 2.0), min_size=cfg.get("min_size", 100),
                                 pi_floor=cfg.get("pi_floor", 1e-4))
    except ValueError as exc:
        payload["fit_error"] = str(exc)
        write_json(out / "null_fit.json", payload, prov)
        return 1
    payload.update(pi_hat=fit.pi_hat, mu0_hat=fit.mu0_hat, sigma0_hat=fit.sigma0_hat,
                   mu_signal_hat=fit.mu_signal_hat, at_floor=fit.at_floor)
    write_json(out / "null_fit.json", payload, prov)
    return 0


HTS_MODEL = dict(pi=0.0007, alt_means=dict(kind="constant", value=3.194), null_mean=0.2459, null_sd=0.6893,
                 alt_prior_sd=0.0)


def _ds_stages_for_budget(p: int, budget: float) -> int:
    """Most stages whose halving schedule ``p (2 - 2**(1-k))`` fits the budget; at least 2."""
    k = 2
    while k < 64 and p * (2.0 - 2.0 ** (-k)) <= budget:
        k += 1
    return k


def cmd_compare(cfg: dict, out: Path, seed: int, threads: int, base: Path = Path(".")) -> int:
    prov = Provenance(cfg, seed)
    p = cfg.get("p", 20000)
    if "null_fit" in cfg:
        path = Path(cfg["null_fit"])
        fit = json.loads((path if path.is_absolute() else base / path).read_text())
        model = MixtureModel(p=p, pi=fit["pi_hat"], alt_means=ConstantMean(fit["mu_signal_hat"]),
                             null_mean=fit["mu0_hat"], null_sd=fit["sigma0_hat"], alt_prior_sd=0.0)
    else:
        model = model_from_config(cfg.get("model", HTS_MODEL), p)
    reps = cfg.get("replications", 20)
    cap = cfg.get("cap", 100)
    budget = ErrorBudget(cfg.get("alpha", 0.1), cfg.get("gamma", 0.1))
    rows = []

    # fixed-level table: SMART at (alpha, gamma), then DS given SMART's observation count
    hyper = oracle_hyper(model)
    thr = approx_thresholds(budget, model.pi)
    sm_runs, ds_runs = [], []
    for r in range(reps):
        s = derive_seed(seed, 2, r)
        truth = sample_ground_truth(model, s)
        stream = ModelStream(model, truth, s)
        rec = run_smart(stream, thr, hyper, cap=cap)
        sm_runs.append(per_run_metrics(truth, rec))
        k = _ds_stages_for_budget(p, sm_runs[-1].total_obs)
        ds_runs.append(per_run_metrics(truth, run_distilled_sensing(stream, k, threshold=model.null_mean)))
    for name, runs in (("SMART", sm_runs), ("DS", ds_runs)):
        rep = ensemble_from_runs(runs)
        rows.append(["fixed_levels", name, rep.fdp, rep.mdp, rep.total_obs])

    # matched-level table: DS for ds_stages, SMART at DS's recorded levels
    comp = run_ds_matched_comparison(model, ds_stages=cfg.get("ds_stages", 10), replications=reps, seed=seed,
                                     cap=cap, threads=threads)
    rows.append(["matched_levels", "DS", comp.ds.fdp, comp.ds.mdp, comp.ds.total_obs])
    if not comp.aborted:
        rows.append(["matched_levels", "SMART", comp.smart.fdp, comp.smart.mdp, comp.smart.total_obs])
    write_csv(out / "compare.csv", ["table", "method", "fdp", "mdp", "total_obs"], rows, prov)
    if comp.aborted:
        write_json(out / "errors.json", {"errors": [{"table": "matched_levels", "error": comp.flag}]}, prov)
        return 1
    return 0


def cmd_analyze_limits(cfg: dict, out: Path, seed: int, threads: int) -> int:
    prov = Provenance(cfg, seed)
    if "d_kl" in cfg:
        d_kl, d_min = cfg["d_kl"], cfg.get("d_min")
        d01 = d10 = None
    else:
        n0, n1 = cfg["null"], cfg["alt"]
        d01, d10, d_kl = kl_divergence_normal(n0["mean"], n0["sd"], n1["mean"], n1["sd"])
        d_min = cfg.get("d_min", min(d01, d10))
    b = limit_bounds(cfg["pi"], d_kl, cfg["eta"], cfg["f_p"], cfg["epsilon"], d_min)
    payload = dict(lower_tau=b.lower_tau, upper_tau=b.upper_tau, lower_applicable=b.lower_applicable,
                   d_kl=d_kl, d_min=d_min if d_min is not None else d_kl, d01=d01, d10=d10)
    write_json(out / "limits.json", payload, prov)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "ingest": cmd_ingest,
    "compare": cmd_compare,
    "analyze-limits": cmd_analyze_limits,
}


def _seed_arg(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smartseq", description="Multistage sparse-signal recovery experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="JSON configuration file")
        sp.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
        sp.add_argument("--seed", type=_seed_arg, default=None, help="master seed; overrides the config")
        sp.add_argument("--threads", default=None, help="worker threads, integer or 'auto' (env SMARTSEQ_THREADS)")
        if name == "calibrate":
            sp.add_argument("--approx", action="store_true", help="emit the closed-form cutoffs only")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        validate_config(args.command, cfg)
        threads = resolve_threads(args.threads or os.environ.get("SMARTSEQ_THREADS") or cfg.get("threads"))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    args.out.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if args.command == "calibrate":
        kwargs["approx"] = args.approx
    if args.command in ("ingest", "compare"):
        kwargs["base"] = args.config.parent
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return COMMANDS[args.command](cfg, args.out, seed, threads, **kwargs)
    except (ValueError, ArithmeticError) as exc:
        prov = Provenance(cfg, seed)
        write_json(args.out / "errors.json", {"errors": [{"error": str(exc)}]}, prov)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
