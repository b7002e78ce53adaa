"""Replicated parameter sweeps and DS-matched efficiency comparisons.

Every (grid point, replication) pair gets its own seed derived from the
master seed, a single ground truth and a single observation stream.  All
requested methods read from that same stream, so any two methods see the
same measurement for a shared (location, stage) pair.

Method names:

``OR.ST`` / ``OR.SM``
    Simple thresholding / SMART with the generating model's hyperparameters.
``DD.ST`` / ``DD.SM``
    The same engines with hyperparameters fitted once to the stage-1 data.
``DS``
    Distilled sensing.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import fit_empirical_null
from .metrics import MetricsReport, RunMetrics, ensemble_from_runs, per_run_metrics, stage_counts
from .model import ConstantMean, MixtureModel, UniformMean, derive_seed, sample_ground_truth
from .posterior import PosteriorHyper, oracle_hyper, top_fraction_mean
from .procedures import (DEFAULT_CAP, ModelStream, run_distilled_sensing, run_simple_thresholding,
                         run_smart)
from .thresholds import ErrorBudget, approx_thresholds

__all__ = [
    "METHODS",
    "SETTINGS",
    "SweepSpec",
    "SweepResult",
    "ComparisonResult",
    "setting_model",
    "default_grid",
    "data_driven_setup",
    "run_method",
    "run_sweep",
    "run_ds_matched_comparison",
    "resolve_threads",
]

METHODS = ("OR.ST", "OR.SM", "DD.ST", "DD.SM", "DS")
SETTINGS = ("setting1", "setting2", "setting3", "custom")

_DEFAULT_PARAM = {"setting1": "mu0", "setting2": "mu0", "setting3": "pi"}


def default_grid(setting: str) -> tuple:
    if setting in ("setting1", "setting2"):
        return tuple(round(2.0 + 0.2 * k, 10) for k in range(11))
    if setting == "setting3":
        return tuple(round(0.05 + 0.01 * k, 10) for k in range(16))
    raise ValueError(f"no default grid for {setting!r}")


def setting_model(setting: str, param: str, value: float, p: int,
                  base: MixtureModel | None = None) -> MixtureModel:
    """The mixture model at one grid point.

    Settings 1 and 2 fix ``pi`` at 0.01 and 0.05 with a common signal centre
    ``mu0``; setting 3 draws centres from U(2, 4) and sweeps ``pi``.  The
    ``custom`` setting varies one field of ``base`` (``mu0`` sets a constant
    signal centre).
    """
    value = float(value)
    if setting in ("setting1", "setting2"):
        if param != "mu0":
            raise ValueError(f"{setting} sweeps mu0, not {param!r}")
        pi = 0.01 if setting == "setting1" else 0.05
        return MixtureModel(p=p, pi=pi, alt_means=ConstantMean(value))
    if setting == "setting3":
        if param != "pi":
            raise ValueError(f"setting3 sweeps pi, not {param!r}")
        return MixtureModel(p=p, pi=value, alt_means=UniformMean(2.0, 4.0))
    if setting == "custom":
        if base is None:
            raise ValueError("custom sweeps need a base model")
        base = base.with_(p=p)
        if param == "mu0":
            return base.with_(alt_means=ConstantMean(value))
        if param in ("pi", "null_mean", "null_sd", "alt_prior_sd"):
            return base.with_(**{param: value})
        raise ValueError(f"cannot sweep {param!r}")
    raise ValueError(f"unknown setting {setting!r}")


@dataclass(frozen=True)
class SweepSpec:
    setting: str
    grid: tuple
    p: int
    replications: int
    budget: ErrorBudget
    methods: tuple
    seed: int = 0
    param: str | None = None
    cap: int = DEFAULT_CAP
    ds_stages: int | None = None
    base_model: MixtureModel | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.param is None:
            if self.setting == "custom":
                raise ValueError("custom sweeps must name the swept parameter")
            object.__setattr__(self, "param", _DEFAULT_PARAM[self.setting])
        grid = tuple(float(g) for g in self.grid)
        if not grid:
            raise ValueError("grid must be nonempty")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be sorted")
        object.__setattr__(self, "grid", grid)
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.p < 1:
            raise ValueError("p must be positive")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        object.__setattr__(self, "methods", methods)

    def model_at(self, value: float) -> MixtureModel:
        return setting_model(self.setting, self.param, value, self.p, self.base_model)


@dataclass
class SweepResult:
    spec: SweepSpec
    reports: dict  # (method, grid value) -> MetricsReport
    runs: dict  # (method, grid value) -> list of RunMetrics, one per replication
    errors: dict  # (method, grid value) -> message
    provenance: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def data_driven_setup(x1, budget: ErrorBudget, tau20: float = 1.0):
    """Hyperparameters and cutoffs estimated from the stage-1 measurements of all locations.

    ``pi`` and the null mean and scale come from the empirical-null fit; the
    signal prior is centred at the mean of the top ``pi_hat`` fraction.
    """
    fit = fit_empirical_null(x1)
    hyper = PosteriorHyper(pi=fit.pi_hat, eta0=top_fraction_mean(x1, fit.pi_hat), tau20=tau20,
                           sigma2=fit.sigma0_hat ** 2, null_mean=fit.mu0_hat)
    return hyper, approx_thresholds(budget, fit.pi_hat)


def run_method(method: str, model: MixtureModel, stream, budget: ErrorBudget,
               cap: int = DEFAULT_CAP, ds_stages: int | None = None):
    if method == "DS":
        return run_distilled_sensing(stream, ds_stages, threshold=model.null_mean)
    if method.startswith("OR."):
        hyper = oracle_hyper(model)
        thr = approx_thresholds(budget, model.pi)
    elif method.startswith("DD."):
        hyper, thr = data_driven_setup(stream.observe(1, np.arange(stream.p)), budget)
    else:
        raise ValueError(f"unknown method {method!r}")
    engine = run_smart if method.endswith(".SM") else run_simple_thresholding
    return engine(stream, thr, hyper, cap=cap)


def _preflight(method: str, model: MixtureModel):
    """Raise early for combinations that cannot run at a grid point."""
    if method.startswith("OR."):
        oracle_hyper(model)
        approx_thresholds(ErrorBudget(0.5, 0.5), model.pi)


def _replicate(spec: SweepSpec, gi: int, rep: int, methods: tuple):
    value = spec.grid[gi]
    model = spec.model_at(value)
    seed = derive_seed(spec.seed, gi, rep)
    truth = sample_ground_truth(model, seed)
    stream = ModelStream(model, truth, seed)
    out = {}
    for m in methods:
        try:
            rec = run_method(m, model, stream, spec.budget, spec.cap, spec.ds_stages)
        except (ValueError, ArithmeticError) as exc:
            out[m] = exc
            continue
        out[m] = (per_run_metrics(truth, rec), stage_counts(truth, rec))
    return out


def resolve_threads(threads=None) -> int:
    """``None`` falls back to ``SMARTSEQ_THREADS`` then 1; ``"auto"`` uses the CPU count."""
    if threads is None:
        threads = os.environ.get("SMARTSEQ_THREADS", 1)
    if isinstance(threads, str):
        if threads.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    return int(threads)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def run_sweep(spec: SweepSpec, threads=1) -> SweepResult:
    """Run every requested method at every grid point over all replications.

    Failures at a (method, grid point) pair are recorded in ``errors`` and
    the rest of the sweep continues.  The result does not depend on the
    number of worker threads.
    """
    from . import __version__

    threads = resolve_threads(threads)
    errors = {}
    plan = []
    for gi, value in enumerate(spec.grid):
        model = spec.model_at(value)
        ok = []
        for m in spec.methods:
            try:
                _preflight(m, model)
            except (ValueError, ArithmeticError) as exc:
                errors[(m, value)] = str(exc)
            else:
                ok.append(m)
        if ok:
            plan.extend((gi, r, tuple(ok)) for r in range(spec.replications))

    results = _map(lambda gi, r, ms: _replicate(spec, gi, r, ms), plan, threads)

    collected = {}
    for (gi, r, ms), res in zip(plan, results):
        value = spec.grid[gi]
        for m in ms:
            key = (m, value)
            if key in errors:
                continue
            got = res[m]
            if isinstance(got, Exception):
                errors[key] = f"replication {r}: {got}"
                collected.pop(key, None)
                continue
            collected.setdefault(key, []).append(got)

    reports, runs = {}, {}
    for value in spec.grid:
        for m in spec.methods:
            key = (m, value)
            if key in errors or key not in collected:
                continue
            rm = [g[0] for g in collected[key]]
            reports[key] = ensemble_from_runs(rm, [g[1] for g in collected[key]])
            runs[key] = rm
    provenance = dict(seed=spec.seed, version=__version__, spec=spec_to_dict(spec))
    return SweepResult(spec=spec, reports=reports, runs=runs, errors=errors, provenance=provenance)


def spec_to_dict(spec: SweepSpec) -> dict:
    d = dict(setting=spec.setting, param=spec.param, grid=list(spec.grid), p=spec.p,
             replications=spec.replications, alpha=spec.budget.alpha, gamma=spec.budget.gamma,
             methods=list(spec.methods), seed=spec.seed, cap=spec.cap, ds_stages=spec.ds_stages)
    if spec.base_model is not None:
        d["base_model"] = model_to_dict(spec.base_model)
    return d


def model_to_dict(model: MixtureModel) -> dict:
    d = asdict(model)
    d["alt_means"] = dict(kind=type(model.alt_means).__name__, **asdict(model.alt_means))
    return d


# -- DS-matched comparison ----------------------------------------------------------

@dataclass
class ComparisonResult:
    ds: MetricsReport | None
    smart: MetricsReport | None
    levels: ErrorBudget | None  # error levels handed to SMART
    ds_stages: int
    aborted: bool = False
    flag: str | None = None

    @property
    def observation_ratio(self) -> float:
        """SMART's mean total observations over DS's."""
        if self.aborted:
            return math.nan
        return self.smart.total_obs / self.ds.total_obs


def _clip_level(v: float, floor: float) -> float:
    return min(max(v, floor), 1.0 - floor)


def run_ds_matched_comparison(model: MixtureModel, ds_stages: int = 10, replications: int = 20,
                              seed: int = 0, smart_hyper: PosteriorHyper | None = None,
                              cap: int = DEFAULT_CAP, level_floor: float = 1e-3,
                              threads=1) -> ComparisonResult:
    """Run DS, then SMART at the error rates DS achieved, on fresh seeds.

    DS keeps locations measuring above the null mean.  Its ensemble FPR and
    MDR (clipped to ``[level_floor, 1 - level_floor]``) become SMART's
    target levels.  SMART uses the model's oracle hyperparameters unless
    ``smart_hyper`` is given.
    """
    if ds_stages is None or ds_stages < 1:
        raise ValueError(f"distilled sensing needs at least one stage, got {ds_stages}")
    if replications < 1:
        raise ValueError("replications must be at least 1")
    threads = resolve_threads(threads)
    hyper = smart_hyper if smart_hyper is not None else oracle_hyper(model)

    def ds_rep(r):
        s = derive_seed(seed, 0, r)
        truth = sample_ground_truth(model, s)
        rec = run_distilled_sensing(ModelStream(model, truth, s), ds_stages, threshold=model.null_mean)
        return per_run_metrics(truth, rec), stage_counts(truth, rec)

    ds_runs = _map(ds_rep, [(r,) for r in range(replications)], threads)
    ds = ensemble_from_runs([g[0] for g in ds_runs], [g[1] for g in ds_runs])
    if sum(g[0].discoveries for g in ds_runs) == 0:
        return ComparisonResult(ds=ds, smart=None, levels=None, ds_stages=ds_stages, aborted=True,
                                flag="ds_no_discoveries")
    levels = ErrorBudget(_clip_level(ds.fpr, level_floor), _clip_level(ds.mdr, level_floor))
    thr = approx_thresholds(levels, hyper.pi)

    def sm_rep(r):
        s = derive_seed(seed, 1, r)
        truth = sample_ground_truth(model, s)
        rec = run_smart(ModelStream(model, truth, s), thr, hyper, cap=cap)
        return per_run_metrics(truth, rec), stage_counts(truth, rec)

    sm_runs = _map(sm_rep, [(r,) for r in range(replications)], threads)
    smart = ensemble_from_runs([g[0] for g in sm_runs], [g[1] for g in sm_runs])
    return ComparisonResult(ds=ds, smart=smart, levels=levels, ds_stages=ds_stages)
