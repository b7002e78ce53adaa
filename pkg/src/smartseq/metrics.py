"""Error rates and measurement costs for single runs and replication ensembles.

Ensemble rates are ratios of summed counts (ratios of expectations), not
means of per-run proportions.  Standard errors come from the
delete-one-replication jackknife.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DecisionRecord, GroundTruth

__all__ = [
    "RunMetrics",
    "StageMetrics",
    "MetricsReport",
    "per_run_metrics",
    "ensemble_metrics",
    "ensemble_from_runs",
    "stagewise_metrics",
    "stage_counts",
    "stagewise_from_counts",
    "jackknife_ratio",
]


@dataclass(frozen=True)
class RunMetrics:
    fdp: float
    mdp: float
    fnp: float
    east: float
    total_obs: int
    false_pos: int
    discoveries: int
    false_neg: int
    signals: int
    non_discoveries: int
    p: int


@dataclass(frozen=True)
class StageMetrics:
    stage: int
    sfpr: float | None
    sfpr_se: float | None
    sfnr: float | None
    sfnr_se: float | None
    discoveries: int
    acceptances: int


@dataclass
class MetricsReport:
    fpr: float
    mdr: float
    fnr: float
    east: float
    total_obs: float  # mean over replications
    replications: int
    mc_se: dict
    fdp: float  # mean of per-run proportions
    mdp: float
    flags: list = field(default_factory=list)
    stagewise: list = field(default_factory=list)
    runs: list = field(default_factory=list)


def per_run_metrics(truth: GroundTruth, record: DecisionRecord) -> RunMetrics:
    theta = np.asarray(truth.theta, dtype=bool)
    delta = np.asarray(record.delta, dtype=bool)
    if theta.shape != delta.shape:
        raise ValueError("truth and decisions must have equal length")
    fp = int(np.sum(delta & ~theta))
    d = int(delta.sum())
    fn = int(np.sum(~delta & theta))
    s = int(theta.sum())
    nd = theta.size - d
    total = int(np.sum(record.stop_times))
    return RunMetrics(fdp=fp / max(d, 1), mdp=fn / max(s, 1), fnp=fn / max(nd, 1),
                      east=total / theta.size, total_obs=total, false_pos=fp, discoveries=d,
                      false_neg=fn, signals=s, non_discoveries=nd, p=theta.size)


def jackknife_ratio(num, den) -> tuple[float, float]:
    """Ratio of sums and its delete-one jackknife standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    N, D = num.sum(), den.sum()
    est = N / D if D > 0 else 0.0
    R = num.size
    if R < 2:
        return float(est), float("nan")
    dd = D - den
    loo = np.divide(N - num, dd, out=np.full(R, est), where=dd > 0)
    return float(est), float(np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def ensemble_from_runs(runs: list[RunMetrics], counts: list[np.ndarray] | None = None) -> MetricsReport:
    """Aggregate precomputed per-run summaries; ``counts`` adds the stage-wise breakdown."""
    if not runs:
        raise ValueError("need at least one run")
    col = lambda name: np.array([getattr(r, name) for r in runs], dtype=float)
    fp, d, fn, s, nd = col("false_pos"), col("discoveries"), col("false_neg"), col("signals"), col("non_discoveries")
    obs, p = col("total_obs"), col("p")
    fpr, fpr_se = jackknife_ratio(fp, d)
    mdr, mdr_se = jackknife_ratio(fn, s)
    fnr, fnr_se = jackknife_ratio(fn, nd)
    east, east_se = jackknife_ratio(obs, p)
    R = len(runs)
    tot_se = float(obs.std(ddof=1) / np.sqrt(R)) if R > 1 else float("nan")
    flags = []
    if d.sum() == 0:
        flags.append("no_discoveries")
    if s.sum() == 0:
        flags.append("no_signals")
    report = MetricsReport(fpr=fpr, mdr=mdr, fnr=fnr, east=east, total_obs=float(obs.mean()), replications=R,
                           mc_se=dict(fpr=fpr_se, mdr=mdr_se, fnr=fnr_se, east=east_se, total_obs=tot_se),
                           fdp=float(col("fdp").mean()), mdp=float(col("mdp").mean()), flags=flags, runs=list(runs))
    if counts is not None:
        report.stagewise, omitted = stagewise_from_counts(counts)
        if omitted:
            report.flags.append("stages_without_decisions:" + ",".join(map(str, omitted)))
    return report


def ensemble_metrics(runs: list[tuple[GroundTruth, DecisionRecord]]) -> MetricsReport:
    if not runs:
        raise ValueError("need at least one run")
    return ensemble_from_runs([per_run_metrics(t, r) for t, r in runs],
                              [stage_counts(t, r) for t, r in runs])


def stage_counts(truth: GroundTruth, record: DecisionRecord) -> np.ndarray:
    """Per-stage rows of (false discoveries, discoveries, false acceptances, acceptances)."""
    n_stages = max((rec.stage for rec in record.stage_trace), default=0)
    out = np.zeros((n_stages, 4), dtype=np.int64)
    theta = truth.theta
    delta = np.asarray(record.delta, dtype=bool)
    for rec in record.stage_trace:
        idx = np.concatenate([rec.discovered, rec.eliminated, rec.forced]).astype(np.int64)
        dd, th = delta[idx], theta[idx]
        out[rec.stage - 1] = (np.sum(dd & ~th), np.sum(dd), np.sum(~dd & th), np.sum(~dd))
    return out


def stagewise_from_counts(counts: list[np.ndarray]) -> tuple[list[StageMetrics], list[int]]:
    n_stages = max((c.shape[0] for c in counts), default=0)
    stacked = np.zeros((len(counts), n_stages, 4))
    for i, c in enumerate(counts):
        stacked[i, :c.shape[0]] = c
    stages, omitted = [], []
    for j in range(n_stages):
        c = stacked[:, j, :]
        n_disc, n_acc = int(c[:, 1].sum()), int(c[:, 3].sum())
        if n_disc + n_acc == 0:
            omitted.append(j + 1)
            continue
        sfpr = sfpr_se = sfnr = sfnr_se = None
        if n_disc:
            sfpr, sfpr_se = jackknife_ratio(c[:, 0], c[:, 1])
        if n_acc:
            sfnr, sfnr_se = jackknife_ratio(c[:, 2], c[:, 3])
        stages.append(StageMetrics(stage=j + 1, sfpr=sfpr, sfpr_se=sfpr_se, sfnr=sfnr, sfnr_se=sfnr_se,
                                   discoveries=n_disc, acceptances=n_acc))
    return stages, omitted


def stagewise_metrics(runs) -> tuple[list[StageMetrics], list[int]]:
    """Stage-wise false positive and false non-discovery rates.

    Decisions forced at the stage cap count toward the cap stage, so the
    discovery-weighted average of stage rates reproduces the ensemble FPR.
    Returns the per-stage metrics and the stages that had no decisions.
    """
    return stagewise_from_counts([stage_counts(t, r) for t, r in runs])
