"""Multistage decision engines.

All three engines measure every active location once per stage, retire
some locations with a terminal decision and carry the rest forward.

* :func:`run_smart` ranks the null posteriors of the active set and picks
  cutoffs from running averages of the ranked values.
* :func:`run_simple_thresholding` runs independent per-location tests
  with fixed cutoffs.
* :func:`run_distilled_sensing` keeps locations whose current
  measurement is positive and declares the survivors signals.

Observations come from any object with a ``p`` attribute and an
``observe(stage, active) -> ndarray`` method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DecisionRecord, GroundTruth, MixtureModel, StageRecord, sample_stage_observations
from .posterior import PosteriorHyper, recursion_step, t_or_from_lr
from .thresholds import ThresholdPair

__all__ = [
    "DEFAULT_CAP",
    "StreamExhausted",
    "TruncatedRunError",
    "ModelStream",
    "RecordedStream",
    "PosteriorBank",
    "smart_discovery_step",
    "smart_elimination_step",
    "run_smart",
    "run_simple_thresholding",
    "run_distilled_sensing",
    "ds_default_stages",
]

DEFAULT_CAP = 100

_EMPTY = np.empty(0, dtype=np.int64)


class StreamExhausted(LookupError):
    pass


class TruncatedRunError(RuntimeError):
    """The observation source ran dry before the procedure finished."""

    def __init__(self, message, partial: DecisionRecord):
        super().__init__(message)
        self.partial = partial


@dataclass
class ModelStream:
    """Fresh draws from a mixture model; reproducible per ``(seed, stage, location)``."""

    model: MixtureModel
    truth: GroundTruth
    seed: int
    noise: bool = True

    @property
    def p(self) -> int:
        return self.model.p

    def observe(self, stage: int, active: np.ndarray) -> np.ndarray:
        return sample_stage_observations(self.model, self.truth, active, self.seed, stage, noise=self.noise)


class RecordedStream:
    """Replays a fixed ``(n_stages, p)`` table of measurements."""

    def __init__(self, values):
        self.values = np.atleast_2d(np.asarray(values, dtype=float))

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def observe(self, stage: int, active: np.ndarray) -> np.ndarray:
        if stage > self.values.shape[0]:
            raise StreamExhausted(f"recorded stream has only {self.values.shape[0]} stages")
        return self.values[stage - 1, active]


class PosteriorBank:
    """Vectorised recursion state for all ``p`` locations."""

    def __init__(self, hyper: PosteriorHyper, p: int):
        self.hyper = hyper
        self.log_lr = np.zeros(p)
        self.eta = np.broadcast_to(np.asarray(hyper.eta0, dtype=float), (p,)).copy()
        self.tau2 = np.full(p, float(hyper.tau20))

    def update(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        h = self.hyper
        self.log_lr[idx], self.eta[idx], self.tau2[idx] = recursion_step(
            self.log_lr[idx], self.eta[idx], self.tau2[idx], x, h.sigma2, h.null_mean)
        return self.t_or(idx)

    def t_or(self, idx: np.ndarray) -> np.ndarray:
        return np.atleast_1d(t_or_from_lr(self.log_lr[idx], self.hyper.pi))


def _check_sorted(sorted_T):
    t = np.asarray(sorted_T, dtype=float)
    if t.ndim != 1:
        raise ValueError("expected a one-dimensional sequence")
    if np.any(np.diff(t) < 0):
        raise ValueError("statistics must be sorted in ascending order")
    return t


def _discovery_count(t_asc: np.ndarray, t_l: float) -> int:
    r = np.arange(1, t_asc.size + 1)
    ok = np.flatnonzero(np.cumsum(t_asc) <= r * t_l)
    return int(ok[-1]) + 1 if ok.size else 0


def _elimination_count(t_asc: np.ndarray, t_u: float) -> int:
    r = np.arange(1, t_asc.size + 1)
    ok = np.flatnonzero(np.cumsum(t_asc[::-1]) >= r * t_u)
    return int(ok[-1]) + 1 if ok.size else 0


def smart_discovery_step(sorted_T, t_l_tilde: float) -> tuple[int, float]:
    """Largest ``k`` whose ``k`` smallest statistics average at most ``t_l_tilde``.

    Returns ``(k, T_(k))``; the cut is NaN when ``k == 0``.
    """
    t = _check_sorted(sorted_T)
    k = _discovery_count(t, t_l_tilde)
    return k, (float(t[k - 1]) if k else math.nan)


def smart_elimination_step(sorted_T, t_u_tilde: float) -> tuple[int, float]:
    """Largest ``k`` whose ``k`` largest statistics average at least ``t_u_tilde``.

    Returns ``(k, T_(n-k+1))``; the cut is NaN when ``k == 0``.
    """
    t = _check_sorted(sorted_T)
    k = _elimination_count(t, t_u_tilde)
    return k, (float(t[t.size - k]) if k else math.nan)


def _observe(source, stage, active, delta, stop, trace):
    try:
        return np.asarray(source.observe(stage, active), dtype=float)
    except StreamExhausted as exc:
        partial = DecisionRecord(delta=delta.copy(), stop_times=stop.copy(), stage_trace=list(trace))
        raise TruncatedRunError(f"observation source exhausted at stage {stage}", partial) from exc


def _force(active, t, thresholds, stage, delta, stop):
    mid = 0.5 * (thresholds.t_l + thresholds.t_u)
    delta[active] = t <= mid
    stop[active] = stage
    return active


def run_smart(source, thresholds: ThresholdPair, hyper: PosteriorHyper, cap: int = DEFAULT_CAP) -> DecisionRecord:
    """Ranking-and-running-average multistage procedure.

    At each stage the active null posteriors are sorted (ties by location
    index).  Discovery takes the longest ascending prefix whose mean is at
    most ``t_l``; elimination then takes the longest descending prefix of
    the remaining locations whose mean is at least ``t_u``.  Locations
    still active after ``cap`` stages are decided at the midpoint cutoff.
    """
    p = source.p
    bank = PosteriorBank(hyper, p)
    delta = np.zeros(p, dtype=bool)
    stop = np.zeros(p, dtype=np.int64)
    trace = []
    active = np.arange(p, dtype=np.int64)
    for stage in range(1, cap + 1):
        if active.size == 0:
            break
        x = _observe(source, stage, active, delta, stop, trace)
        t = bank.update(active, x)
        order = np.lexsort((active, t))
        t_asc = t[order]
        k_s = _discovery_count(t_asc, thresholds.t_l)
        k_e = _elimination_count(t_asc[k_s:], thresholds.t_u)
        n = active.size
        disc = np.sort(active[order[:k_s]])
        elim = np.sort(active[order[n - k_e:]]) if k_e else _EMPTY
        rec = StageRecord(stage=stage, n_active=n, discovered=disc, eliminated=elim,
                          lower_cut=float(t_asc[k_s - 1]) if k_s else math.nan,
                          upper_cut=float(t_asc[n - k_e]) if k_e else math.nan)
        delta[disc] = True
        stop[disc] = stage
        stop[elim] = stage
        rest = order[k_s:n - k_e]
        active_next = active[np.sort(rest)]
        if stage == cap and active_next.size:
            rec.forced = _force(active_next, bank.t_or(active_next), thresholds, stage, delta, stop)
            active_next = _EMPTY
        trace.append(rec)
        active = active_next
    return DecisionRecord(delta=delta.astype(np.int8), stop_times=stop, stage_trace=trace)


def run_simple_thresholding(source, thresholds: ThresholdPair, hyper: PosteriorHyper,
                            cap: int = DEFAULT_CAP) -> DecisionRecord:
    """Independent per-location tests: stop once ``T <= t_l`` (signal) or ``T >= t_u`` (null)."""
    p = source.p
    bank = PosteriorBank(hyper, p)
    delta = np.zeros(p, dtype=bool)
    stop = np.zeros(p, dtype=np.int64)
    trace = []
    active = np.arange(p, dtype=np.int64)
    for stage in range(1, cap + 1):
        if active.size == 0:
            break
        x = _observe(source, stage, active, delta, stop, trace)
        t = bank.update(active, x)
        lo = t <= thresholds.t_l
        hi = t >= thresholds.t_u
        disc, elim = active[lo], active[hi]
        rec = StageRecord(stage=stage, n_active=active.size, discovered=disc, eliminated=elim,
                          lower_cut=thresholds.t_l, upper_cut=thresholds.t_u)
        delta[disc] = True
        stop[disc] = stage
        stop[elim] = stage
        keep = ~(lo | hi)
        active_next = active[keep]
        if stage == cap and active_next.size:
            rec.forced = _force(active_next, t[keep], thresholds, stage, delta, stop)
            active_next = _EMPTY
        trace.append(rec)
        active = active_next
    return DecisionRecord(delta=delta.astype(np.int8), stop_times=stop, stage_trace=trace)


def ds_default_stages(p: int) -> int:
    """``max(ceil(log2(ln p)), 0) + 2``."""
    if p < 2:
        return 2
    return max(math.ceil(math.log2(math.log(p))), 0) + 2


def run_distilled_sensing(source, stages: int | None = None, threshold: float = 0.0) -> DecisionRecord:
    """Keep locations whose measurement exceeds ``threshold``; survivors are signals.

    A location eliminated at stage ``j`` has stopping time ``j``; survivors
    stop at the final stage.  Runs end early if nothing survives.
    """
    p = source.p
    if stages is None:
        stages = ds_default_stages(p)
    if stages < 1:
        raise ValueError(f"distilled sensing needs at least one stage, got {stages}")
    delta = np.zeros(p, dtype=bool)
    stop = np.zeros(p, dtype=np.int64)
    trace = []
    active = np.arange(p, dtype=np.int64)
    for stage in range(1, stages + 1):
        if active.size == 0:
            break
        x = _observe(source, stage, active, delta, stop, trace)
        keep = x > threshold
        elim = active[~keep]
        stop[elim] = stage
        rec = StageRecord(stage=stage, n_active=active.size, discovered=_EMPTY, eliminated=elim,
                          lower_cut=math.nan, upper_cut=threshold)
        active = active[keep]
        if stage == stages:
            rec.discovered = active
            delta[active] = True
            stop[active] = stage
            active = _EMPTY
        trace.append(rec)
    return DecisionRecord(delta=delta.astype(np.int8), stop_times=stop, stage_trace=trace)
