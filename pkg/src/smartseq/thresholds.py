"""Cutoffs on the null-posterior scale and their likelihood-ratio images.

Besides the closed-form cutoffs this module calibrates exact-level cutoffs
for the simple thresholding rule by Monte Carlo, and evaluates the
information limits on the average number of measurements per location.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import jackknife_ratio
from .model import MixtureModel, sample_ground_truth, sample_stage_observations, derive_seed
from .posterior import oracle_hyper, recursion_step, t_or_from_lr

__all__ = [
    "ThresholdPair",
    "ErrorBudget",
    "approx_thresholds",
    "stringent_upper",
    "unstringent_upper",
    "wald_boundaries",
    "kl_divergence_normal",
    "LimitBounds",
    "limit_bounds",
    "MCConfig",
    "InfeasibleBudgetError",
    "TrajectoryBank",
    "simulate_trajectories",
    "CalibrationResult",
    "calibrate_oracle_thresholds",
]


@dataclass(frozen=True)
class ThresholdPair:
    """Lower/upper cutoffs ``t_l < t_u`` and likelihood-ratio boundaries ``A < B``.

    A location is declared a signal once its null posterior drops to
    ``t_l`` (likelihood ratio at least ``B``) and a null once it reaches
    ``t_u`` (likelihood ratio at most ``A``).
    """

    t_l: float
    t_u: float
    A: float
    B: float
    pi: float

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie strictly inside (0, 1), got {self.pi}")
        if not 0.0 <= self.t_l < self.t_u <= 1.0:
            raise ValueError(f"need 0 <= t_l < t_u <= 1, got ({self.t_l}, {self.t_u})")

    @classmethod
    def from_cutoffs(cls, t_l: float, t_u: float, pi: float) -> "ThresholdPair":
        odds = (1.0 - pi) / pi
        A = odds * (1.0 - t_u) / t_u
        B = odds * (1.0 - t_l) / t_l if t_l > 0 else math.inf
        return cls(t_l=float(t_l), t_u=float(t_u), A=A, B=B, pi=float(pi))

    @classmethod
    def from_lr(cls, A: float, B: float, pi: float) -> "ThresholdPair":
        if not 0 <= A < B:
            raise ValueError(f"need 0 <= A < B, got ({A}, {B})")
        q = 1.0 - pi
        t_u = q / (q + pi * A)
        t_l = q / (q + pi * B) if math.isfinite(B) else 0.0
        return cls(t_l=t_l, t_u=t_u, A=float(A), B=float(B), pi=float(pi))


@dataclass(frozen=True)
class ErrorBudget:
    alpha: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "gamma"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")


def stringent_upper(budget: ErrorBudget, pi: float) -> float:
    """Conservative upper cutoff ``(1-pi)/(pi*gamma + 1-pi)``."""
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must lie strictly inside (0, 1), got {pi}")
    return (1.0 - pi) / (pi * budget.gamma + 1.0 - pi)


def approx_thresholds(budget: ErrorBudget, pi: float) -> ThresholdPair:
    """Closed-form conservative cutoffs: ``t_l = alpha``, ``t_u = (1-pi)/(pi*gamma + 1-pi)``.

    Raises ``ValueError`` when ``alpha`` is so large that ``t_l >= t_u``.
    """
    t_u = stringent_upper(budget, pi)
    if not budget.alpha < t_u:
        raise ValueError(f"alpha={budget.alpha} reaches the upper cutoff {t_u:.6g}; no valid pair")
    return ThresholdPair.from_cutoffs(budget.alpha, t_u, pi)


def unstringent_upper(budget: ErrorBudget, pi: float) -> float:
    """Upper cutoff obtained by solving the overshoot-free MDR equation directly."""
    a, g = budget.alpha, budget.gamma
    return (pi * a * g + 1.0 - pi - a) / (pi * g + 1.0 - pi - a)


def wald_boundaries(alpha_prime: float, gamma_prime: float) -> tuple[float, float]:
    """Wald's log-likelihood-ratio boundaries for type I/II error rates."""
    for v in (alpha_prime, gamma_prime):
        if not 0.0 < v < 1.0:
            raise ValueError(f"error rates must lie strictly inside (0, 1), got {v}")
    a = math.log(gamma_prime / (1.0 - alpha_prime))
    b = math.log((1.0 - gamma_prime) / alpha_prime)
    return a, b


def kl_divergence_normal(mu0, sd0, mu1, sd1) -> tuple[float, float, float]:
    """``(D(F0||F1), D(F1||F0), max of the two)`` for two normal laws."""
    if not (sd0 > 0 and sd1 > 0):
        raise ValueError("standard deviations must be positive")

    def kl(ma, sa, mb, sb):
        return math.log(sb / sa) + (sa * sa + (ma - mb) ** 2) / (2.0 * sb * sb) - 0.5

    d01 = kl(mu0, sd0, mu1, sd1)
    d10 = kl(mu1, sd1, mu0, sd0)
    return d01, d10, max(d01, d10)


@dataclass(frozen=True)
class LimitBounds:
    lower_tau: float | None  # None when the lower bound does not apply
    upper_tau: float
    lower_applicable: bool


def limit_bounds(pi: float, d_kl: float, eta: float, f_p: float, epsilon: float,
                 d_min: float | None = None) -> LimitBounds:
    """Lower and upper bounds on the average number of measurements per location.

    ``lower_tau = log(1/(4 eta)) / d_kl`` (only for ``pi < 1/3``);
    ``upper_tau = (1 + epsilon) log f_p / d_min`` where ``d_min`` is the
    smaller directed divergence (defaults to ``d_kl``).
    """
    if not 0 < eta <= 0.5:
        raise ValueError(f"eta must lie in (0, 1/2], got {eta}")
    if not f_p > 1:
        raise ValueError(f"f_p must exceed 1, got {f_p}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not d_kl > 0:
        raise ValueError(f"d_kl must be positive, got {d_kl}")
    d_min = d_kl if d_min is None else d_min
    upper = (1.0 + epsilon) * math.log(f_p) / d_min
    if pi >= 1.0 / 3.0:
        return LimitBounds(lower_tau=None, upper_tau=upper, lower_applicable=False)
    lower = math.log(1.0 / (4.0 * eta)) / d_kl
    return LimitBounds(lower_tau=lower, upper_tau=upper, lower_applicable=True)


# -- Monte Carlo calibration -----------------------------------------------------

@dataclass(frozen=True)
class MCConfig:
    p: int = 10_000
    replications: int = 50
    seed: int = 0
    tol: float = 0.005
    cap: int = 100
    threads: int = 1
    iterations: int = 40
    max_tl_ratio: float = 1000.0  # search t_l within [alpha, max_tl_ratio * alpha]


class InfeasibleBudgetError(ValueError):
    def __init__(self, binding: str, message: str):
        super().__init__(message)
        self.binding = binding


@dataclass
class TrajectoryBank:
    """Null-posterior paths of many locations, cut where they leave ``(lo, hi)``.

    Any cutoff pair inside ``[lo, hi]`` stops every location no later than
    the end of its stored path, so a single simulation answers every such
    pair with common random numbers.
    """

    values: np.ndarray
    offsets: np.ndarray
    lengths: np.ndarray
    theta: np.ndarray
    replicate: np.ndarray
    lo: float
    hi: float
    cap: int
    n_replications: int

    def fpr_given_upper(self, t_u: float):
        """Return ``t_l -> FPR`` at fixed ``t_u``, reusing one pass over the paths.

        A path is discovered iff its minimum before the first upper crossing
        is at most ``t_l``, or it never crosses and its last value is at most
        the midpoint (the cap rule).
        """
        if not self.lo < t_u <= self.hi:
            raise ValueError(f"t_u={t_u} falls outside the simulated band")
        v = self.values
        big = np.iinfo(np.int64).max
        pos = np.arange(v.size, dtype=np.int64)
        first_up = np.minimum.reduceat(np.where(v >= t_u, pos, big), self.offsets)
        never_up = first_up == big
        path = np.repeat(np.arange(self.lengths.size), self.lengths)
        m = np.minimum.reduceat(np.where(pos < first_up[path], v, np.inf), self.offsets)
        last = v[self.offsets + self.lengths - 1]
        null = ~self.theta
        R = self.n_replications

        def fpr(t_l: float) -> float:
            if not self.lo <= t_l < t_u:
                raise ValueError(f"t_l={t_l} falls outside [{self.lo}, {t_u})")
            delta = (m <= t_l) | (never_up & (last <= 0.5 * (t_l + t_u)))
            fp = np.bincount(self.replicate, weights=delta & null, minlength=R).sum()
            d = np.bincount(self.replicate, weights=delta, minlength=R).sum()
            return fp / d if d > 0 else 0.0

        return fpr

    def evaluate(self, t_l: float, t_u: float) -> dict:
        if not (self.lo <= t_l < t_u <= self.hi):
            raise ValueError(f"cutoffs ({t_l}, {t_u}) fall outside the simulated band [{self.lo}, {self.hi}]")
        v = self.values
        crossed = (v <= t_l) | (v >= t_u)
        big = np.iinfo(np.int64).max
        pos = np.where(crossed, np.arange(v.size, dtype=np.int64), big)
        first = np.minimum.reduceat(pos, self.offsets)
        hit = first != big
        last = self.offsets + self.lengths - 1
        where = np.where(hit, first, last)
        t_stop = v[where]
        delta = np.where(hit, t_stop <= t_l, t_stop <= 0.5 * (t_l + t_u))
        stop = np.where(hit, first - self.offsets + 1, self.cap)
        th = self.theta
        R = self.n_replications
        fp = np.bincount(self.replicate, weights=delta & ~th, minlength=R)
        disc = np.bincount(self.replicate, weights=delta, minlength=R)
        fn = np.bincount(self.replicate, weights=~delta & th, minlength=R)
        sig = np.bincount(self.replicate, weights=th, minlength=R)
        obs = np.bincount(self.replicate, weights=stop, minlength=R)
        fpr, fpr_se = jackknife_ratio(fp, disc)
        mdr, mdr_se = jackknife_ratio(fn, sig)
        return dict(fpr=fpr, fpr_se=fpr_se, mdr=mdr, mdr_se=mdr_se,
                    east=obs.sum() / th.size, cap_hits=int(np.sum(~hit)))


def _bank_replication(model, hyper, seed, lo, hi, cap):
    truth = sample_ground_truth(model, seed)
    p = model.p
    log_lr = np.zeros(p)
    eta = np.broadcast_to(np.asarray(hyper.eta0, float), (p,)).copy()
    tau2 = np.full(p, float(hyper.tau20))
    active = np.arange(p)
    idx_parts, val_parts = [], []
    for stage in range(1, cap + 1):
        if active.size == 0:
            break
        x = sample_stage_observations(model, truth, active, seed, stage)
        log_lr[active], eta[active], tau2[active] = recursion_step(
            log_lr[active], eta[active], tau2[active], x, hyper.sigma2, hyper.null_mean)
        t = t_or_from_lr(log_lr[active], hyper.pi)
        idx_parts.append(active)
        val_parts.append(t)
        active = active[(t > lo) & (t < hi)]
    idx = np.concatenate(idx_parts)
    vals = np.concatenate(val_parts)
    order = np.argsort(idx, kind="stable")
    lengths = np.bincount(idx, minlength=p)
    return vals[order], lengths, truth.theta


def simulate_trajectories(model: MixtureModel, mc: MCConfig, lo: float, hi: float) -> TrajectoryBank:
    """Simulate oracle null-posterior paths for ``mc.replications`` fresh experiments of size ``mc.p``."""
    sim_model = model.with_(p=mc.p)
    hyper = oracle_hyper(sim_model)
    seeds = [derive_seed(mc.seed, r) for r in range(mc.replications)]

    def one(s):
        return _bank_replication(sim_model, hyper, s, lo, hi, mc.cap)

    if mc.threads > 1:
        with ThreadPoolExecutor(mc.threads) as ex:
            parts = list(ex.map(one, seeds))
    else:
        parts = [one(s) for s in seeds]
    values = np.concatenate([v for v, _, _ in parts])
    lengths = np.concatenate([n for _, n, _ in parts])
    theta = np.concatenate([t for _, _, t in parts])
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    replicate = np.repeat(np.arange(mc.replications), mc.p)
    return TrajectoryBank(values=values, offsets=offsets, lengths=lengths, theta=theta,
                          replicate=replicate, lo=lo, hi=hi, cap=mc.cap, n_replications=mc.replications)


@dataclass
class CalibrationResult:
    thresholds: ThresholdPair
    achieved_fpr: float
    achieved_mdr: float
    fpr_se: float
    mdr_se: float
    q11: float
    converged: bool
    mc: MCConfig = field(default_factory=MCConfig)


def _bisect_log(pred, lo, hi, iterations):
    """Largest x in [lo, hi] with pred(x) true, assuming pred is true at lo."""
    a, b = math.log(lo), math.log(hi)
    for _ in range(iterations):
        m = 0.5 * (a + b)
        if pred(math.exp(m)):
            a = m
        else:
            b = m
    return math.exp(a)


def calibrate_oracle_thresholds(model: MixtureModel, budget: ErrorBudget, mc: MCConfig = MCConfig()) -> CalibrationResult:
    """Cutoffs at which simple thresholding hits the FPR and MDR targets.

    For a fixed upper cutoff, the lower cutoff is the largest value whose
    FPR stays at or below ``alpha`` (FPR is non-decreasing in ``t_l``).
    The upper cutoff is then the smallest value whose MDR stays at or
    below ``gamma``.  Every evaluation reuses the same simulated paths.
    """
    alpha, gamma = budget.alpha, budget.gamma
    approx = approx_thresholds(budget, model.pi)
    lo = alpha
    hi = 1.0 - (1.0 - approx.t_u) / 4.0
    bank = simulate_trajectories(model, mc, lo, hi)

    q11 = float(np.mean(~bank.theta))
    if not q11 > alpha:
        raise InfeasibleBudgetError("FPR", f"alpha={alpha} is not below the reject-everything FPR {q11:.4g}")

    # nextafter keeps rounding in the product from pushing t_l past ratio * alpha
    tl_cap = math.nextafter(min(mc.max_tl_ratio * alpha, 0.999), 0.0)

    def tl_for(t_u):
        top = min(tl_cap, t_u * (1.0 - 1e-9))
        fpr = bank.fpr_given_upper(t_u)
        if fpr(top) <= alpha:
            return top
        return _bisect_log(lambda t: fpr(t) <= alpha, lo, top, mc.iterations)

    def mdr_ok(s):  # s = 1 - t_u
        t_u = 1.0 - s
        return bank.evaluate(tl_for(t_u), t_u)["mdr"] <= gamma

    s_small, s_big = 1.0 - hi, 0.5
    if not mdr_ok(s_small):
        raise InfeasibleBudgetError("MDR", f"no upper cutoff up to {hi:.6g} keeps MDR <= {gamma}")
    s = s_big if mdr_ok(s_big) else _bisect_log(mdr_ok, s_small, s_big, mc.iterations)
    t_u = 1.0 - s
    t_l = tl_for(t_u)
    res = bank.evaluate(t_l, t_u)
    converged = abs(res["fpr"] - alpha) <= mc.tol and abs(res["mdr"] - gamma) <= mc.tol
    return CalibrationResult(thresholds=ThresholdPair.from_cutoffs(t_l, t_u, model.pi),
                             achieved_fpr=res["fpr"], achieved_mdr=res["mdr"],
                             fpr_se=res["fpr_se"], mdr_se=res["mdr_se"], q11=q11,
                             converged=converged, mc=mc)
