"""Generative model for multistage sparse-signal experiments.

Each of ``p`` locations is a signal with probability ``pi``.  Signal means
are drawn around a location-specific centre ``eta_i`` with spread
``alt_prior_sd``; every measurement adds Gaussian noise with the null scale.
Null locations follow ``N(null_mean, null_sd**2)`` exactly.

Randomness is organised in substreams keyed on ``(seed, purpose, stage)``
so that a location's value at a given stage never depends on which other
locations are still being measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ConstantMean",
    "UniformMean",
    "ListMean",
    "MixtureModel",
    "GroundTruth",
    "LossSpec",
    "StageRecord",
    "DecisionRecord",
    "substream",
    "derive_seed",
    "sample_ground_truth",
    "sample_stage_observations",
    "weighted_loss",
    "stagewise_loss",
]


@dataclass(frozen=True)
class ConstantMean:
    value: float


@dataclass(frozen=True)
class UniformMean:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"uniform signal means need low < high, got ({self.low}, {self.high})")


@dataclass(frozen=True)
class ListMean:
    """Explicit signal centres, assigned to signals in index order (cycled)."""

    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("explicit signal mean list is empty")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


AltMeans = Union[ConstantMean, UniformMean, ListMean]


@dataclass(frozen=True)
class MixtureModel:
    p: int
    pi: float
    alt_means: AltMeans
    null_mean: float = 0.0
    null_sd: float = 1.0
    alt_prior_sd: float = 1.0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be a positive integer, got {self.p}")
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie strictly inside (0, 1), got {self.pi}")
        if not self.null_sd > 0:
            raise ValueError(f"null_sd must be positive, got {self.null_sd}")
        if not self.alt_prior_sd >= 0:
            raise ValueError(f"alt_prior_sd must be nonnegative, got {self.alt_prior_sd}")
        if isinstance(self.alt_means, (int, float)):
            object.__setattr__(self, "alt_means", ConstantMean(float(self.alt_means)))

    @property
    def signal_centre(self) -> float:
        """Average signal centre (the mean of the ``eta`` law)."""
        a = self.alt_means
        if isinstance(a, ConstantMean):
            return a.value
        if isinstance(a, UniformMean):
            return 0.5 * (a.low + a.high)
        return float(np.mean(a.values))

    def with_(self, **changes) -> "MixtureModel":
        params = dict(p=self.p, pi=self.pi, alt_means=self.alt_means, null_mean=self.null_mean,
                      null_sd=self.null_sd, alt_prior_sd=self.alt_prior_sd)
        params.update(changes)
        return MixtureModel(**params)


@dataclass(frozen=True)
class GroundTruth:
    theta: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=bool)
        mu = np.asarray(self.mu, dtype=float)
        if theta.shape != mu.shape:
            raise ValueError("theta and mu must have equal length")
        if np.any(mu[~theta] != 0):
            raise ValueError("mu must be zero at null locations")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mu", mu)

    @property
    def p(self) -> int:
        return self.theta.size

    @property
    def n_signals(self) -> int:
        return int(self.theta.sum())


@dataclass(frozen=True)
class LossSpec:
    lambda1: float
    lambda2: float
    c: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class StageRecord:
    """Locations that left the active set at one stage."""

    stage: int
    n_active: int
    discovered: np.ndarray
    eliminated: np.ndarray
    forced: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    lower_cut: float = float("nan")
    upper_cut: float = float("nan")


@dataclass
class DecisionRecord:
    delta: np.ndarray
    stop_times: np.ndarray
    stage_trace: list

    @property
    def p(self) -> int:
        return self.delta.size

    @property
    def cap_hits(self) -> int:
        return int(sum(len(s.forced) for s in self.stage_trace))

    @property
    def total_obs(self) -> int:
        return int(self.stop_times.sum())


# -- random substreams ------------------------------------------------------

def substream(seed, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)`` via SeedSequence hashing."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *key) -> int:
    """Deterministic 64-bit child seed for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


_TRUTH_KEY = 0
_NOISE_KEY = 1


def _draw_centres(alt: AltMeans, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(alt, ConstantMean):
        return np.full(n, alt.value, dtype=float)
    if isinstance(alt, UniformMean):
        return rng.uniform(alt.low, alt.high, size=n)
    return np.resize(np.asarray(alt.values, dtype=float), n)


def sample_ground_truth(model: MixtureModel, seed, theta: Sequence[bool] | None = None) -> GroundTruth:
    """Draw signal indicators and means.

    ``theta`` overrides the Bernoulli draw (useful for forcing all-null or
    hand-placed signals); the signal means are still drawn from the model.
    """
    rng = substream(seed, _TRUTH_KEY)
    drawn = rng.random(model.p) < model.pi
    theta = drawn if theta is None else np.asarray(theta, dtype=bool)
    if theta.shape != (model.p,):
        raise ValueError(f"theta must have length {model.p}")
    n = int(theta.sum())
    centres = _draw_centres(model.alt_means, n, rng)
    spread = rng.standard_normal(n)
    mu = np.zeros(model.p)
    mu[theta] = centres + model.alt_prior_sd * spread
    # a signal drawn at exactly zero would break mu == 0 <=> theta == 0
    mu[theta & (mu == 0)] = np.finfo(float).tiny
    return GroundTruth(theta=theta, mu=mu)


def sample_stage_observations(model: MixtureModel, truth: GroundTruth, active, seed, stage: int,
                              noise: bool = True) -> np.ndarray:
    """One measurement per active location at ``stage``.

    Null locations read ``null_mean + null_sd * z``; signals read
    ``mu_i + null_sd * z``.  ``z`` for location ``i`` depends only on
    ``(seed, stage, i)``.  ``noise=False`` returns the noiseless means.
    """
    active = np.asarray(active, dtype=np.int64)
    base = np.where(truth.theta, truth.mu, model.null_mean)
    if active.size == 0:
        return np.empty(0)
    if not noise:
        return base[active].copy()
    z = substream(seed, _NOISE_KEY, stage).standard_normal(model.p)
    return base[active] + model.null_sd * z[active]


# -- loss ---------------------------------------------------------------------

def _error_counts(theta, delta):
    theta = np.asarray(theta, dtype=bool)
    delta = np.asarray(delta, dtype=bool)
    if theta.shape != delta.shape:
        raise ValueError("truth and decisions must have equal length")
    return int(np.sum(~theta & delta)), int(np.sum(theta & ~delta))


def weighted_loss(truth: GroundTruth, record: DecisionRecord, loss: LossSpec) -> float:
    """``lambda1 * #FP + lambda2 * #FN + c * sum(N_i)``, evaluated exactly."""
    fp, fn = _error_counts(truth.theta, record.delta)
    n_total = int(np.sum(record.stop_times))
    total = Fraction(loss.lambda1) * fp + Fraction(loss.lambda2) * fn + Fraction(loss.c) * n_total
    return float(total)


def stagewise_loss(truth: GroundTruth, record: DecisionRecord, loss: LossSpec) -> float:
    """Same loss accumulated stage by stage over the decision trace.

    Each stage contributes the error costs of the locations that stopped
    there plus ``c`` times the number of locations measured at that stage.
    """
    theta = truth.theta
    delta = np.asarray(record.delta, dtype=bool)
    stop = np.asarray(record.stop_times)
    lam1, lam2, c = Fraction(loss.lambda1), Fraction(loss.lambda2), Fraction(loss.c)
    n_max = int(stop.max()) if stop.size else 0
    measured = np.bincount(stop, minlength=n_max + 2)[::-1].cumsum()[::-1]  # #{i: N_i >= j}
    total = Fraction(0)
    for rec in record.stage_trace:
        stopped = np.concatenate([rec.discovered, rec.eliminated, rec.forced]).astype(np.int64)
        fp = int(np.sum(~theta[stopped] & delta[stopped]))
        fn = int(np.sum(theta[stopped] & ~delta[stopped]))
        total += lam1 * fp + lam2 * fn + c * int(measured[rec.stage])
    return float(total)
