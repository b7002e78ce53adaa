"""Posterior probability that a location is null, updated one measurement at a time.

Under a signal the location mean has a conjugate normal prior
``N(eta, tau2)``; under the null the measurements are ``N(null_mean,
sigma2)``.  The sequential update keeps the running log likelihood ratio
``log L = log f(x | signal) - log f(x | null)`` and reads the null
posterior off it through ``T = 1 / (1 + pi / (1 - pi) * L)``, so repeated
updates never get stuck at 0 or 1 through rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .model import ConstantMean, MixtureModel

__all__ = [
    "T_FLOOR",
    "DegenerateUpdateError",
    "PosteriorHyper",
    "LocationState",
    "init_state",
    "update_state",
    "batch_posterior",
    "t_or_from_lr",
    "lr_from_t_or",
    "recursion_step",
    "top_fraction_mean",
    "oracle_hyper",
]

T_FLOOR = 1e-15

_LOG_2PI = np.log(2.0 * np.pi)


class DegenerateUpdateError(ArithmeticError):
    """Both predictive densities vanished, so the update is undefined."""


@dataclass(frozen=True)
class PosteriorHyper:
    """Hyperparameters shared by every location's recursion.

    ``eta0`` may be a scalar or an array with one prior centre per location.
    ``tau20 = 0`` gives a point-mass alternative (simple-vs-simple SPRT).
    """

    pi: float
    eta0: float | np.ndarray
    tau20: float
    sigma2: float
    null_mean: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie strictly inside (0, 1), got {self.pi}")
        if not self.tau20 >= 0:
            raise ValueError(f"tau20 must be nonnegative, got {self.tau20}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class LocationState:
    t_or: float
    eta: float
    tau2: float
    n_obs: int
    log_lr: float
    pi: float


def _log_normal_pdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def t_or_from_lr(log_lr, pi):
    """Null posterior from the log likelihood ratio, clamped to ``[T_FLOOR, 1 - T_FLOOR]``."""
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must lie strictly inside (0, 1), got {pi}")
    t = expit(-(np.log(pi) - np.log1p(-pi) + np.asarray(log_lr, dtype=float)))
    t = np.clip(t, T_FLOOR, 1.0 - T_FLOOR)
    return float(t) if np.ndim(t) == 0 else t


def lr_from_t_or(t_or, pi):
    """Inverse of :func:`t_or_from_lr`: the log likelihood ratio implied by ``t_or``."""
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must lie strictly inside (0, 1), got {pi}")
    t = np.asarray(t_or, dtype=float)
    if np.any((t <= 0.0) | (t >= 1.0)):
        raise ValueError("t_or must lie strictly inside (0, 1) to map back to a likelihood ratio")
    out = np.log1p(-t) - np.log(t) + np.log1p(-pi) - np.log(pi)
    return float(out) if out.ndim == 0 else out


def recursion_step(log_lr, eta, tau2, x, sigma2, null_mean=0.0):
    """One conjugate update, elementwise over arrays.

    The signal predictive density uses the prior *before* absorbing ``x``.
    Returns ``(log_lr, eta, tau2)`` after the update.
    """
    with np.errstate(invalid="ignore"):
        log_f0 = _log_normal_pdf(x, null_mean, sigma2)
        log_f1 = _log_normal_pdf(x, eta, tau2 + sigma2)
        incr = log_f1 - log_f0
    if not np.all(np.isfinite(incr)):
        raise DegenerateUpdateError("predictive densities are both zero or undefined for this observation")
    w = tau2 / (tau2 + sigma2)
    eta_new = w * x + (1.0 - w) * eta
    tau2_new = tau2 * sigma2 / (tau2 + sigma2)
    return log_lr + incr, eta_new, tau2_new


def init_state(pi_hat: float, eta0: float, tau20: float) -> LocationState:
    if not 0.0 < pi_hat < 1.0:
        raise ValueError(f"pi_hat must lie strictly inside (0, 1), got {pi_hat}")
    if not tau20 >= 0:
        raise ValueError(f"tau20 must be nonnegative, got {tau20}")
    return LocationState(t_or=t_or_from_lr(0.0, pi_hat), eta=float(eta0), tau2=float(tau20),
                         n_obs=0, log_lr=0.0, pi=float(pi_hat))


def update_state(state: LocationState, x: float, sigma2_hat: float, null_mean: float = 0.0) -> LocationState:
    if not sigma2_hat > 0:
        raise ValueError(f"sigma2_hat must be positive, got {sigma2_hat}")
    log_lr, eta, tau2 = recursion_step(state.log_lr, state.eta, state.tau2, float(x), sigma2_hat, null_mean)
    return replace(state, t_or=t_or_from_lr(log_lr, state.pi), eta=float(eta), tau2=float(tau2),
                   n_obs=state.n_obs + 1, log_lr=float(log_lr))


def batch_posterior(prior_pi, eta0, tau20, observations, sigma2, null_mean=0.0) -> float:
    """Null posterior from the whole observation block at once.

    Uses the closed-form marginal of ``n`` measurements under the
    alternative, ``N(eta0 * 1, sigma2 * I + tau20 * 11')``, against the
    product of null densities.  No recursion is involved.
    """
    x = np.asarray(observations, dtype=float)
    if x.size == 0:
        return 1.0 - prior_pi
    n = x.size
    r = x - eta0
    s, q = r.sum(), np.dot(r, r)
    log_det = n * np.log(sigma2) + np.log1p(n * tau20 / sigma2)
    quad = (q - tau20 * s * s / (sigma2 + n * tau20)) / sigma2
    log_m1 = -0.5 * (n * _LOG_2PI + log_det + quad)
    log_m0 = np.sum(_log_normal_pdf(x, null_mean, sigma2))
    return t_or_from_lr(log_m1 - log_m0, prior_pi)


def top_fraction_mean(x, frac: float) -> float:
    """Mean of the largest ``ceil(len(x) * frac)`` values (at least one)."""
    x = np.asarray(x, dtype=float)
    k = max(1, int(np.ceil(x.size * frac)))
    return float(np.mean(np.sort(np.partition(x, x.size - k)[x.size - k:])))


def oracle_hyper(model: MixtureModel) -> PosteriorHyper:
    """Hyperparameters of an oracle that knows the generating model.

    Only defined when every signal shares one centre; with random centres
    the oracle posterior has no conjugate recursion.
    """
    if not isinstance(model.alt_means, ConstantMean):
        raise ValueError("oracle posterior recursion requires a constant signal centre")
    return PosteriorHyper(pi=model.pi, eta0=model.alt_means.value, tau20=model.alt_prior_sd ** 2,
                          sigma2=model.null_sd ** 2, null_mean=model.null_mean)
