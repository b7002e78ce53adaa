"""Pilot data: loading, z-scores, empirical-null fitting and semi-synthetic models.

The empirical null is estimated robustly: centre by the median, scale by
the normal-consistent MAD, and read the non-null fraction off the excess
of two-sided tail exceedances over what the fitted null predicts.  Every
fitted quantity can be overridden by the caller.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .model import ConstantMean, GroundTruth, MixtureModel, substream

__all__ = [
    "MAD_SCALE",
    "PI_FLOOR",
    "DegenerateDataError",
    "PilotDataset",
    "EmpiricalNullFit",
    "load_delimited_table",
    "load_grayscale_image",
    "parse_pgm",
    "compute_z_scores",
    "fit_empirical_null",
    "build_semisynthetic_model",
    "PilotStream",
]

MAD_SCALE = 1.4826
PI_FLOOR = 1e-4


class DegenerateDataError(ValueError):
    pass


@dataclass
class PilotDataset:
    values: list  # one 1-d array of raw measurements per location
    source: str  # "delimited-table" | "grayscale-image"
    ids: list | None = None
    shape: tuple | None = None  # image height, width

    def __post_init__(self):
        self.values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in self.values]
        if not self.values:
            raise ValueError("pilot dataset has no locations")
        if any(v.size == 0 for v in self.values):
            raise ValueError("every location needs at least one measurement")

    @property
    def p(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EmpiricalNullFit:
    pi_hat: float
    mu0_hat: float
    sigma0_hat: float
    mu_signal_hat: float
    p: int = 0
    at_floor: bool = False

    def __post_init__(self):
        if not self.sigma0_hat > 0:
            raise ValueError("sigma0_hat must be positive")
        if not 0 <= self.pi_hat < 1:
            raise ValueError("pi_hat must lie in [0, 1)")


# -- loading ----------------------------------------------------------------

def load_delimited_table(path) -> PilotDataset:
    """Read ``location_id,rep1,...,repm`` rows (header required, UTF-8)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2 or header[0].strip() != "location_id":
        raise ValueError(f"{path}: header must start with location_id followed by replicate columns")
    ids, values = [], []
    for lineno, row in enumerate(body, start=2):
        try:
            reps = [float(v) for v in row[1:] if v.strip() != ""]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        ids.append(row[0])
        values.append(reps)
    return PilotDataset(values=values, source="delimited-table", ids=ids)


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P2 (ASCII) or P5 (binary) graymap into a 2-d integer array."""
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError("not a portable graymap (expected P2 or P5 magic)")
    pos = 2
    header = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError("malformed graymap header")
        header.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(t) for t in header)
    except ValueError:
        raise ValueError("malformed graymap header") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise ValueError(f"malformed graymap header: {width}x{height}, maxval {maxval}")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise ValueError("truncated graymap raster")
        pix = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) < n:
            raise ValueError("truncated graymap raster")
        pix = np.array([int(t) for t in body[:n]], dtype=np.int64)
    if pix.max(initial=0) > maxval:
        raise ValueError("pixel value exceeds declared maxval")
    return pix.reshape(height, width)


def _robust_standardize(x: np.ndarray) -> np.ndarray:
    med = np.median(x)
    scale = MAD_SCALE * np.median(np.abs(x - med))
    if scale == 0:
        scale = x.std()
    if scale == 0:
        raise DegenerateDataError("constant data cannot be standardized")
    return (x - med) / scale


def load_grayscale_image(path) -> PilotDataset:
    """One location per pixel, standardized to zero median and unit (normal-scaled) MAD."""
    img = parse_pgm(Path(path).read_bytes())
    z = _robust_standardize(img.astype(float).ravel())
    return PilotDataset(values=[[v] for v in z], source="grayscale-image", shape=img.shape)


# -- z-scores and empirical null -------------------------------------------------

def compute_z_scores(data: PilotDataset) -> np.ndarray:
    """Replicate means standardized by the pooled replicate sd over sqrt(m).

    With a single replicate per location the raw values are standardized
    by median and MAD instead.
    """
    m = {v.size for v in data.values}
    if len(m) != 1:
        raise ValueError(f"unequal replicate counts across locations: {sorted(m)}")
    m = m.pop()
    X = np.vstack(data.values)
    if m == 1:
        return _robust_standardize(X[:, 0])
    means = X.mean(axis=1)
    pooled_sd = math.sqrt(X.var(axis=1, ddof=1).mean())
    if pooled_sd == 0:
        if np.all(means == 0):
            return np.zeros_like(means)
        raise DegenerateDataError("zero pooled replicate variance")
    return means / (pooled_sd / math.sqrt(m))


def fit_empirical_null(z, c: float = 2.0, min_size: int = 100, pi_floor: float = PI_FLOOR) -> EmpiricalNullFit:
    z = np.asarray(z, dtype=float)
    if z.size < min_size:
        raise ValueError(f"need at least {min_size} z-scores, got {z.size}")
    if not c > 0:
        raise ValueError("c must be positive")
    mu0 = float(np.median(z))
    sigma0 = MAD_SCALE * float(np.median(np.abs(z - mu0)))
    if sigma0 == 0:
        raise DegenerateDataError("median absolute deviation is zero")
    q_c = 2.0 * norm.sf(c)
    exceed = np.mean(np.abs(z - mu0) > c * sigma0)
    raw = (exceed - q_c) / (1.0 - q_c)
    pi_hat = float(min(max(pi_floor, raw), 1.0 - 1e-12))
    k = max(1, math.ceil(z.size * pi_hat))
    mu_signal = float(np.mean(np.sort(np.partition(z, z.size - k)[z.size - k:])))
    return EmpiricalNullFit(pi_hat=pi_hat, mu0_hat=mu0, sigma0_hat=sigma0, mu_signal_hat=mu_signal,
                            p=int(z.size), at_floor=bool(raw <= pi_floor))


def build_semisynthetic_model(fit: EmpiricalNullFit, p: int | None = None, **overrides) -> tuple[MixtureModel, bool]:
    """Mixture model with the fitted null, a point-mass signal at the fitted amplitude and ``pi = pi_hat``.

    ``overrides`` replace fitted values (``pi_hat``, ``mu0_hat``,
    ``sigma0_hat``, ``mu_signal_hat``).  Returns ``(model, at_floor)``.
    """
    if overrides:
        if "pi_hat" in overrides:
            overrides.setdefault("at_floor", False)
        fit = replace(fit, **overrides)
    if not fit.pi_hat > 0:
        raise ValueError("pi_hat must be positive to build a model")
    if fit.at_floor:
        warnings.warn("non-null proportion estimate sits at its floor", stacklevel=2)
    p = p if p is not None else (fit.p or 1)
    model = MixtureModel(p=p, pi=fit.pi_hat, alt_means=ConstantMean(fit.mu_signal_hat),
                         null_mean=fit.mu0_hat, null_sd=fit.sigma0_hat, alt_prior_sd=0.0)
    return model, fit.at_floor


class PilotStream:
    """Stage 1 replays the pilot z-scores; later stages are drawn from ``model``.

    ``truth`` tells the sampler which locations carry signal in later
    stages; it is supplied by the caller because pilot data carry no labels.
    """

    def __init__(self, z, model: MixtureModel, truth: GroundTruth, seed: int):
        self.z = np.asarray(z, dtype=float)
        if self.z.size != model.p or truth.p != model.p:
            raise ValueError("pilot z-scores, model and truth must agree on p")
        self.model, self.truth, self.seed = model, truth, seed
        self._base = np.where(truth.theta, truth.mu, model.null_mean)

    @property
    def p(self) -> int:
        return self.model.p

    def observe(self, stage, active):
        active = np.asarray(active, dtype=np.int64)
        if stage == 1:
            return self.z[active]
        noise = substream(self.seed, 2, stage).standard_normal(self.p)
        return self._base[active] + self.model.null_sd * noise[active]
