"""Quantile summaries of merged chains: credibility bands and point estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .model import CountSeries


@dataclass(frozen=True)
class CredibilityBand:
    """Per-day lower/median/upper quantiles at credibility level 1 - alpha."""

    dates: tuple
    lower: np.ndarray = field(repr=False)
    median: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    level: float = 0.95

    def __post_init__(self):
        if not (len(self.lower) == len(self.median) == len(self.upper) == len(self.dates)):
            raise ConfigurationError("band arrays and dates must share one length")
        if ((self.lower > self.median) | (self.median > self.upper)).any():
            raise ConfigurationError("band ordering violated: need lower <= median <= upper")


def empirical_quantile(samples, q: float) -> float:
    """Order-statistic quantile with linear interpolation at q*(n-1)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ConfigurationError("quantile of empty sample set")
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"quantile level must be in [0, 1], got {q}")
    return float(np.quantile(samples, q, method="linear"))


def _pooled(traces, target: str) -> np.ndarray:
    attr = {"R": "samples_r", "O": "samples_o"}.get(target.upper())
    if attr is None:
        raise ConfigurationError(f"target must be 'R' or 'O', got {target!r}")
    pools = [getattr(t, attr) for t in traces]
    pool = np.vstack(pools)
    if pool.shape[0] == 0:
        raise ConfigurationError("no post-burn-in samples to summarize")
    return pool


def credibility_band(traces, target: str, alpha: float = 0.05, dates=None) -> CredibilityBand:
    """Per-day alpha/2, 1/2 and 1-alpha/2 quantiles over all pooled samples."""
    pool = _pooled(traces, target)
    lo, med, hi = np.quantile(pool, [alpha / 2.0, 0.5, 1.0 - alpha / 2.0], axis=0, method="linear")
    if dates is None:
        dates = tuple(range(pool.shape[1]))
    return CredibilityBand(dates=tuple(dates), lower=lo, median=med, upper=hi, level=1.0 - alpha)


def denoised_band(counts: CountSeries, o_band: CredibilityBand) -> CredibilityBand:
    """Band for the denoised counts Z - O: subtract the outlier band from Z."""
    if tuple(counts.dates) != tuple(o_band.dates):
        raise DataError("count series and outlier band cover different dates")
    z = counts.values
    return CredibilityBand(
        dates=counts.dates,
        lower=z - o_band.upper,
        median=z - o_band.median,
        upper=z - o_band.lower,
        level=o_band.level,
    )


def posterior_mean(traces, target: str) -> np.ndarray:
    """Componentwise mean of the pooled post-burn-in samples."""
    return _pooled(traces, target).mean(axis=0)


def posterior_median(traces, target: str) -> np.ndarray:
    """Componentwise median of the pooled post-burn-in samples."""
    return np.quantile(_pooled(traces, target), 0.5, axis=0, method="linear")
