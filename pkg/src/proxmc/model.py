"""Statistical model: counts, serial interval, intensity, likelihood, prior.

The unnormalized negative log posterior over theta = (R, O) is

    f(theta) + lambda_R ||D R||_1 + lambda_O ||O||_1

with f the Poisson negative log likelihood sum_t { -Z_t ln I_t + I_t } of
the intensities I_t = R_t * phiZ_t + O_t, where phiZ_t is the serial-
interval-weighted sum of past counts.  f drops the additive ln(Z_t!) and
Z ln Z constants, which cancel in acceptance ratios and argmins and would
overflow for large counts.  The convention 0 ln 0 = 0 applies throughout.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class CountSeries:
    """Observed daily counts plus the immediately preceding history.

    ``values`` are the T analysis-window counts, ``history`` the tau
    preceding counts needed to evaluate the weighted past sums from day 1.
    """

    dates: tuple
    values: np.ndarray = field(repr=False)
    history: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "history", np.asarray(self.history, dtype=float))
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(self.values):
            raise ConfigurationError("dates and values lengths differ")
        if (self.values < 0).any() or (self.history < 0).any():
            raise ConfigurationError("counts must be nonnegative (preprocess first)")
        for a, b in zip(self.dates, self.dates[1:]):
            if b - a != datetime.timedelta(days=1):
                raise ConfigurationError(f"dates not consecutive at {a} -> {b}")

    @property
    def T(self):
        return len(self.values)


@dataclass(frozen=True)
class SerialInterval:
    """Nonnegative infectiousness weights over the tau days after infection."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if (w < 0).any():
            raise ConfigurationError("serial interval weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError("serial interval weights must sum to 1")

    @property
    def tau(self):
        return len(self.weights)


class Theta(NamedTuple):
    """Parameter pair: reproduction numbers R and count outliers O."""

    R: np.ndarray
    O: np.ndarray


@dataclass(frozen=True)
class Hyperparams:
    """Regularization weights for the R-smoothness and O-sparsity priors."""

    lambda_r: float
    lambda_o: float

    def __post_init__(self):
        if self.lambda_r <= 0 or self.lambda_o <= 0:
            raise ConfigurationError("hyperparameters must be strictly positive")


def build_serial_interval(mean: float = 6.6, sd: float = 3.5, tau: int = 26) -> SerialInterval:
    """Discretized Gamma infectiousness profile, truncated to ``tau`` days.

    The Gamma density with the given mean and standard deviation (shape
    (mean/sd)^2, scale sd^2/mean) is integrated over the unit intervals
    (u-1, u] for u = 1..tau and renormalized to sum to one, preserving the
    Poisson intensity scale after truncation.
    """
    if mean <= 0 or sd <= 0:
        raise ConfigurationError("serial interval mean and sd must be positive")
    if tau < 1:
        raise ConfigurationError("serial interval needs tau >= 1")
    shape = (mean / sd) ** 2
    scale = sd * sd / mean
    cdf = stats.gamma.cdf(np.arange(tau + 1), a=shape, scale=scale)
    w = np.diff(cdf)
    return SerialInterval(weights=w / w.sum())


def weighted_past_counts(counts: CountSeries, phi: SerialInterval) -> np.ndarray:
    """phiZ_t = sum_u phi_u Z_{t-u}; indices <= 0 read from the history."""
    tau = phi.tau
    if len(counts.history) != tau:
        raise ConfigurationError(
            f"history length {len(counts.history)} != serial interval length {tau}"
        )
    full = np.concatenate([counts.history, counts.values])
    # full[tau + t] is window day t (0-based); day t weights full[tau+t-1] down to full[t]
    out = np.empty(counts.T)
    w = phi.weights
    for t in range(counts.T):
        past = full[t : tau + t][::-1]
        out[t] = w @ past
    return out


@dataclass(frozen=True)
class EpiModel:
    """Frozen problem instance: data, serial interval, hyperparameters.

    Precomputes the weighted past counts and count masks; immutable and
    safe for concurrent use.
    """

    counts: CountSeries
    phi: SerialInterval
    hyper: Hyperparams
    phi_z: np.ndarray = field(repr=False)
    _zpos: np.ndarray = field(repr=False)
    _zzero: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, counts: CountSeries, phi: SerialInterval, hyper: Hyperparams) -> "EpiModel":
        phi_z = weighted_past_counts(counts, phi)
        z = counts.values
        return cls(
            counts=counts,
            phi=phi,
            hyper=hyper,
            phi_z=phi_z,
            _zpos=np.flatnonzero(z > 0),
            _zzero=np.flatnonzero(z == 0),
        )

    @property
    def T(self):
        return self.counts.T


def intensity(theta: Theta, model: EpiModel) -> np.ndarray:
    """Poisson intensity I_t = R_t * phiZ_t + O_t."""
    return theta.R * model.phi_z + theta.O


def in_domain(theta: Theta, model: EpiModel) -> bool:
    """Support check: R >= 0, I > 0 where Z > 0, and I >= 0 where Z = 0."""
    if (theta.R < 0).any():
        return False
    I = intensity(theta, model)
    if (I[model._zpos] <= 0).any():
        return False
    return not (I[model._zzero] < 0).any()


def f_data(theta: Theta, model: EpiModel) -> float:
    """Poisson negative log likelihood (up to constants); +inf off-domain."""
    if not in_domain(theta, model):
        return np.inf
    I = intensity(theta, model)
    zp = model._zpos
    return float(I.sum() - model.counts.values[zp] @ np.log(I[zp]))


def g_prior(theta: Theta, diffop, hyper: Hyperparams) -> float:
    """Nonsmooth prior lambda_R ||D R||_1 + lambda_O ||O||_1."""
    return float(
        hyper.lambda_r * np.abs(diffop.apply(theta.R)).sum()
        + hyper.lambda_o * np.abs(theta.O).sum()
    )


def neg_log_posterior(theta: Theta, model: EpiModel, diffop) -> float:
    """f_data + g_prior, up to the (never computed) normalizing constant."""
    f = f_data(theta, model)
    if not np.isfinite(f):
        return np.inf
    return f + g_prior(theta, diffop, model.hyper)


def grad_f(theta: Theta, model: EpiModel):
    """Gradient of f_data: (phiZ * (1 - Z/I), 1 - Z/I), with Z/I := 0 at Z = 0.

    Raises DomainError at the boundary I_t = 0 with Z_t > 0, where the
    likelihood is non-differentiable (infinite).
    """
    I = intensity(theta, model)
    zp = model._zpos
    if (I[zp] <= 0).any():
        raise DomainError("gradient undefined: zero intensity at a positive count")
    ratio = np.zeros(model.T)
    ratio[zp] = model.counts.values[zp] / I[zp]
    one_minus = 1.0 - ratio
    return model.phi_z * one_minus, one_minus
