"""Sampler assessment criteria: distance to MAP, mean |ACF|, Gelman-Rubin."""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ConfigurationError


def _component_matrix(trace):
    """Stack a ChainTrace (or raw array) into an (n_samples, n_components) array."""
    if hasattr(trace, "samples_r"):
        return np.hstack([trace.samples_r, trace.samples_o])
    return np.asarray(trace, dtype=float)


def distance_to_map(trace_r, r_map) -> np.ndarray:
    """Normalized distance ||R_n - R_map|| / ||R_map|| per stored iterate."""
    r_map = np.asarray(r_map, dtype=float)
    denom = np.linalg.norm(r_map)
    if denom == 0.0:
        raise ConfigurationError("MAP estimate has zero norm")
    trace_r = np.asarray(trace_r, dtype=float)
    return np.linalg.norm(trace_r - r_map, axis=1) / denom


def mean_abs_acf(trace, max_lag: int) -> np.ndarray:
    """Mean over components of |autocorrelation| for lags 0..max_lag.

    Uses the biased (n-denominator) estimator, which keeps the sequence
    positive semidefinite; zero-variance components are skipped with a
    warning.  Returns an array of length max_lag + 1 (lag 0 is exactly 1).
    """
    X = _component_matrix(trace)
    n, n_comp = X.shape
    if n <= max_lag:
        raise ConfigurationError(f"need more than max_lag={max_lag} samples, got {n}")
    Xc = X - X.mean(axis=0)
    var = (Xc * Xc).sum(axis=0)
    # a constant component can carry a few ulps of variance from the mean's
    # rounding; anything within ~100 ulps of zero is treated as constant
    tiny = n * (100.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(X).max(axis=0))) ** 2
    keep = var > tiny
    if not keep.all():
        warnings.warn(f"skipping {int((~keep).sum())} constant component(s) in ACF")
    if not keep.any():
        raise ConfigurationError("all components are constant")
    Xc = Xc[:, keep]
    var = var[keep]
    # FFT autocorrelation over all components at once
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    F = np.fft.rfft(Xc, n=nfft, axis=0)
    acov = np.fft.irfft(F * np.conj(F), n=nfft, axis=0)[: max_lag + 1]
    rho = acov / var
    return np.abs(rho).mean(axis=1)


def gelman_rubin_components(traces, n: int) -> np.ndarray:
    """Per-component potential scale reduction from the first ``n`` samples.

    R_c = sqrt(((n-1)/n * W + B/n) / W) with W the mean within-chain
    variance and B/n the variance of the chain means.
    """
    if len(traces) < 2:
        raise ConfigurationError("Gelman-Rubin needs at least 2 chains")
    X = np.stack([_component_matrix(t)[:n] for t in traces])  # (m, n, C)
    if X.shape[1] != n:
        raise ConfigurationError(f"chains shorter than requested checkpoint {n}")
    means = X.mean(axis=1)
    within = X.var(axis=1, ddof=1)
    W = within.mean(axis=0)
    if (W == 0.0).any():
        raise ConfigurationError("degenerate chains: zero within-chain variance")
    B_over_n = means.var(axis=0, ddof=1)
    V = (n - 1) / n * W + B_over_n
    return np.sqrt(V / W)


def gelman_rubin(traces, at) -> dict:
    """GR statistic at each checkpoint (sample counts), max and mean reductions.

    Returns a dict with keys ``at``, ``max``, ``mean``, and ``components``
    (the per-component vector at the final checkpoint).  Which scalar
    reduction to quote is ambiguous in the source material, so both are
    reported; the max is the conservative choice.
    """
    at = [int(a) for a in at]
    out_max, out_mean = [], []
    comps = None
    for n in at:
        comps = gelman_rubin_components(traces, n)
        out_max.append(float(comps.max()))
        out_mean.append(float(comps.mean()))
    return {"at": np.array(at), "max": np.array(out_max), "mean": np.array(out_mean), "components": comps}
