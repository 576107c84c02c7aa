"""Reproduction-number estimation with credibility intervals from daily counts.

The pipeline: ingest daily infection counts, compute the MAP estimate of the
time-varying reproduction number R and sparse count outliers O, sample the
posterior with blockwise proximal-gradient Metropolis-Hastings / Gibbs
kernels, then summarize the chains into diagnostics and credibility bands.
"""

__version__ = "0.1.0"
