"""Closed-form proximity operators used by the sampler drifts and MAP solver."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def soft_threshold(x, tau):
    """Prox of tau*||.||_1: componentwise sign(x) * max(|x| - tau, 0).

    Exact zeros are produced inside the dead zone |x| <= tau; ties map to 0.
    """
    if tau < 0:
        raise ConfigurationError(f"soft threshold needs tau >= 0, got {tau}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def prox_l1_partial(x, tau, keep: int = 2):
    """Prox of tau*||x[keep:]||_1: first ``keep`` coordinates pass through."""
    x = np.asarray(x, dtype=float)
    if not 0 <= keep <= len(x):
        raise ConfigurationError(f"keep must be in [0, {len(x)}], got {keep}")
    out = x.copy()
    out[keep:] = soft_threshold(x[keep:], tau)
    return out


def prox_l1_semiorthogonal(x, A, tau):
    """Prox of tau*||A .||_1 when A A^T = I.

    The semi-orthogonal composition rule gives
    x - A^T (A x - soft_threshold(A x, tau)).
    """
    x = np.asarray(x, dtype=float)
    Ax = A.apply(x)
    return x - A.apply_transpose(Ax - soft_threshold(Ax, tau))


def prox_poisson_kl(x, z, gamma):
    """Prox of gamma * d(z | .) for the Poisson deviance of a count z.

    For z > 0 the minimizer is the positive root of p^2 + p(gamma - x)
    - gamma z = 0, written as (x-gamma)/2 + sqrt(((x-gamma)/2)^2 + gamma z)
    to avoid cancellation when x << gamma.  For z = 0 the deviance is linear
    plus the nonnegativity indicator, giving max(x - gamma, 0).

    Accepts scalars or arrays (broadcast together).  gamma = 0 degenerates
    to the projection onto the deviance domain (the identity on it).
    """
    if np.any(np.asarray(gamma) < 0):
        raise ConfigurationError("prox_poisson_kl needs gamma >= 0")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    half = 0.5 * (x - gamma)
    root = half + np.sqrt(half * half + gamma * z)
    out = np.where(z > 0, root, np.maximum(x - gamma, 0.0))
    if out.ndim == 0:
        return float(out)
    return out
