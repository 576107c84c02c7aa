"""MAP estimation by a primal-dual (Chambolle-Pock) scheme plus a uniqueness check.

The objective min_{R >= 0, O}  sum_t d(Z_t | R_t phiZ_t + O_t)
+ lambda_R ||D R||_1 + lambda_O ||O||_1 is split as F(K theta) + G(theta)
with K stacking the intensity map and the second-difference block,
F = Poisson-deviance (+) lambda_R L1, and G carrying the R >= 0 projection
and the lambda_O L1 term.  Keeping the O penalty in the primal prox makes
the soft-threshold produce exact zeros in the outlier estimate at every
iterate.  Dual proxes are evaluated through the Moreau identity.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import lsq_linear

from .errors import DivergenceError
from .model import EpiModel, Theta, f_data, g_prior, grad_f, in_domain
from .prox import prox_poisson_kl, soft_threshold


def _operator_norm(phi_z, diffop, n_iter: int = 100, seed: int = 0) -> float:
    """Largest singular value of K = [[diag(phi_z), I], [D, 0]] by power iteration."""
    T = len(phi_z)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(T)
    o = rng.standard_normal(T)
    lam = 1.0
    for _ in range(n_iter):
        # one application of K^T K
        y1 = phi_z * r + o
        y2 = diffop.apply(r)
        r2 = phi_z * y1 + diffop.apply_transpose(y2)
        o2 = y1
        lam = np.sqrt(r2 @ r2 + o2 @ o2)
        r, o = r2 / lam, o2 / lam
    return float(np.sqrt(lam))


def solve_map(model: EpiModel, diffop, max_iters: int = 20000, tol: float = 1e-9):
    """Chambolle-Pock iteration for the MAP estimate.

    Steps sigma = tau = 0.99 / ||K||, no relaxation, zero dual start, primal
    start at (R, O) = (1, 0).  Stops when the relative objective change over
    a 100-iteration lookback falls below ``tol``.  Returns (theta, trace)
    where ``trace`` holds the objective value per iteration.

    Raises DivergenceError if the primal iterate turns non-finite.
    """
    z = model.counts.values
    phi_z = model.phi_z
    if (phi_z > 0).sum() < 2 or (z > 0).sum() < 1:
        warnings.warn(
            "MAP existence hypotheses look unmet (need two positive weighted "
            "past counts and one positive count); proceeding anyway"
        )
    T = model.T
    lam_r, lam_o = model.hyper.lambda_r, model.hyper.lambda_o
    norm_K = _operator_norm(phi_z, diffop)
    sigma = tau = 0.99 / norm_K

    R = np.ones(T)
    O = np.zeros(T)
    y1 = np.zeros(T)
    y2 = np.zeros(T - 2)
    R_bar, O_bar = R.copy(), O.copy()
    trace = np.empty(max_iters)

    for it in range(max_iters):
        # dual ascent; Moreau identity turns prox of F* into prox of F
        v1 = y1 + sigma * (phi_z * R_bar + O_bar)
        y1 = v1 - sigma * prox_poisson_kl(v1 / sigma, z, 1.0 / sigma)
        v2 = y2 + sigma * diffop.apply(R_bar)
        y2 = v2 - sigma * soft_threshold(v2 / sigma, lam_r / sigma)
        # primal descent with projection and soft threshold
        R_new = np.maximum(R - tau * (phi_z * y1 + diffop.apply_transpose(y2)), 0.0)
        O_new = soft_threshold(O - tau * y1, tau * lam_o)
        if not (np.isfinite(R_new).all() and np.isfinite(O_new).all()):
            raise DivergenceError(f"non-finite iterate at iteration {it}; reduce step sizes")
        R_bar = 2.0 * R_new - R
        O_bar = 2.0 * O_new - O
        R, O = R_new, O_new
        theta = Theta(R, O)
        trace[it] = f_data(theta, model) + g_prior(theta, diffop, model.hyper)
        if it >= 200 and np.isfinite(trace[it]):
            prev, cur = trace[it - 100], trace[it]
            if np.isfinite(prev) and abs(prev - cur) <= tol * max(1.0, abs(cur)):
                trace = trace[: it + 1]
                break

    return Theta(R, O), trace


_ZERO_PATTERN_TOL = 1e-8


def _penalty_matrix(model: EpiModel, diffop):
    """U = [[lambda_R D, 0], [0, lambda_O I]], shape (2T-2) x 2T."""
    T = model.T
    U = np.zeros((2 * T - 2, 2 * T))
    U[: T - 2, :T] = model.hyper.lambda_r * diffop.dense()
    U[T - 2 :, T:] = model.hyper.lambda_o * np.eye(T)
    return U


def recover_subgradient(theta_map: Theta, model: EpiModel, diffop):
    """Best L1-subgradient gamma solving grad f + U^T gamma = 0.

    Components where (U theta)_j is (numerically) nonzero are pinned to the
    sign; the rest are fit by box-constrained least squares in [-1, 1].
    Returns (gamma, residual_norm, ambiguous) where ``ambiguous`` flags a
    rank-deficient recovery of the free components.
    """
    U = _penalty_matrix(model, diffop)
    g_r, g_o = grad_f(theta_map, model)
    grad = np.concatenate([g_r, g_o])
    w = U @ np.concatenate([theta_map.R, theta_map.O])
    scale = max(1.0, np.abs(w).max())
    fixed = np.abs(w) > _ZERO_PATTERN_TOL * scale
    gamma = np.zeros(U.shape[0])
    gamma[fixed] = np.sign(w[fixed])
    rhs = -(grad + U[fixed].T @ gamma[fixed])
    free = ~fixed
    ambiguous = False
    if free.any():
        A_free = U[free].T  # (2T) x n_free
        if np.linalg.matrix_rank(A_free) < free.sum():
            ambiguous = True
        res = lsq_linear(A_free, rhs, bounds=(-1.0, 1.0))
        gamma[free] = res.x
    residual = np.linalg.norm(grad + U.T @ gamma)
    return gamma, float(residual), ambiguous


def map_uniqueness_check(theta_map: Theta, model: EpiModel, diffop, tol: float = 1e-6) -> str:
    """Kernel criterion for MAP uniqueness: 'unique' or 'possibly-nonunique'.

    Builds the inactive set I = {j : |gamma*_j| < 1 - tol} of the recovered
    subgradient, K1 = ker(U_I) and K2 = ker([diag(phiZ) I]); the MAP is
    declared unique iff the kernels intersect trivially (smallest principal
    angle test).  Ambiguous subgradient recovery reports possibly-nonunique.
    """
    if not in_domain(theta_map, model):
        return "possibly-nonunique"
    gamma, _, ambiguous = recover_subgradient(theta_map, model, diffop)
    if ambiguous:
        return "possibly-nonunique"
    U = _penalty_matrix(model, diffop)
    T = model.T
    inactive = np.abs(gamma) < 1.0 - tol
    if inactive.any():
        K1 = null_space(U[inactive])
    else:
        K1 = np.eye(2 * T)
    K2 = null_space(np.hstack([np.diag(model.phi_z), np.eye(T)]))
    if K1.shape[1] == 0 or K2.shape[1] == 0:
        return "unique"
    # cos of smallest principal angle between the kernel subspaces
    cos_max = np.linalg.svd(K1.T @ K2, compute_uv=False).max()
    return "unique" if cos_max < 1.0 - 1e-8 else "possibly-nonunique"
