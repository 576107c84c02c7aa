"""Blockwise proximal-gradient Metropolis-Hastings and Gibbs samplers.

Twelve variants: three drifts (random walk, proximal-gradient on a random
stride-3 decimation, proximal-gradient in the invertible augmented
coordinates) x two schemes (joint-accept MH, Metropolis-within-Gibbs) x two
R-block covariances (augmentation variant I or O).  The R-block proposal
noise is sqrt(2 gamma1) * Dbar^{-1} eta, so its covariance is
2 gamma1 Dbar^{-1} Dbar^{-T}; the O-block uses 2 gamma2 I.  Step sizes
adapt during burn-in toward a target acceptance rate and are frozen after.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import prox

from .errors import ConfigurationError, InitializationError
from .linops import AugmentedDiffOp, DecimatedDiffOp, SecondDiffOp, build_augmented, build_D, build_decimated
from .model import EpiModel, Theta, grad_f, in_domain

SQRT6 = np.sqrt(6.0)

DRIFTS = ("rw", "pgdec", "pgdual")
SCHEMES = ("mh", "gibbs")
COVARIANCES = ("i", "o")


@dataclass(frozen=True)
class DiffOps:
    """All penalty-operator forms needed by the sampler variants."""

    D: SecondDiffOp
    decimated: tuple
    augmented_i: AugmentedDiffOp
    augmented_o: AugmentedDiffOp

    @classmethod
    def build(cls, T: int) -> "DiffOps":
        return cls(
            D=build_D(T),
            decimated=tuple(build_decimated(i, T) for i in (1, 2, 3)),
            augmented_i=build_augmented(T, "I"),
            augmented_o=build_augmented(T, "O"),
        )


@dataclass
class SamplerConfig:
    """Which variant to run and for how long.

    ``initial_gamma1``/``initial_gamma2`` default to a curvature-based
    guess (inverse largest Hessian eigenvalue of the data term in the
    proposal metric), which keeps burn-in adaptation within reach of its
    acceptance target on widely varying data scales.
    """

    drift: str = "pgdual"
    scheme: str = "gibbs"
    covariance: str = "o"
    n_max: int = 100000
    n_burnin: int = 30000
    target_acceptance: float = 0.25
    seed: int = 0
    thinning: int = 10
    initial_gamma1: Optional[float] = None
    initial_gamma2: Optional[float] = None
    adapt_window: int = 500
    adapt_gain: float = 1.0
    adapt_decay: float = 0.6
    adapt_trust_band: float = 0.10
    full_r_stride: int = 0

    def __post_init__(self):
        self.drift = self.drift.lower()
        self.scheme = self.scheme.lower()
        self.covariance = self.covariance.lower()
        if self.drift not in DRIFTS:
            raise ConfigurationError(f"drift must be one of {DRIFTS}, got {self.drift!r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.covariance not in COVARIANCES:
            raise ConfigurationError(f"covariance must be 'i' or 'o', got {self.covariance!r}")
        if not 0 <= self.n_burnin <= self.n_max:
            raise ConfigurationError("need 0 <= n_burnin <= n_max")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ConfigurationError("target_acceptance must lie in (0, 1)")
        if self.thinning < 1:
            raise ConfigurationError("thinning must be a positive integer")


class WindowStats(NamedTuple):
    """Acceptance rates observed over one adaptation window."""

    acc_r: float
    acc_o: float


@dataclass
class ChainState:
    """Current chain position, step sizes, RNG stream, and tallies.

    ``i_cur``, ``dr1_cur`` and ``o1_cur`` cache the intensity vector and the
    two prior terms at the current point; they change only on acceptance.
    """

    theta: Theta
    gamma1: float
    gamma2: float
    rng: np.random.Generator
    iteration: int = 0
    f_cur: float = np.nan
    i_cur: Optional[np.ndarray] = None
    dr1_cur: float = np.nan
    o1_cur: float = np.nan
    accept_r: int = 0
    accept_o: int = 0
    window_r: int = 0
    window_o: int = 0
    total_accept_r: int = 0
    total_accept_o: int = 0
    adapt_k_r: int = 0
    adapt_k_o: int = 0


@dataclass
class ChainTrace:
    """Post-burn-in samples at the thinning stride plus adaptation history."""

    samples_r: np.ndarray
    samples_o: np.ndarray
    acceptance: np.ndarray  # rows (end_iteration, acc_r, acc_o)
    stepsizes: np.ndarray  # rows (end_iteration, gamma1, gamma2)
    seed: int
    n_burnin: int
    thinning: int
    full_r: Optional[np.ndarray] = None
    full_r_stride: int = 0

    @property
    def n_samples(self):
        return self.samples_r.shape[0]

    @property
    def T(self):
        return self.samples_r.shape[1]


# ---------------------------------------------------------------------------
# drift functions


def drift_rw(theta: Theta) -> Theta:
    """Random-walk drift: the identity map."""
    return theta


def drift_pgdec_R(theta: Theta, model: EpiModel, A_i: DecimatedDiffOp, gamma1: float, grad_r=None):
    """Proximal-gradient step for the R block on one decimated penalty row set."""
    if gamma1 == 0.0:
        return theta.R.copy()
    if grad_r is None:
        grad_r = grad_f(theta, model)[0]
    step = theta.R - gamma1 * grad_r
    return prox.prox_l1_semiorthogonal(step, A_i, gamma1 * model.hyper.lambda_r)


def drift_pgdec_O(theta: Theta, model: EpiModel, gamma2: float, grad_o=None):
    """Proximal-gradient step for the O block (componentwise soft threshold)."""
    if gamma2 == 0.0:
        return theta.O.copy()
    if grad_o is None:
        grad_o = grad_f(theta, model)[1]
    return prox.soft_threshold(theta.O - gamma2 * grad_o, gamma2 * model.hyper.lambda_o)


def drift_pgdual_R(theta: Theta, model: EpiModel, dbar: AugmentedDiffOp, gamma1: float, grad_r=None):
    """Proximal-gradient step in the augmented coordinates, mapped back.

    Dbar^{-1} prox(Dbar R - gamma1 Dbar^{-T} grad, gamma1 lambda_R) where the
    prox soft-thresholds all but the first ``n_keep`` coordinates.
    """
    if gamma1 == 0.0:
        return dbar.solve(dbar.apply(theta.R))
    if grad_r is None:
        grad_r = grad_f(theta, model)[0]
    w = dbar.apply(theta.R) - gamma1 * dbar.solve_transpose(grad_r)
    w = prox.prox_l1_partial(w, gamma1 * model.hyper.lambda_r, keep=dbar.n_keep)
    return dbar.solve(w)


# identical formula for both proximal-gradient O drifts
drift_pgdual_O = drift_pgdec_O


# ---------------------------------------------------------------------------
# proposals and acceptance pieces


def propose_block_R(mu, dbar: AugmentedDiffOp, gamma1: float, rng, eta=None):
    """Draw from N(mu, 2 gamma1 Dbar^{-1} Dbar^{-T}) via mu + sqrt(2 g) Dbar^{-1} eta."""
    if eta is None:
        eta = rng.standard_normal(len(mu))
    return mu + math.sqrt(2.0 * gamma1) * dbar.solve(eta)


def propose_block_O(mu, gamma2: float, rng, eta=None):
    """Draw from N(mu, 2 gamma2 I)."""
    if eta is None:
        eta = rng.standard_normal(len(mu))
    return mu + math.sqrt(2.0 * gamma2) * eta


def log_proposal_ratio(theta: Theta, theta_half: Theta, mus_fwd, mus_rev, dbar, gammas):
    """Log q(theta_half -> theta) - log q(theta -> theta_half), both blocks.

    The R-block exponent is -||Dbar (tau - mu)||^2 / (4 gamma1) and the
    O-block exponent -||tau - mu||^2 / (4 gamma2).  Determinants cancel:
    the covariances are identical in both directions and do not depend on
    the decimation selection.
    """
    gamma1, gamma2 = gammas
    mu_r_f, mu_o_f = mus_fwd
    mu_r_r, mu_o_r = mus_rev
    d_f = dbar.apply(theta_half.R - mu_r_f)
    d_r = dbar.apply(theta.R - mu_r_r)
    out = (d_f @ d_f - d_r @ d_r) / (4.0 * gamma1)
    e_f = theta_half.O - mu_o_f
    e_r = theta.O - mu_o_r
    out += (e_f @ e_f - e_r @ e_r) / (4.0 * gamma2)
    return float(out)


# ---------------------------------------------------------------------------
# kernel: precomputed pieces shared by every step of one chain


class SamplerKernel:
    """Immutable per-run machinery: data arrays, operators, config flags."""

    def __init__(self, model: EpiModel, diffops: DiffOps, config: SamplerConfig):
        self.model = model
        self.config = config
        self.diffops = diffops
        self.T = model.T
        self.z = model.counts.values
        self.phi_z = model.phi_z
        self.zpos = model._zpos
        self.zzero = model._zzero
        self.z_at_pos = self.z[self.zpos]
        self.lam_r = model.hyper.lambda_r
        self.lam_o = model.hyper.lambda_o
        self.dbar = diffops.augmented_o if config.covariance == "o" else diffops.augmented_i
        self.dbar_inv = self.dbar.dbar_inv
        self.dbar_inv_T = np.ascontiguousarray(self.dbar.dbar_inv.T)
        self.dec = diffops.decimated
        self.drift = config.drift
        self.scheme = config.scheme

    # -- cheap model evaluations on raw arrays ------------------------------

    def f_value(self, R, O):
        """f_data on raw arrays; +inf when infeasible."""
        if R.min() < 0.0:
            return np.inf, None
        I = R * self.phi_z + O
        Ip = I[self.zpos]
        if Ip.size and Ip.min() <= 0.0:
            return np.inf, None
        if self.zzero.size and I[self.zzero].min() < 0.0:
            return np.inf, None
        return float(I.sum() - self.z_at_pos @ np.log(Ip)), I

    def f_from_intensity(self, I):
        """f_data given a precomputed intensity (R >= 0 already holds)."""
        Ip = I[self.zpos]
        if Ip.size and Ip.min() <= 0.0:
            return np.inf
        if self.zzero.size and I[self.zzero].min() < 0.0:
            return np.inf
        return float(I.sum() - self.z_at_pos @ np.log(Ip))

    def grads(self, R, O, I=None):
        if I is None:
            I = R * self.phi_z + O
        ratio = np.zeros(self.T)
        ratio[self.zpos] = self.z_at_pos / I[self.zpos]
        one_minus = 1.0 - ratio
        return self.phi_z * one_minus, one_minus

    def dr_l1(self, R):
        return np.abs((R[:-2] - 2.0 * R[1:-1] + R[2:])).sum() / SQRT6

    def g_value(self, R, O):
        return self.lam_r * self.dr_l1(R) + self.lam_o * np.abs(O).sum()

    # -- drifts on raw arrays ------------------------------------------------

    def mu_R(self, R, grad_r, gamma1, i_sel):
        """Drift of the R block given the data-term gradient at the point."""
        if self.drift == "rw":
            return R
        step = R - gamma1 * grad_r
        if self.drift == "pgdec":
            return prox.prox_l1_semiorthogonal(step, self.dec[i_sel], gamma1 * self.lam_r)
        w = self.dbar.apply(R) - gamma1 * (self.dbar_inv_T @ grad_r)
        k = self.dbar.n_keep
        w[k:] = prox.soft_threshold(w[k:], gamma1 * self.lam_r)
        return self.dbar_inv @ w

    def mu_O(self, O, grad_o, gamma2):
        if self.drift == "rw":
            return O
        return prox.soft_threshold(O - gamma2 * grad_o, gamma2 * self.lam_o)

    def select_decimation(self, rng):
        if self.drift == "pgdec":
            return int(rng.integers(0, 3))
        return 0


def _curvature_step_sizes(kernel: SamplerKernel, R, O, rng):
    """Initial gamma guess: a fraction of the inverse curvature per block.

    The R-block curvature is the top eigenvalue of
    Dbar^{-T} diag(Z phiZ^2 / I^2) Dbar^{-1} (power iteration); the O-block
    curvature is max(Z / I^2).
    """
    I = np.maximum(R * kernel.phi_z + O, 1e-12)
    h_r = kernel.z * (kernel.phi_z / I) ** 2
    dinv = kernel.dbar.dbar_inv
    v = rng.standard_normal(kernel.T)
    lam = 1.0
    for _ in range(60):
        w = dinv.T @ (h_r * (dinv @ v))
        lam = np.linalg.norm(w)
        if lam == 0.0:
            break
        v = w / lam
    L_r = max(lam, 1e-12)
    L_o = max((kernel.z / I**2).max(), 1e-12)
    return 0.1 / L_r, 0.1 / L_o


def _slaved_gamma2(kernel: SamplerKernel, gamma1: float) -> float:
    """MH scheme couples the O step to the R step (PGdec: equal; else scaled)."""
    if kernel.drift == "pgdec":
        return gamma1
    return (kernel.lam_r / kernel.lam_o) ** 2 * gamma1


def init_state(kernel: SamplerKernel, rng, max_tries: int = 1000) -> ChainState:
    """Perturb the non-informative point (R=1, O=0) until feasible."""
    cfg = kernel.config
    for _ in range(max_tries):
        R = np.maximum(1.0 + rng.uniform(-0.1, 0.1, kernel.T), 0.0)
        O = rng.uniform(-0.1, 0.1, kernel.T)
        f, I = kernel.f_value(R, O)
        if np.isfinite(f):
            break
    else:
        raise InitializationError(f"no feasible initial point in {max_tries} draws")
    g1_auto, g2_auto = _curvature_step_sizes(kernel, R, O, rng)
    if cfg.initial_gamma1 is not None:
        gamma1 = cfg.initial_gamma1
    elif kernel.scheme == "mh":
        # start below both blocks' curvature scales, respecting the coupling
        if kernel.drift == "pgdec":
            gamma1 = min(g1_auto, g2_auto)
        else:
            gamma1 = min(g1_auto, (kernel.lam_o / kernel.lam_r) ** 2 * g2_auto)
    else:
        gamma1 = g1_auto
    if kernel.scheme == "mh":
        gamma2 = _slaved_gamma2(kernel, gamma1)
    else:
        gamma2 = cfg.initial_gamma2 if cfg.initial_gamma2 is not None else g2_auto
    return ChainState(
        theta=Theta(R, O),
        gamma1=gamma1,
        gamma2=gamma2,
        rng=rng,
        f_cur=f,
        i_cur=I,
        dr1_cur=kernel.dr_l1(R),
        o1_cur=float(np.abs(O).sum()),
    )


# ---------------------------------------------------------------------------
# transition kernels


def mh_step(state: ChainState, kernel: SamplerKernel) -> ChainState:
    """One joint-accept Metropolis-Hastings step (both blocks proposed together)."""
    rng = state.rng
    T = kernel.T
    R, O = state.theta
    g1, g2 = state.gamma1, state.gamma2
    i_sel = kernel.select_decimation(rng)
    eta = rng.standard_normal(2 * T)
    u = rng.random()
    eta_r, eta_o = eta[:T], eta[T:]

    rw = kernel.drift == "rw"
    if rw:
        grad_r = grad_o = None
    else:
        grad_r, grad_o = kernel.grads(R, O, state.i_cur)
    mu_r = kernel.mu_R(R, grad_r, g1, i_sel)
    mu_o = kernel.mu_O(O, grad_o, g2)
    Rp = mu_r + math.sqrt(2.0 * g1) * (kernel.dbar_inv @ eta_r)
    Op = mu_o + math.sqrt(2.0 * g2) * eta_o

    accepted = False
    fp, Ip = kernel.f_value(Rp, Op)
    if np.isfinite(fp):
        dr1_p = kernel.dr_l1(Rp)
        o1_p = float(np.abs(Op).sum())
        log_alpha = (state.f_cur - fp) + kernel.lam_r * (state.dr1_cur - dr1_p)
        log_alpha += kernel.lam_o * (state.o1_cur - o1_p)
        if not rw:
            grad_rp, grad_op = kernel.grads(Rp, Op, Ip)
            d_rev = kernel.dbar.apply(R - kernel.mu_R(Rp, grad_rp, g1, i_sel))
            e_rev = O - kernel.mu_O(Op, grad_op, g2)
            log_alpha += 0.5 * (eta_r @ eta_r) - d_rev @ d_rev / (4.0 * g1)
            log_alpha += 0.5 * (eta_o @ eta_o) - e_rev @ e_rev / (4.0 * g2)
        if log_alpha >= 0.0 or math.log(1.0 - u) < log_alpha:
            state.theta = Theta(Rp, Op)
            state.f_cur, state.i_cur = fp, Ip
            state.dr1_cur, state.o1_cur = dr1_p, o1_p
            accepted = True

    state.iteration += 1
    state.accept_r += accepted
    state.accept_o += accepted
    state.total_accept_r += accepted
    state.total_accept_o += accepted
    state.window_r += 1
    state.window_o += 1
    return state


def gibbs_step(state: ChainState, kernel: SamplerKernel) -> ChainState:
    """One Metropolis-within-Gibbs sweep: R block, then O block.

    Each block is accepted against its full conditional (the complete
    penalty sum, even when the proposal used one random decimation).
    """
    rng = state.rng
    T = kernel.T
    R, O = state.theta
    g1, g2 = state.gamma1, state.gamma2
    i_sel = kernel.select_decimation(rng)
    eta = rng.standard_normal(2 * T)
    u = rng.random(2)
    rw = kernel.drift == "rw"

    # R block
    eta_r = eta[:T]
    grad_r = None if rw else kernel.grads(R, O, state.i_cur)[0]
    mu_r = kernel.mu_R(R, grad_r, g1, i_sel)
    Rp = mu_r + math.sqrt(2.0 * g1) * (kernel.dbar_inv @ eta_r)
    fp, Ip = kernel.f_value(Rp, O)
    if np.isfinite(fp):
        dr1_p = kernel.dr_l1(Rp)
        log_alpha = state.f_cur - fp + kernel.lam_r * (state.dr1_cur - dr1_p)
        if not rw:
            grad_rp = kernel.grads(Rp, O, Ip)[0]
            d_rev = kernel.dbar.apply(R - kernel.mu_R(Rp, grad_rp, g1, i_sel))
            log_alpha += 0.5 * (eta_r @ eta_r) - d_rev @ d_rev / (4.0 * g1)
        if log_alpha >= 0.0 or math.log(1.0 - u[0]) < log_alpha:
            R = Rp
            state.f_cur, state.i_cur, state.dr1_cur = fp, Ip, dr1_p
            state.accept_r += 1
            state.total_accept_r += 1
    state.window_r += 1

    # O block, conditioning on the (possibly updated) R
    eta_o = eta[T:]
    grad_o = None if rw else kernel.grads(R, O, state.i_cur)[1]
    mu_o = kernel.mu_O(O, grad_o, g2)
    Op = mu_o + math.sqrt(2.0 * g2) * eta_o
    Ip = state.i_cur + (Op - O)
    fp = kernel.f_from_intensity(Ip)
    if np.isfinite(fp):
        o1_p = float(np.abs(Op).sum())
        log_alpha = state.f_cur - fp + kernel.lam_o * (state.o1_cur - o1_p)
        if not rw:
            grad_op = kernel.grads(R, Op, Ip)[1]
            e_rev = O - kernel.mu_O(Op, grad_op, g2)
            log_alpha += 0.5 * (eta_o @ eta_o) - e_rev @ e_rev / (4.0 * g2)
        if log_alpha >= 0.0 or math.log(1.0 - u[1]) < log_alpha:
            O = Op
            state.f_cur, state.i_cur, state.o1_cur = fp, Ip, o1_p
            state.accept_o += 1
            state.total_accept_o += 1
    state.window_o += 1

    state.theta = Theta(R, O)
    state.iteration += 1
    return state


def adapt_step_sizes(state: ChainState, window_stats: WindowStats, kernel: SamplerKernel) -> ChainState:
    """Windowed Robbins-Monro update of log gamma toward the acceptance target.

    The decay clock k advances only while the windowed acceptance stays
    within a trust band of the target and resets when it escapes, so the
    gain recovers full strength whenever the equilibrium moves (e.g. at the
    end of a transient); within the band the gain decays as k^-0.6.
    MH slaves gamma2 to gamma1; Gibbs adapts the blocks independently.
    """
    cfg = kernel.config
    target = cfg.target_acceptance
    band = cfg.adapt_trust_band

    state.adapt_k_r = state.adapt_k_r + 1 if abs(window_stats.acc_r - target) <= band else 0
    gain_r = cfg.adapt_gain * max(state.adapt_k_r, 1) ** (-cfg.adapt_decay)
    state.gamma1 *= math.exp(gain_r * (window_stats.acc_r - target))
    if kernel.scheme == "mh":
        state.gamma2 = _slaved_gamma2(kernel, state.gamma1)
    else:
        state.adapt_k_o = state.adapt_k_o + 1 if abs(window_stats.acc_o - target) <= band else 0
        gain_o = cfg.adapt_gain * max(state.adapt_k_o, 1) ** (-cfg.adapt_decay)
        state.gamma2 *= math.exp(gain_o * (window_stats.acc_o - target))
    return state


def run_chain(model: EpiModel, diffops: DiffOps, config: SamplerConfig, rng=None) -> ChainTrace:
    """Run one chain: adaptive burn-in, then frozen-step sampling.

    Post-burn-in states are stored every ``thinning`` iterations; the
    acceptance and step-size histories are recorded per adaptation window.
    """
    kernel = SamplerKernel(model, diffops, config)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
    state = init_state(kernel, rng)
    step = mh_step if config.scheme == "mh" else gibbs_step

    n_samples = (config.n_max - config.n_burnin) // config.thinning
    samples_r = np.empty((n_samples, kernel.T))
    samples_o = np.empty((n_samples, kernel.T))
    si = 0
    acc_rows, step_rows = [], []
    full_r = [] if config.full_r_stride > 0 else None

    win = config.adapt_window
    for n in range(1, config.n_max + 1):
        step(state, kernel)
        if full_r is not None and n % config.full_r_stride == 0:
            full_r.append(state.theta.R.copy())
        if state.window_r >= win:
            stats = WindowStats(state.accept_r / state.window_r, state.accept_o / state.window_o)
            acc_rows.append((n, stats.acc_r, stats.acc_o))
            if n <= config.n_burnin:
                adapt_step_sizes(state, stats, kernel)
                step_rows.append((n, state.gamma1, state.gamma2))
            state.accept_r = state.accept_o = 0
            state.window_r = state.window_o = 0
        if n > config.n_burnin and (n - config.n_burnin) % config.thinning == 0:
            samples_r[si] = state.theta.R
            samples_o[si] = state.theta.O
            si += 1

    return ChainTrace(
        samples_r=samples_r[:si],
        samples_o=samples_o[:si],
        acceptance=np.array(acc_rows) if acc_rows else np.empty((0, 3)),
        stepsizes=np.array(step_rows) if step_rows else np.empty((0, 3)),
        seed=config.seed,
        n_burnin=config.n_burnin,
        thinning=config.thinning,
        full_r=np.array(full_r) if full_r else None,
        full_r_stride=config.full_r_stride,
    )


def chain_seed_sequences(master_seed: int, n_chains: int):
    """Independent child streams for parallel chains from one master seed."""
    return np.random.SeedSequence(master_seed).spawn(n_chains)


def run_chains(model: EpiModel, diffops: DiffOps, config: SamplerConfig, n_chains: int):
    """Run ``n_chains`` independent chains with provably separate RNG streams."""
    traces = []
    for k, ss in enumerate(chain_seed_sequences(config.seed, n_chains)):
        rng = np.random.Generator(np.random.Philox(ss))
        traces.append(run_chain(model, diffops, config, rng=rng))
    return traces
