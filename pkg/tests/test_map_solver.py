import datetime

import numpy as np
import pytest

from conftest import make_counts
from proxmc.linops import build_D
from proxmc.map_solver import map_uniqueness_check, recover_subgradient, solve_map
from proxmc.model import (
    CountSeries,
    EpiModel,
    Hyperparams,
    SerialInterval,
    Theta,
    f_data,
    g_prior,
    in_domain,
)


def grid_oracle_t3(model, r_hi=3.0, o_lo=-2.0, o_hi=2.0, res=0.01):
    """Exhaustive objective minimum over the (R, O) product grid at T = 3.

    The objective separates across days for fixed R, so each day's optimal
    O contribution is tabulated over the O grid once per R value; the outer
    scan over the full R grid is exact enumeration of the product grid.
    """
    z = model.counts.values
    lam_r, lam_o = model.hyper.lambda_r, model.hyper.lambda_o
    rg = np.round(np.arange(0.0, r_hi + 1e-12, res), 12)
    og = np.round(np.arange(o_lo, o_hi + 1e-12, res), 12)
    tables = []
    for t in range(3):
        I = rg[:, None] * model.phi_z[t] + og[None, :]
        if z[t] > 0:
            term = np.where(I > 0, I - z[t] * np.log(np.where(I > 0, I, 1.0)), np.inf)
        else:
            term = np.where(I >= 0, I, np.inf)
        tables.append((term + lam_o * np.abs(og)[None, :]).min(axis=1))
    best = np.inf
    c23 = tables[1][:, None] + tables[2][None, :]
    pen_r = lam_r / np.sqrt(6.0)
    for i1, r1 in enumerate(rg):
        tot = tables[0][i1] + c23 + pen_r * np.abs(r1 - 2.0 * rg[:, None] + rg[None, :])
        m = tot.min()
        if m < best:
            best = m
    return best


def t3_model(seed=0):
    dates = tuple(datetime.date(2021, 5, 1) + datetime.timedelta(days=d) for d in range(3))
    counts = CountSeries(dates=dates, values=np.array([4.0, 6.0, 3.0]), history=np.array([5.0, 4.0]))
    phi = SerialInterval(weights=np.array([0.6, 0.4]))
    return EpiModel.build(counts, phi, Hyperparams(lambda_r=0.9, lambda_o=0.7))


def noise_free_model(T=35, tau=8, base=100.0):
    """Counts generated exactly by the renewal mean with R = 1, O = 0."""
    w = np.exp(-0.3 * np.arange(1, tau + 1))
    w /= w.sum()
    hist = np.full(tau, base)
    buf = list(hist)
    vals = np.empty(T)
    for t in range(T):
        past = np.array(buf[-tau:][::-1])
        vals[t] = np.round(1.0 * w @ past)
        buf.append(vals[t])
    dates = tuple(datetime.date(2021, 2, 1) + datetime.timedelta(days=d) for d in range(T))
    counts = CountSeries(dates=dates, values=vals, history=hist)
    model = EpiModel.build(counts, SerialInterval(weights=w), Hyperparams(lambda_r=5.0, lambda_o=0.05))
    return model


class TestSolveMap:
    def test_t3_grid_oracle(self):
        model = t3_model()
        D = build_D(3)
        theta, trace = solve_map(model, D, max_iters=40000, tol=1e-12)
        grid_best = grid_oracle_t3(model)
        assert abs(trace[-1] - grid_best) < 1e-3
        assert in_domain(theta, model)

    def test_objective_eventually_monotone(self):
        model = t3_model()
        D = build_D(3)
        _, trace = solve_map(model, D, max_iters=20000, tol=1e-11)
        tail = trace[100:]
        increases = np.diff(tail)
        assert increases.max() <= 1e-9 * max(1.0, abs(tail[-1]))

    def test_noise_free_recovery(self):
        model = noise_free_model()
        D = build_D(model.T)
        theta, trace = solve_map(model, D, max_iters=60000, tol=1e-12)
        interior = slice(3, model.T - 3)
        assert np.abs(theta.R[interior] - 1.0).max() < 0.05
        assert np.mean(theta.O == 0.0) >= 0.8
        assert f_data(theta, model) + g_prior(theta, D, model.hyper) == pytest.approx(trace[-1])

    def test_fermat_residual(self):
        model = noise_free_model(T=20)
        D = build_D(model.T)
        theta, _ = solve_map(model, D, max_iters=60000, tol=1e-12)
        _, residual, ambiguous = recover_subgradient(theta, model, D)
        assert residual < 1e-4

    def test_warns_when_hypotheses_unmet(self):
        dates = tuple(datetime.date(2021, 5, 1) + datetime.timedelta(days=d) for d in range(3))
        counts = CountSeries(dates=dates, values=np.zeros(3), history=np.zeros(2))
        model = EpiModel.build(counts, SerialInterval(weights=np.array([0.6, 0.4])), Hyperparams(1.0, 1.0))
        with pytest.warns(UserWarning):
            solve_map(model, build_D(3), max_iters=300, tol=1e-6)


class TestUniqueness:
    def test_noise_free_instance_unique(self):
        model = noise_free_model(T=20)
        D = build_D(model.T)
        theta, _ = solve_map(model, D, max_iters=60000, tol=1e-12)
        assert map_uniqueness_check(theta, model, D) == "unique"

    def test_no_data_coupling_nonunique(self):
        # zero weighted past counts leave (R, 0) directions unconstrained
        dates = tuple(datetime.date(2021, 5, 1) + datetime.timedelta(days=d) for d in range(4))
        counts = CountSeries(dates=dates, values=np.zeros(4), history=np.zeros(2))
        model = EpiModel.build(counts, SerialInterval(weights=np.array([0.5, 0.5])), Hyperparams(lambda_r=1.0, lambda_o=2.0))
        theta = Theta(np.ones(4), np.zeros(4))
        assert map_uniqueness_check(theta, model, D := build_D(4)) == "possibly-nonunique"

    def test_degenerate_active_set_nonunique(self, monkeypatch):
        model = t3_model()
        D = build_D(3)
        theta, _ = solve_map(model, D, max_iters=5000, tol=1e-10)
        import proxmc.map_solver as ms

        def fake_recover(*args):
            return np.ones(2 * 3 - 2), 0.0, False

        monkeypatch.setattr(ms, "recover_subgradient", fake_recover)
        assert ms.map_uniqueness_check(theta, model, D) == "possibly-nonunique"

    def test_ambiguous_recovery_is_conservative(self, monkeypatch):
        model = t3_model()
        D = build_D(3)
        theta, _ = solve_map(model, D, max_iters=5000, tol=1e-10)
        import proxmc.map_solver as ms

        def fake_recover(*args):
            return np.zeros(4), 0.0, True

        monkeypatch.setattr(ms, "recover_subgradient", fake_recover)
        assert ms.map_uniqueness_check(theta, model, D) == "possibly-nonunique"
