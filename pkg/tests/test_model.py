import datetime

import numpy as np
import pytest
from scipy import stats

from conftest import feasible_theta, make_counts, make_model
from proxmc.errors import ConfigurationError, DomainError
from proxmc.linops import build_D
from proxmc.model import (
    CountSeries,
    EpiModel,
    Hyperparams,
    SerialInterval,
    Theta,
    build_serial_interval,
    f_data,
    g_prior,
    grad_f,
    in_domain,
    intensity,
    neg_log_posterior,
    weighted_past_counts,
)


def dates(n, start=datetime.date(2021, 1, 1)):
    return tuple(start + datetime.timedelta(days=d) for d in range(n))


class TestCountSeries:
    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            CountSeries(dates=dates(3), values=[1.0, -1.0, 2.0], history=[0.0, 0.0])

    def test_rejects_gap(self):
        bad = (datetime.date(2021, 1, 1), datetime.date(2021, 1, 3), datetime.date(2021, 1, 4))
        with pytest.raises(ConfigurationError):
            CountSeries(dates=bad, values=[1.0, 1.0, 1.0], history=[])


class TestWeightedPastCounts:
    def test_all_zero(self):
        counts = CountSeries(dates=dates(5), values=np.zeros(5), history=np.zeros(3))
        phi = SerialInterval(weights=np.array([0.5, 0.3, 0.2]))
        assert np.all(weighted_past_counts(counts, phi) == 0.0)

    def test_delta_kernel(self):
        counts = CountSeries(dates=dates(6), values=np.full(6, 7.0), history=np.full(4, 7.0))
        phi = SerialInterval(weights=np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(weighted_past_counts(counts, phi), np.full(6, 7.0))

    def test_against_double_loop(self, rng):
        T, tau = 10, 4
        z = rng.integers(0, 21, T).astype(float)
        hist = rng.integers(0, 21, tau).astype(float)
        w = rng.uniform(0.1, 1.0, tau)
        w /= w.sum()
        counts = CountSeries(dates=dates(T), values=z, history=hist)
        got = weighted_past_counts(counts, SerialInterval(weights=w))
        full = np.concatenate([hist, z])
        for t in range(T):
            expect = sum(w[u - 1] * full[tau + t - u] for u in range(1, tau + 1))
            assert got[t] == pytest.approx(expect, rel=1e-12)

    def test_history_length_mismatch(self):
        counts = CountSeries(dates=dates(4), values=np.ones(4), history=np.ones(2))
        with pytest.raises(ConfigurationError):
            weighted_past_counts(counts, SerialInterval(weights=np.array([0.5, 0.25, 0.25])))


class TestIntensityDomain:
    def test_identity_scaling(self):
        model = make_model()
        theta = Theta(np.ones(model.T), np.zeros(model.T))
        np.testing.assert_array_equal(intensity(theta, model), model.phi_z)

    def test_pure_outlier(self):
        model = make_model()
        theta = Theta(np.zeros(model.T), np.ones(model.T))
        np.testing.assert_array_equal(intensity(theta, model), np.ones(model.T))

    def test_elementwise_recompute(self, rng):
        model = make_model()
        theta = feasible_theta(model, rng)
        expect = np.array([theta.R[t] * model.phi_z[t] + theta.O[t] for t in range(model.T)])
        np.testing.assert_allclose(intensity(theta, model), expect, rtol=1e-15)

    def test_in_domain_basic(self):
        model = make_model()
        assert (model.counts.values > 0).all() and (model.phi_z > 0).all()
        assert in_domain(Theta(np.ones(model.T), np.zeros(model.T)), model)

    def test_negative_r_outside(self):
        model = make_model()
        R = np.ones(model.T)
        R[3] = -1e-9
        assert not in_domain(Theta(R, np.zeros(model.T)), model)

    def test_zero_intensity_at_positive_count(self):
        model = make_model()
        t = int(np.flatnonzero(model.counts.values > 0)[[0]])
        R = np.ones(model.T)
        O = np.zeros(model.T)
        O[t] = -R[t] * model.phi_z[t]
        assert not in_domain(Theta(R, O), model)


class TestFData:
    def test_all_zero_counts(self):
        counts = CountSeries(dates=dates(6), values=np.zeros(6), history=np.zeros(3))
        phi = SerialInterval(weights=np.array([0.5, 0.3, 0.2]))
        model = EpiModel.build(counts, phi, Hyperparams(1.0, 1.0))
        theta = Theta(np.abs(np.linspace(0, 2, 6)), np.zeros(6))
        assert f_data(theta, model) == 0.0

    def test_intensity_equals_counts(self, rng):
        model = make_model(seed=3)
        z = model.counts.values
        R = np.abs(1.0 + 0.2 * rng.standard_normal(model.T))
        O = z - R * model.phi_z
        theta = Theta(R, O)
        assert in_domain(theta, model)
        pos = z > 0
        expect = np.sum(z[pos] - z[pos] * np.log(z[pos])) + np.sum(z[~pos])
        assert f_data(theta, model) == pytest.approx(expect, rel=1e-12)

    def test_off_domain_is_infinite(self):
        model = make_model()
        R = -np.ones(model.T)
        assert f_data(Theta(R, np.zeros(model.T)), model) == np.inf

    def test_convex_along_segments(self, rng):
        model = make_model(seed=5)
        for _ in range(40):
            t1, t2 = feasible_theta(model, rng), feasible_theta(model, rng)
            mu = rng.uniform(0.05, 0.95)
            mid = Theta(mu * t1.R + (1 - mu) * t2.R, mu * t1.O + (1 - mu) * t2.O)
            f_mid = f_data(mid, model)
            assert f_mid <= mu * f_data(t1, model) + (1 - mu) * f_data(t2, model) + 1e-10


class TestGPrior:
    def test_affine_r_zero_outliers(self):
        model = make_model()
        D = build_D(model.T)
        t = np.arange(model.T, dtype=float)
        theta = Theta(1.5 + 0.25 * t, np.zeros(model.T))
        assert g_prior(theta, D, model.hyper) == 0.0

    def test_direct_sum(self):
        model = make_model(lambda_r=1.0, lambda_o=0.05)
        D = build_D(model.T)
        O = np.zeros(model.T)
        O[0], O[1] = 1.0, -1.0
        assert g_prior(Theta(np.zeros(model.T), O), D, model.hyper) == pytest.approx(0.1)

    def test_dense_recompute(self, rng):
        model = make_model(lambda_r=1.7, lambda_o=0.3)
        D = build_D(model.T)
        theta = feasible_theta(model, rng)
        expect = 1.7 * np.abs(D.dense() @ theta.R).sum() + 0.3 * np.abs(theta.O).sum()
        assert g_prior(theta, D, model.hyper) == pytest.approx(expect, rel=1e-12)

    def test_zero_iff_affine_and_sparse(self, rng):
        model = make_model()
        D = build_D(model.T)
        t = np.arange(model.T, dtype=float)
        assert g_prior(Theta(2.0 + 0.5 * t, np.zeros(model.T)), D, model.hyper) == 0.0
        for _ in range(20):
            theta = feasible_theta(model, rng)
            if np.abs(D.apply(theta.R)).sum() > 1e-12 or np.abs(theta.O).sum() > 1e-12:
                assert g_prior(theta, D, model.hyper) > 0.0


class TestNegLogPosterior:
    def test_finite_exactly_on_domain(self, rng):
        model = make_model(seed=7)
        D = build_D(model.T)
        for _ in range(50):
            R = rng.uniform(-0.5, 2.0, model.T)
            O = rng.uniform(-30.0, 30.0, model.T)
            theta = Theta(R, O)
            value = neg_log_posterior(theta, model, D)
            assert np.isfinite(value) == in_domain(theta, model)


class TestGradF:
    def test_zero_counts_gradient(self):
        counts = CountSeries(dates=dates(6), values=np.zeros(6), history=np.full(3, 4.0))
        phi = SerialInterval(weights=np.array([0.5, 0.3, 0.2]))
        model = EpiModel.build(counts, phi, Hyperparams(1.0, 1.0))
        g_r, g_o = grad_f(Theta(np.ones(6), np.ones(6)), model)
        np.testing.assert_array_equal(g_r, model.phi_z)
        np.testing.assert_array_equal(g_o, np.ones(6))

    def test_stationary_at_intensity_equals_counts(self, rng):
        model = make_model(seed=11)
        z = model.counts.values
        assert (z > 0).all()
        R = np.abs(1.0 + 0.1 * rng.standard_normal(model.T))
        theta = Theta(R, z - R * model.phi_z)
        g_r, g_o = grad_f(theta, model)
        np.testing.assert_allclose(g_r, 0.0, atol=1e-9)
        np.testing.assert_allclose(g_o, 0.0, atol=1e-12)

    def test_boundary_raises(self):
        model = make_model()
        t = int(np.flatnonzero(model.counts.values > 0)[0])
        R = np.ones(model.T)
        O = np.zeros(model.T)
        O[t] = -R[t] * model.phi_z[t]
        with pytest.raises(DomainError):
            grad_f(Theta(R, O), model)

    def test_against_central_differences(self, rng):
        model = make_model(seed=13, base=50.0)
        z = model.counts.values
        pos = z > 0
        for _ in range(20):
            theta = feasible_theta(model, rng)
            g_r, g_o = grad_f(theta, model)
            g = np.concatenate([g_r, g_o])
            num = np.empty(2 * model.T)
            I = intensity(theta, model)

            def term(i_val, t):
                # single-day contribution; perturbations only touch one term
                if z[t] == 0:
                    return i_val
                return i_val - z[t] * np.log(i_val)

            for t in range(model.T):
                h = 1e-5 * max(1.0, abs(theta.R[t]))
                num[t] = (term(I[t] + h * model.phi_z[t], t) - term(I[t] - h * model.phi_z[t], t)) / (2 * h)
                h = 1e-5 * max(1.0, abs(theta.O[t]))
                num[model.T + t] = (term(I[t] + h, t) - term(I[t] - h, t)) / (2 * h)
            assert np.linalg.norm(num - g) / np.linalg.norm(g) < 1e-6


class TestSerialInterval:
    def test_moment_matched_discretization(self):
        si = build_serial_interval()
        shape = (6.6 / 3.5) ** 2
        scale = 3.5**2 / 6.6
        assert shape == pytest.approx(3.5559, abs=1e-4)
        assert scale == pytest.approx(1.8561, abs=1e-4)
        edges = stats.gamma.cdf(np.arange(27), a=shape, scale=scale)
        expect = np.diff(edges)
        expect /= expect.sum()
        np.testing.assert_allclose(si.weights, expect, rtol=1e-12)

    def test_normalized(self):
        assert abs(build_serial_interval().weights.sum() - 1.0) < 1e-12

    def test_mode_location(self):
        si = build_serial_interval()
        assert int(np.argmax(si.weights)) + 1 in (4, 5, 6)

    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            build_serial_interval(mean=-1.0)
        with pytest.raises(ConfigurationError):
            build_serial_interval(tau=0)
