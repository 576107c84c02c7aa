import datetime
from pathlib import Path

import numpy as np
import pytest

from proxmc.ingest import lambda_defaults, parse_jhu_csv, to_daily, window
from proxmc.model import CountSeries, EpiModel, Hyperparams, SerialInterval, Theta, build_serial_interval, in_domain

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_CSV = DATA_DIR / "synthetic_confirmed.csv"
FIXTURE_COUNTRY = "Utopia"
# assessment window (flat counts, used for mixing comparisons) and band
# window (higher counts, used for credibility-interval checks)
ASSESS_START = "2021-04-28"
BAND_START = "2021-06-30"


def make_counts(T=10, tau=5, seed=0, base=20.0, start=datetime.date(2021, 1, 1)):
    """Small synthetic count series driven by the renewal process."""
    rng = np.random.default_rng(seed)
    w = np.exp(-0.4 * np.arange(1, tau + 1))
    w /= w.sum()
    buf = list(rng.poisson(base, size=tau).astype(float))
    vals = np.empty(T)
    for t in range(T):
        past = np.array(buf[-tau:][::-1])
        vals[t] = rng.poisson(1.0 * w @ past)
        buf.append(vals[t])
    dates = tuple(start + datetime.timedelta(days=d) for d in range(T))
    return CountSeries(dates=dates, values=vals, history=np.array(buf[:tau])), SerialInterval(weights=w)


def make_model(T=10, tau=5, seed=0, base=20.0, lambda_r=1.0, lambda_o=0.5):
    counts, phi = make_counts(T=T, tau=tau, seed=seed, base=base)
    return EpiModel.build(counts, phi, Hyperparams(lambda_r=lambda_r, lambda_o=lambda_o))


def feasible_theta(model, rng, r_scale=0.5):
    """Random point of the support, biased toward the non-informative center."""
    for _ in range(1000):
        R = np.abs(1.0 + r_scale * rng.standard_normal(model.T))
        O = 0.1 * rng.standard_normal(model.T) * (1.0 + model.counts.values)
        theta = Theta(R, O)
        if in_domain(theta, model):
            return theta
    raise AssertionError("could not draw a feasible point")


@pytest.fixture(scope="session")
def fixture_daily():
    return to_daily(parse_jhu_csv(FIXTURE_CSV, FIXTURE_COUNTRY))


@pytest.fixture(scope="session")
def band_window_model(fixture_daily):
    counts = window(fixture_daily, BAND_START)
    return EpiModel.build(counts, build_serial_interval(), lambda_defaults(counts))


@pytest.fixture(scope="session")
def assess_window_model(fixture_daily):
    counts = window(fixture_daily, ASSESS_START)
    return EpiModel.build(counts, build_serial_interval(), lambda_defaults(counts))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
