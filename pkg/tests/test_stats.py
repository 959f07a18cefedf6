import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cfrcast.errors import ConfigError, DegenerateInputError
from cfrcast.sim import CfrSeries, ScenarioConfig, run_simulation
from cfrcast.stats import (
    band_power_series, count_deep_fades, fade_depth_db, normalized_covariance, per_bin_covariance,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def brute_covariance(x, y, tau, unbiased=True):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    s = sum((x[j] - mx) * (y[j - tau] - my) for j in range(tau, n))
    return s / ((n - tau) if unbiased else n) / np.sqrt(vx * vy)


def test_matches_brute_force_definition():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=40), rng.normal(size=40)
    prof = normalized_covariance(x, y, 10)
    assert prof.kind == "cross"
    for tau in range(11):
        assert prof.values[tau] == pytest.approx(brute_covariance(list(x), list(y), tau), abs=1e-13)
    biased = normalized_covariance(x, y, 10, estimator="biased")
    assert biased.values[7] == pytest.approx(brute_covariance(list(x), list(y), 7, False), abs=1e-13)


def test_autocovariance_lag_zero_is_one():
    x = np.random.default_rng(1).exponential(size=100)
    prof = normalized_covariance(x, x, 5)
    assert prof.kind == "auto" and prof.values[0] == 1.0


def test_independent_white_noise_is_uncorrelated():
    # Monte-Carlo over 20 seed pairs; each lag estimate has std ~ 1/64
    worst = 0.0
    for s in range(20):
        a = np.random.default_rng(2 * s).normal(size=4096)
        b = np.random.default_rng(2 * s + 1).normal(size=4096)
        worst = max(worst, normalized_covariance(a, b, 100).max_abs())
    assert worst < 0.1


def test_sinusoid_autocovariance_is_cosine():
    omega = 2 * np.pi / 37.0
    x = np.cos(omega * np.arange(20000))
    prof = normalized_covariance(x, x, 200)
    assert np.allclose(prof.values, np.cos(omega * prof.lags), atol=0.01)


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(3, 60), elements=finite))
def test_reversal_symmetry(x):
    if np.ptp(x) < 1e-6:
        return
    max_lag = len(x) - 1
    fwd = normalized_covariance(x, x, max_lag)
    rev = normalized_covariance(x[::-1].copy(), x[::-1].copy(), max_lag)
    assert np.allclose(fwd.values, rev.values, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 60).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite),
                                                       arrays(float, n, elements=finite))))
def test_biased_estimator_bounded(xy):
    x, y = xy
    if np.ptp(x) < 1e-6 or np.ptp(y) < 1e-6:
        return
    prof = normalized_covariance(x, y, len(x) - 1, estimator="biased")
    assert np.all(np.abs(prof.values) <= 1 + 1e-9)


def test_unbiased_estimator_can_exceed_one_at_long_lags():
    # with only N - tau terms left the 1 / (N - tau) weight is not a contraction
    x = np.array([1.0, 0.0, -1.0])
    assert normalized_covariance(x, x, 2).values[2] == pytest.approx(-1.5)


def test_errors():
    with pytest.raises(DegenerateInputError):
        normalized_covariance(np.ones(10), np.arange(10.0), 3)
    with pytest.raises(ConfigError):
        normalized_covariance(np.arange(5.0), np.arange(5.0), 5)
    with pytest.raises(ConfigError):
        normalized_covariance(np.arange(5.0), np.arange(6.0), 2)
    with pytest.raises(ConfigError):
        normalized_covariance(np.arange(5.0), np.arange(5.0), 2, estimator="fft")


def test_first_lag_below_and_csv():
    x = np.cos(2 * np.pi * np.arange(400) / 40)
    prof = normalized_covariance(x, x, 12)
    assert prof.first_lag_below(0.5) == 7
    text = prof.to_csv()
    lines = text.split("\n")
    assert lines[0] == "lag,value,kind"
    assert lines[1] == "0,1,auto"
    assert text.endswith("\n") and "\r" not in text


def _series(values):
    return CfrSeries(np.asarray(values, dtype=complex), 1e-3, (0.0, 1.0), "x")


def test_band_power_examples():
    assert np.array_equal(band_power_series(_series([[1, 1j]])), [2.0])
    assert np.array_equal(band_power_series(_series(np.zeros((3, 4)))), np.zeros(3))


def test_static_scene_has_constant_band_power():
    cfg = ScenarioConfig(n_r=10, n_m=0, mu_rx=0.0, sigma2_rx=0.0, snr_db=None,
                         f_s=12.8e6, bandwidth_b=3.2e6)
    p = band_power_series(run_simulation(cfg, 8))
    assert np.all(p == p[0])


def test_per_bin_covariance_shape():
    cfg = ScenarioConfig(n_r=20, n_m=5, f_s=12.8e6, bandwidth_b=3.2e6)
    a = run_simulation(cfg, 30)
    out = per_bin_covariance(a, a, 5)
    assert out.shape == (32, 6) and np.all(out[:, 0] == 1.0)


def test_fade_depth():
    s = _series([[1.0, 1.0, 0.01], [1.0, 1.0, 1.0]])
    depth = fade_depth_db(s)
    assert depth[0] == pytest.approx(20 * np.log10(0.01 / (2.01 / 3)))
    assert depth[1] == 0.0
    assert count_deep_fades(s) == 1
    assert count_deep_fades(s, 40.0) == 0
