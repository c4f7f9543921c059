import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busarrival import DataError
from busarrival.sar import (
    NonStationaryFitError,
    SarModel,
    SeasonalARForecaster,
    fit_additive,
    fit_best,
    fit_multiplicative,
    forecast,
    load_models,
    predict_travel_time,
    save_models,
    screen_and_difference,
    select_order,
)
from busarrival.stats import linreg
from busarrival.synth import SynthSpec, _simulate_sar, synth_generate


def _sim(a, n, sigma=1.0, seed=0, burn=500):
    rng = np.random.default_rng(seed)
    return _simulate_sar(np.asarray(a, float), sigma * rng.standard_normal(n + burn))[burn:]


def test_ar1_hand_forecast():
    m = SarModel("additive", 1, 2, [0.6, 0.0, 0.0], 0.0, 1.0, 0.0)
    np.testing.assert_allclose(forecast(m, [9.0, 5.0, 2.0], h=2), [1.2, 0.72], atol=1e-12)


def test_differenced_forecast_adds_back_level():
    m = SarModel("additive", 1, 2, [0.5, 0.0, 0.0], 0.1, 1.0, 0.0, differenced=True)
    # next = last + c + 0.5 * (last - previous)
    assert forecast(m, [0.0, 1.0, 3.0, 4.0])[0] == pytest.approx(4.0 + 0.1 + 0.5 * 1.0)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.integers(2, 6))
def test_multiplicative_expansion_matches_polynomial_product(phi, Phi, s):
    m = SarModel("multiplicative", 1, s, [phi, Phi], 0.0, 1.0, 0.0)
    left = np.array([1.0, -phi])
    right = np.zeros(s + 1)
    right[0], right[s] = 1.0, -Phi
    prod = np.convolve(left, right)  # ascending powers of L
    np.testing.assert_allclose(m.ar_polynomial(), -prod[1:], atol=1e-15)


def test_expansion_p1_s2_explicit():
    m = SarModel("multiplicative", 1, 2, [0.5, 0.3], 0.0, 1.0, 0.0)
    np.testing.assert_allclose(m.ar_polynomial(), [0.5, 0.3, -0.15])


def test_multiplicative_with_zero_seasonal_is_plain_regression():
    y = _sim([0.6, 0.2], 600, seed=3)
    p, s = 2, 5
    m = fit_multiplicative(y, p, s, seasonal_coef=0.0)
    start = p + s
    X = np.column_stack([y[start - k : len(y) - k] for k in (1, 2)])
    ref = linreg(X, y[start:])
    np.testing.assert_allclose([m.intercept, *m.coeffs[:p]], ref.weights, atol=1e-10)


def test_additive_matches_three_column_regression():
    y = _sim([0.4, 0.3], 500, seed=4)
    m = fit_additive(y, 1, 2)
    # common effective sample starts at p + s = 3
    X = np.column_stack([y[2:-1], y[1:-2]])
    ref = linreg(X, y[3:])
    np.testing.assert_allclose([m.intercept, *m.coeffs[:2]], ref.weights, atol=1e-10)
    assert m.coeffs[2] == 0.0


def test_multiplicative_recovers_coefficients():
    spec = SynthSpec(phi=(0.5, 0.2), seasonal=0.3, sigma=0.2, days=10_000 // 19 + 1)
    y = np.log(synth_generate(spec)[1].values).ravel()
    m = fit_multiplicative(y, 2, 19)
    np.testing.assert_allclose(m.coeffs, [0.5, 0.2, 0.3], atol=0.05)
    assert m.intercept == pytest.approx(math.log(60) * (1 - 0.7) * (1 - 0.3), abs=0.05)


@pytest.mark.parametrize("kind", ["sar_multiplicative", "sar_additive"])
def test_fit_best_prefers_generating_form(kind):
    # with a long sample the generating form should win by AIC most of the time
    wins = 0
    for seed in range(10):
        spec = SynthSpec(kind=kind, phi=(0.5,), seasonal=0.4, sigma=0.2, days=150, bins=6, seed=seed)
        y = np.log(synth_generate(spec)[1].values).ravel()
        wins += fit_best(y, 1, 6).kind == kind.split("_")[1]
    assert wins >= 8


def test_fit_best_tie_goes_to_additive(monkeypatch):
    import busarrival.sar as sar

    y = _sim([0.5], 300, seed=1)
    add = sar.fit_additive(y, 1, 4)
    mul = sar.fit_multiplicative(y, 1, 4)
    monkeypatch.setattr(sar, "fit_multiplicative", lambda *a, **k: mul.__class__(**{**mul.__dict__, "aic": add.aic}))
    best = sar.fit_best(y, 1, 4)
    assert best.kind == "additive"
    assert set(best.candidate_aic) == {"additive", "multiplicative"}


def test_fit_best_keeps_lower_aic():
    y = _sim([0.5], 300, seed=2)
    best = fit_best(y, 1, 4)
    assert best.aic == min(best.candidate_aic.values())


def test_select_order_floor_is_one():
    rng = np.random.default_rng(5)
    # white noise rarely has significant PACF; the floor keeps p >= 1
    orders = [select_order(rng.standard_normal(400), 19) for _ in range(5)]
    assert min(orders) >= 1


def test_select_order_finds_ar2():
    y = _sim([0.5, 0.3], 3000, seed=6)
    assert select_order(y, 19, max_order=5) >= 2


def test_select_order_capped_below_season():
    y = _sim([0.5, 0.3], 2000, seed=7)
    assert select_order(y, 3, max_order=5) <= 2


def test_nonstationary_fit_rejected():
    assert not SarModel("additive", 1, 2, [1.0, 0.0, 0.0], 0.0, 1.0, 0.0).is_stationary()
    rng = np.random.default_rng(8)
    y = np.zeros(300)
    for t in range(1, 300):
        y[t] = 1.03 * y[t - 1] + rng.standard_normal()
    with pytest.raises(NonStationaryFitError):
        fit_additive(y, 1, 2)


def test_screen_differences_random_walk_only():
    rng = np.random.default_rng(9)
    walk = np.cumsum(rng.standard_normal(600))
    _, diffed, _ = screen_and_difference(walk)
    assert diffed
    _, diffed, _ = screen_and_difference(_sim([0.5], 600, seed=9))
    assert not diffed


def test_short_series_is_error():
    with pytest.raises(DataError):
        fit_additive(np.arange(10.0), 2, 5)


def test_model_validation():
    with pytest.raises(ValueError):
        SarModel("multiplicative", 1, 2, [0.1], 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        SarModel("additive", 3, 2, [0.1] * 5, 0.0, 1.0, 0.0)


def test_persistence_round_trip(tmp_path):
    y = _sim([0.5, 0.2], 800, seed=10)
    models = [
        fit_multiplicative(y, 2, 19, section=1),
        fit_additive(y, 1, 19, section=2, differenced=True, domain="linear"),
    ]
    path = tmp_path / "m.csv"
    save_models(models, path)
    back = load_models(path)
    for m in models:
        b = back[m.section]
        assert (b.kind, b.p, b.s, b.domain, b.differenced) == (m.kind, m.p, m.s, m.domain, m.differenced)
        np.testing.assert_allclose(b.coeffs, m.coeffs, atol=1e-12)
        for attr in ("intercept", "noise_variance", "aic", "train_mean"):
            assert getattr(b, attr) == pytest.approx(getattr(m, attr), abs=1e-12)


def test_predict_travel_time_exponentiates():
    zero = SarModel("additive", 1, 2, [0.0, 0.0, 0.0], 0.0, 1.0, 0.0)
    assert predict_travel_time(zero, [5.0, 7.0, 9.0])[0] == pytest.approx(1.0)
    level = SarModel("additive", 1, 2, [0.0, 0.0, 0.0], math.log(60), 1.0, 0.0)
    assert predict_travel_time(level, [5.0, 7.0, 9.0])[0] == pytest.approx(60.0)


def test_predict_travel_time_rejects_non_positive():
    m = SarModel("additive", 1, 2, [0.0, 0.0, 0.0], 0.0, 1.0, 0.0)
    with pytest.raises(DataError):
        predict_travel_time(m, [5.0, 0.0, 1.0])


def test_estimator_fit_predict_forecast_consistent():
    series = synth_generate(SynthSpec(days=34, seed=11))[1]
    train, test = series.values[:27], series.values[27:]
    est = SeasonalARForecaster().fit(train)
    pred = est.predict(test)
    assert pred.shape == test.shape and np.all(pred > 0)
    # the first one-step prediction equals a one-step forecast from the training history
    assert pred[0, 0] == pytest.approx(est.forecast(steps=1)[0], rel=1e-12)
    # a mid-day one-step prediction equals forecast from the partial day
    assert pred[2, 5] == pytest.approx(est.forecast(test[2, :5], 1, previous_days=test[:2])[0], rel=1e-12)


def test_estimator_missing_values_filled():
    series = synth_generate(SynthSpec(days=30, seed=12))[1]
    est = SeasonalARForecaster(kind="multiplicative", order=2).fit(series.values[:27])
    X = series.values[27:].copy()
    X[1, 3] = np.nan
    assert np.all(np.isfinite(est.predict(X)))


def test_estimator_unknown_kind():
    series = synth_generate(SynthSpec(days=30, seed=12))[1]
    with pytest.raises(ValueError):
        SeasonalARForecaster(kind="bogus").fit(series.values)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(-2, 2), st.integers(1, 5))
def test_forecast_is_affine_in_history(phi, Phi, c, h):
    m = SarModel("multiplicative", 1, 3, [phi, Phi], c, 1.0, 0.0)
    rng = np.random.default_rng(0)
    x, z = rng.standard_normal(8), rng.standard_normal(8)
    f0 = forecast(m, np.zeros(8), h)
    lhs = forecast(m, 2 * x + z, h) - f0
    rhs = 2 * (forecast(m, x, h) - f0) + (forecast(m, z, h) - f0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
