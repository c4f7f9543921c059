import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from busarrival import DataError
from busarrival.evaluation import (
    ExponentialSmoothingForecaster,
    HistoricalAverageForecaster,
    baseline_exp_smoothing,
    baseline_historical_average,
    evaluate_eta,
    evaluate_split,
    mae,
    mape,
    read_predictions_csv,
    write_eta_csv,
    write_predictions_csv,
    write_reports_csv,
)
from busarrival.ingest import SectionSeries
from busarrival.sar import fit_multiplicative
from busarrival.synth import SynthSpec, rush_hour_profile, synth_generate, traverse
from busarrival.ingest import BinGrid

positive = st.floats(0.1, 1e4, allow_nan=False)


def test_mape_mae_examples():
    assert mape([100, 200], [110, 180]) == pytest.approx(10.0)
    assert mae([100, 200], [110, 180]) == pytest.approx(15.0)
    assert mape([5.0], [5.0]) == 0.0


def test_metric_errors():
    with pytest.raises(ValueError):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        mape([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mae([], [])


@given(st.lists(st.tuples(positive, positive), min_size=1, max_size=30), st.floats(0.1, 100))
def test_metric_properties(pairs, c):
    a = np.array([p[0] for p in pairs])
    p = np.array([p[1] for p in pairs])
    assert mape(a, p) >= 0 and mae(a, p) >= 0
    assert mape(a, a) == 0
    # MAPE is scale free, MAE scales linearly
    assert mape(c * a, c * p) == pytest.approx(mape(a, p), rel=1e-9)
    assert mae(c * a, c * p) == pytest.approx(c * mae(a, p), rel=1e-9)


def test_baselines():
    s = SectionSeries(1, np.array([[10.0, 20.0], [30.0, 40.0]]), np.zeros((2, 2), bool), ["a", "b"])
    assert baseline_historical_average(s, 2) == 30.0
    assert baseline_exp_smoothing(10.0, 20.0, 0.5) == 15.0
    assert baseline_exp_smoothing(10.0, 20.0, 1.0) == 20.0
    with pytest.raises(ValueError):
        baseline_exp_smoothing(1.0, 2.0, 0.0)
    ha = HistoricalAverageForecaster().fit(s.values)
    np.testing.assert_allclose(ha.predict(s.values[:1]), [[20.0, 30.0]])
    np.testing.assert_allclose(ha.forecast([1.0], 2), [30.0, 20.0])


def test_exp_smoothing_recursion():
    X = np.array([[10.0, 20.0, 40.0]])
    es = ExponentialSmoothingForecaster(alpha=0.5).fit(X)
    assert es.level_ == pytest.approx(0.5 * 40 + 0.5 * (0.5 * 20 + 0.5 * 10))
    pred = es.predict(np.array([[8.0, 4.0]]))
    assert pred[0, 0] == pytest.approx(es.level_)
    assert pred[0, 1] == pytest.approx(0.5 * 8 + 0.5 * es.level_)
    assert es.forecast([8.0], 1)[0] == pytest.approx(pred[0, 1])


def _series(seed=0, **kw):
    return synth_generate(SynthSpec(days=34, sections=2, seed=seed, **kw))


def test_oracle_scores_zero():
    res = evaluate_split(_series(), ["oracle"])
    assert res.get("oracle").mape == 0.0 and res.get("oracle").mae == 0.0


def test_masked_cells_never_scored():
    series = _series()
    s = series[1]
    s.values[30, 4] = 1e9  # sentinel
    s.mask[30, 4] = True
    res = evaluate_split(series, ["oracle", "historical_average"])
    assert res.get("historical_average").n == 2 * 7 * 19 - 1
    assert res.get("historical_average").mape < 100


def test_report_levels():
    res = evaluate_split(_series(), ["historical_average"])
    levels = {r.level for r in res.reports}
    assert {"overall", "section", "day", "bin", "trip_mean", "trip_sum"} <= levels
    assert res.get("historical_average", "section", "2").n == 7 * 19
    assert len([r for r in res.reports if r.level == "bin"]) == 19


def test_insufficient_days():
    series = synth_generate(SynthSpec(days=20))
    with pytest.raises(DataError):
        evaluate_split(series, ["historical_average"])


def test_unknown_method():
    with pytest.raises(ValueError):
        evaluate_split(_series(), ["bogus"])


def test_external_predictions_round_trip(tmp_path):
    series = _series()
    res = evaluate_split(series, ["exp_smoothing"])
    path = tmp_path / "pred.csv"
    write_predictions_csv(res.predictions, path)
    table = read_predictions_csv(path)
    ext = evaluate_split(series, ["historical_average"], external={"mine": table["exp_smoothing"]})
    assert ext.get("mine").mape == pytest.approx(res.get("exp_smoothing").mape, rel=1e-12)
    write_reports_csv(ext.reports, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("method,level,key,mape,mae,n\n")


def test_synth_determinism_and_streams():
    a = synth_generate(SynthSpec(sections=3, seed=4))
    b = synth_generate(SynthSpec(sections=3, seed=4))
    c = synth_generate(SynthSpec(sections=2, seed=4))
    for k in a:
        np.testing.assert_array_equal(a[k].values, b[k].values)
    np.testing.assert_array_equal(a[2].values, c[2].values)
    assert not np.array_equal(a[1].values, synth_generate(SynthSpec(sections=1, seed=5))[1].values)


def test_synth_zero_noise_is_skeleton():
    prof = rush_hour_profile(19, 0.3)
    s = synth_generate(SynthSpec(sigma=0.0, profile=prof, days=3))[1]
    np.testing.assert_allclose(np.log(s.values), np.tile(math.log(60) + np.array(prof), (3, 1)))


def test_synth_nonstationary_rejected():
    with pytest.raises(ValueError):
        synth_generate(SynthSpec(phi=(0.9,), seasonal=0.9, kind="sar_additive"))


def test_synth_recovery():
    spec = SynthSpec(phi=(0.4,), seasonal=0.5, days=600, sigma=0.2, seed=3)
    y = np.log(synth_generate(spec)[1].values).ravel()
    m = fit_multiplicative(y, 1, 19)
    np.testing.assert_allclose(m.coeffs, [0.4, 0.5], atol=0.05)


def test_traverse_uses_bin_of_entry():
    grid = BinGrid()
    vals = {1: np.full(19, 100.0), 2: np.full(19, 200.0)}
    vals[2][1] = 500.0
    t = traverse(vals, grid, grid.bin_start(2) - 50.0, [1, 2])
    np.testing.assert_allclose(t, [grid.bin_start(2) - 50, grid.bin_start(2) + 50, grid.bin_start(2) + 550])


def test_evaluate_eta_samples_and_oracle_like_accuracy(tmp_path):
    series = synth_generate(SynthSpec(days=34, sections=4, seed=1, sigma=0.05))
    reports, samples = evaluate_eta(series, ["sar", "historical_average"], stop_section=4, departures=[8 * 3600.0])
    # three issuing sections per trip, seven test days, two methods
    assert len(samples) == 3 * 7 * 2
    by = {(r.method, r.level, r.key): r for r in reports}
    assert by[("sar", "eta", "all")].n == 21
    assert by[("sar", "eta", "all")].mape < 10
    write_eta_csv(samples, tmp_path / "eta.csv")
    assert len((tmp_path / "eta.csv").read_text().splitlines()) == 43


def test_evaluate_eta_missing_section():
    with pytest.raises(DataError):
        evaluate_eta(_series(), ["sar"], stop_section=4)
