"""Metrics, baseline predictors and the train/test evaluation harness."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import DataError, check_day_matrix, check_fitted
from .eta import RealtimeStore, eta_to_stop
from .ingest import BinGrid, SectionSeries, _open_out
from .nsar import NonStationaryARForecaster
from .sar import SeasonalARForecaster
from .synth import traverse

REPORT_HEADER = ("method", "level", "key", "mape", "mae", "n")
PREDICTION_HEADER = ("method", "day", "section", "bin", "predicted")


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    if np.any(a <= 0):
        raise ValueError("MAPE needs strictly positive actual values")
    return float(100.0 * np.mean(np.abs(a - p) / a))


def mae(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(a - p)))


# --------------------------------------------------------------------------- baselines


def baseline_historical_average(training: SectionSeries, bin: int) -> float:
    """Arithmetic mean of the training values of 1-based ``bin``."""
    return float(np.mean(training.values[:, bin - 1]))


def baseline_exp_smoothing(previous_estimate: float, latest_observation: float, alpha: float = 0.5) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha * latest_observation + (1.0 - alpha) * previous_estimate


class HistoricalAverageForecaster(RegressorMixin, BaseEstimator):
    def __init__(self, section=0):
        self.section = section

    def fit(self, X, y=None):
        X = check_day_matrix(X)
        self.means_ = X.mean(axis=0)
        return self

    def forecast(self, today=None, steps=1, previous_days=None):
        check_fitted(self, "means_")
        t = 0 if today is None else len(np.ravel(today))
        idx = (t + np.arange(steps)) % len(self.means_)
        return self.means_[idx]

    def predict(self, X):
        check_fitted(self, "means_")
        X = check_day_matrix(X)
        return np.tile(self.means_, (X.shape[0], 1))


class ExponentialSmoothingForecaster(RegressorMixin, BaseEstimator):
    """Simple exponential smoothing over the bin sequence, seeded with the first value."""

    def __init__(self, alpha=0.5, section=0):
        self.alpha = alpha
        self.section = section

    def _run(self, level, values):
        for v in values:
            if np.isfinite(v):
                level = v if level is None else baseline_exp_smoothing(level, v, self.alpha)
        return level

    def fit(self, X, y=None):
        X = check_day_matrix(X)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        self.level_ = self._run(None, X.ravel())
        return self

    def forecast(self, today=None, steps=1, previous_days=None):
        check_fitted(self, "level_")
        level = self.level_
        if previous_days is not None and np.size(previous_days):
            level = self._run(level, np.ravel(previous_days))
        if today is not None:
            level = self._run(level, np.ravel(today))
        return np.full(steps, level)

    def predict(self, X):
        check_fitted(self, "level_")
        X = check_day_matrix(X)
        out = np.empty(X.size)
        level = self.level_
        for i, v in enumerate(X.ravel()):
            out[i] = level
            level = baseline_exp_smoothing(level, v, self.alpha)
        return out.reshape(X.shape)


class OracleForecaster(RegressorMixin, BaseEstimator):
    """Returns the actual values; a sanity check for the harness."""

    def __init__(self, section=0):
        self.section = section

    def fit(self, X, y=None):
        self.fitted_ = True
        return self

    def predict(self, X):
        return check_day_matrix(X).copy()


MethodFactory = Callable[..., BaseEstimator]


def default_methods(*, significance=0.05, tstat="unrooted", alpha=0.5) -> dict[str, MethodFactory]:
    return {
        "sar": lambda section: SeasonalARForecaster(domain="log", significance=significance, section=section),
        "sar_gaussian": lambda section: SeasonalARForecaster(domain="linear", significance=significance, section=section),
        "nsar": lambda section: NonStationaryARForecaster(domain="log", significance=significance, tstat=tstat, section=section),
        "nsar_gaussian": lambda section: NonStationaryARForecaster(domain="linear", significance=significance, tstat=tstat, section=section),
        "historical_average": lambda section: HistoricalAverageForecaster(section=section),
        "exp_smoothing": lambda section: ExponentialSmoothingForecaster(alpha=alpha, section=section),
        "oracle": lambda section: OracleForecaster(section=section),
    }


# --------------------------------------------------------------------------- harness


@dataclass(frozen=True)
class MetricReport:
    method: str
    level: str
    key: str
    mape: float
    mae: float
    n: int


@dataclass(frozen=True)
class Prediction:
    method: str
    day: str
    section: int
    bin: int
    predicted: float


@dataclass
class EvaluationResult:
    reports: list[MetricReport]
    predictions: list[Prediction]

    def overall(self) -> dict[str, float]:
        return {r.method: r.mape for r in self.reports if r.level == "overall"}

    def get(self, method: str, level: str = "overall", key: str = "all") -> MetricReport:
        for r in self.reports:
            if (r.method, r.level, r.key) == (method, level, key):
                return r
        raise KeyError((method, level, key))


def _as_list(series) -> list[SectionSeries]:
    if isinstance(series, Mapping):
        return [series[k] for k in sorted(series)]
    return sorted(series, key=lambda s: s.section)


def _score(method: str, cells: list[tuple[str, int, int, float, float]]) -> list[MetricReport]:
    """``cells`` holds (day, section, bin, actual, predicted) for scorable cells only."""
    if not cells:
        raise DataError(f"method {method}: no scorable (non-imputed) cells")
    reports = []

    def add(level, key, a, p):
        a, p = np.asarray(a), np.asarray(p)
        reports.append(MetricReport(method, level, str(key), mape(a, p), mae(a, p), len(a)))

    a_all = [c[3] for c in cells]
    p_all = [c[4] for c in cells]
    add("overall", "all", a_all, p_all)
    for level, keyfn in (("section", lambda c: c[1]), ("day", lambda c: c[0]), ("bin", lambda c: c[2])):
        groups = defaultdict(lambda: ([], []))
        for c in cells:
            g = groups[keyfn(c)]
            g[0].append(c[3])
            g[1].append(c[4])
        for key in sorted(groups):
            add(level, key, *groups[key])
    # a bin-level "trip": one traversal of all sections in one (day, bin) slot
    slots = defaultdict(lambda: ([], []))
    for c in cells:
        g = slots[(c[0], c[2])]
        g[0].append(c[3])
        g[1].append(c[4])
    mean_ape, mean_ae, sum_ape, sum_ae = [], [], [], []
    for (day, b), (a, p) in sorted(slots.items()):
        a, p = np.asarray(a), np.asarray(p)
        add("trip_mean", f"{day}/{b}", a, p)
        add("trip_sum", f"{day}/{b}", [a.sum()], [p.sum()])
        mean_ape.append(mape(a, p))
        mean_ae.append(mae(a, p))
        sum_ape.append(100.0 * abs(a.sum() - p.sum()) / a.sum())
        sum_ae.append(abs(a.sum() - p.sum()))
    reports.append(MetricReport(method, "trip_mean", "all", float(np.mean(mean_ape)), float(np.mean(mean_ae)), len(slots)))
    reports.append(MetricReport(method, "trip_sum", "all", float(np.mean(sum_ape)), float(np.mean(sum_ae)), len(slots)))
    return reports


def evaluate_split(
    series,
    methods: Sequence[str] | Mapping[str, MethodFactory] = ("sar", "nsar", "historical_average", "exp_smoothing"),
    *,
    n_train: int = 27,
    n_test: int = 7,
    external: Mapping[str, Mapping[tuple[str, int, int], float]] | None = None,
    factories: Mapping[str, MethodFactory] | None = None,
) -> EvaluationResult:
    """Train on the first ``n_train`` days and score one-step predictions on the next ``n_test``.

    Imputed cells (``mask``) of the test days are never scored.  ``external``
    maps a method name to ``{(day, section, bin): predicted}`` read from a
    predictions-exchange file.
    """
    sections = _as_list(series)
    if not sections:
        raise DataError("no section series given")
    need = n_train + n_test
    for s in sections:
        if s.n_days < need:
            raise DataError(f"section {s.section}: {s.n_days} days available, {need} required")
    if isinstance(methods, Mapping):
        registry = dict(methods)
    else:
        registry = dict(factories or default_methods())
        unknown = [m for m in methods if m not in registry]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; known: {sorted(registry)}")
        registry = {m: registry[m] for m in methods}

    reports: list[MetricReport] = []
    predictions: list[Prediction] = []
    for name, factory in registry.items():
        cells = []
        for s in sections:
            train = s.values[:n_train]
            test = s.values[n_train:need]
            est = factory(s.section).fit(train)
            pred = est.predict(test)
            for i in range(n_test):
                day = s.days[n_train + i]
                for b in range(s.n_bins):
                    predictions.append(Prediction(name, day, s.section, b + 1, float(pred[i, b])))
                    if not s.mask[n_train + i, b]:
                        cells.append((day, s.section, b + 1, float(test[i, b]), float(pred[i, b])))
        reports.extend(_score(name, cells))
    for name, table in (external or {}).items():
        cells = []
        for s in sections:
            for i in range(n_train, need):
                for b in range(s.n_bins):
                    key = (s.days[i], s.section, b + 1)
                    if key in table and not s.mask[i, b]:
                        cells.append((s.days[i], s.section, b + 1, float(s.values[i, b]), float(table[key])))
        reports.extend(_score(name, cells))
    return EvaluationResult(reports, predictions)


def write_reports_csv(reports: Iterable[MetricReport], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([r.method, r.level, r.key, f"{r.mape:.6f}", f"{r.mae:.6f}", r.n])


def write_predictions_csv(predictions: Iterable[Prediction], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for p in predictions:
            w.writerow([p.method, p.day, p.section, p.bin, repr(p.predicted)])


def read_predictions_csv(path) -> dict[str, dict[tuple[str, int, int], float]]:
    out: dict[str, dict] = defaultdict(dict)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_HEADER:
            raise DataError(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
        for row in reader:
            out[row["method"]][(row["day"], int(row["section"]), int(row["bin"]))] = float(row["predicted"])
    return dict(out)


# --------------------------------------------------------------------------- arrival-time evaluation

ETA_HEADER = ("method", "day", "departure", "from_section", "predicted", "actual")


@dataclass(frozen=True)
class EtaSample:
    method: str
    day: str
    departure: float
    from_section: int
    predicted: float
    actual: float

    @property
    def abs_error(self) -> float:
        return abs(self.predicted - self.actual)


def evaluate_eta(
    series,
    methods: Sequence[str] = ("sar", "nsar"),
    *,
    stop_section: int = 16,
    n_train: int = 27,
    n_test: int = 7,
    bins: BinGrid = BinGrid(),
    departures: Sequence[float] | None = None,
    factories: Mapping[str, MethodFactory] | None = None,
) -> tuple[list[MetricReport], list[EtaSample]]:
    """Score arrival predictions at the end of ``stop_section`` on the test days.

    A bus departs the start of section 1 at each time of ``departures`` and
    drives through the day's actual section times.  As it leaves each
    section ``i < stop_section`` a prediction is issued from the store of
    that day's closed bins, giving ``stop_section - 1`` samples per trip.
    Travel times (arrival minus issue time) are scored per issuing section.
    """
    sections = {s.section: s for s in _as_list(series)}
    route = list(range(1, stop_section + 1))
    missing = [k for k in route if k not in sections]
    if missing:
        raise DataError(f"series lacks sections {missing}")
    registry = dict(factories or default_methods())
    if departures is None:
        # leave room for the trip to end inside the service day
        departures = np.arange(bins.day_start + 1800.0, bins.bin_end(bins.active_bins) - 7200.0, 3600.0)
    need = n_train + n_test
    reports, samples = [], []
    for name in methods:
        models = {k: registry[name](k).fit(sections[k].values[:n_train]) for k in route}
        by_from = defaultdict(lambda: ([], []))
        for di in range(n_train, need):
            day_values = {k: sections[k].values[di] for k in route}
            prev = {k: sections[k].values[n_train:di] for k in route}
            label = sections[1].days[di]
            for dep in departures:
                actual = traverse(day_values, bins, float(dep), route)
                for i in range(1, stop_section):
                    t_cur = actual[i]
                    if not 1 <= bins.bin_of(t_cur) <= bins.active_bins:
                        continue
                    store = RealtimeStore.from_day(day_values, bins, t_cur, prev)
                    pred = eta_to_stop(models, store, i, t_cur, stop_section)
                    samples.append(EtaSample(name, label, float(dep), i, pred.arrival_time, float(actual[-1])))
                    g = by_from[i]
                    g[0].append(actual[-1] - t_cur)
                    g[1].append(pred.travel_time)
        for i in sorted(by_from):
            a, p = by_from[i]
            reports.append(MetricReport(name, "eta_from_section", str(i), mape(a, p), mae(a, p), len(a)))
        a_all = [x for i in by_from for x in by_from[i][0]]
        p_all = [x for i in by_from for x in by_from[i][1]]
        if a_all:
            reports.append(MetricReport(name, "eta", "all", mape(a_all, p_all), mae(a_all, p_all), len(a_all)))
    return reports, samples


def write_eta_csv(samples: Iterable[EtaSample], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ETA_HEADER)
        for s in samples:
            w.writerow([s.method, s.day, f"{s.departure:.0f}", s.from_section, f"{s.predicted:.6f}", f"{s.actual:.6f}"])
