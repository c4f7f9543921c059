"""Non-stationary autoregression across the time bins of a day.

Each training day is one realisation of a ``B``-dimensional random vector.
For bin ``n`` the regression order ``k(n)`` is the shortest window of
immediately preceding bins given which ``X_n`` and the older past have zero
partial correlation, judged by a t-test at the configured significance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import DataError, check_day_matrix, check_fitted, check_significance
from .sar import _from_domain, _to_domain
from .stats import linreg, partial_corr, pc_t_test

MODEL_HEADER = ("section", "bin", "k", "weights", "noise_var", "domain")
MIN_TRAINING_DAYS = 10


@dataclass(frozen=True)
class NsarModel:
    """Per-bin weights ``[w0, w1..wk]`` (``wi`` multiplies ``X_{n-i}``) and noise variances.

    ``weights[0]`` belongs to bin 1 and holds only its unconditional mean.
    """

    weights: tuple[np.ndarray, ...]
    noise_variance: np.ndarray
    domain: str = "log"
    section: int = 0

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "noise_variance", np.asarray(self.noise_variance, dtype=float))
        if len(ws) != len(self.noise_variance):
            raise ValueError("one noise variance per bin required")
        for n, w in enumerate(ws, start=1):
            if not 1 <= len(w) <= n:
                raise ValueError(f"bin {n}: weight vector length {len(w)} outside 1..{n}")
        if self.domain not in ("log", "linear"):
            raise ValueError(f"unknown domain {self.domain!r}")

    @property
    def n_bins(self) -> int:
        return len(self.weights)

    @property
    def orders(self) -> np.ndarray:
        return np.array([len(w) - 1 for w in self.weights])

    def one_step(self, past: np.ndarray, n: int) -> float:
        """Prediction for bin ``n`` (1-based) from same-day bins ``past[0..n-2]``."""
        w = self.weights[n - 1]
        k = len(w) - 1
        if k == 0:
            return float(w[0])
        lags = past[n - 2 :: -1][:k]  # X_{n-1}, X_{n-2}, ...
        return float(w[0] + w[1:] @ lags)


def _feasible(d: int, m: int) -> bool:
    # partial correlation on an m-column block needs d > m + 2
    return d > m + 2


def learn_bin(
    D,
    n: int,
    *,
    significance: float = 0.05,
    tstat: str = "unrooted",
) -> tuple[np.ndarray, float, int]:
    """Weights, noise variance and order for bin ``n >= 2`` (1-based).

    Windows ``win = n-1, ..., 2`` are tried in turn: ``X_n`` and
    ``X_{win-1}`` are each regressed on ``X_{n-1}..X_{win}`` and the residual
    correlation is tested.  The first retained null fixes ``k(n) = n - win``.
    Without one, ``X_n`` is regressed on the whole feasible past.  Windows too
    long for the number of days end the search.
    """
    D = np.asarray(D, dtype=float)
    d, B = D.shape
    if not 2 <= n <= B:
        raise ValueError(f"bin must lie in 2..{B}, got {n}")
    significance = check_significance(significance)
    col = lambda b: D[:, b - 1]  # noqa: E731  1-based bin column
    k = None
    for win in range(n - 1, 1, -1):
        m = n - win
        if not _feasible(d, m):
            break
        block = D[:, [b - 1 for b in range(n - 1, win - 1, -1)]]
        res = partial_corr(col(n), col(win - 1), block, tstat=tstat)
        if res.degenerate:
            k = m
            break
        if not pc_t_test(res.pc, d, significance=significance, variant=tstat).reject_null:
            k = m
            break
    if k is None:
        k = n - 1
        while k > 1 and not _feasible(d, k):
            k -= 1
    past = D[:, [b - 1 for b in range(n - 1, n - 1 - k, -1)]]
    fit = linreg(past, col(n))
    return fit.weights, float(np.var(fit.residuals, ddof=1)), k


def learn_all(D, *, significance: float = 0.05, tstat: str = "unrooted", domain: str = "log", section: int = 0) -> NsarModel:
    """Learn every bin of a complete days-by-bins matrix (already in the model domain)."""
    D = check_day_matrix(D, name="training matrix")
    d, B = D.shape
    if d < MIN_TRAINING_DAYS:
        raise DataError(f"non-stationary AR learning needs at least {MIN_TRAINING_DAYS} days, got {d}")
    weights = [np.array([D[:, 0].mean()])]
    variances = [float(np.var(D[:, 0], ddof=1))]
    for n in range(2, B + 1):
        w, s2, _ = learn_bin(D, n, significance=significance, tstat=tstat)
        weights.append(w)
        variances.append(s2)
    return NsarModel(tuple(weights), np.array(variances), domain=domain, section=section)


def forecast(model: NsarModel, observed, target: int) -> float:
    """Plug-in prediction of bin ``target`` from same-day bins ``1..t`` (``t < target``).

    Intermediate bins are predicted in order and fed back; NaN entries of
    ``observed`` are treated as unknown and replaced the same way.
    """
    x = np.asarray(observed, dtype=float).ravel()
    t = len(x)
    if target <= t:
        raise ValueError(f"target not in future: bin {target} with observations through bin {t}")
    return float(_extend(model, x, target - t)[-1])


def _extend(model: NsarModel, observed: np.ndarray, steps: int) -> np.ndarray:
    """Predict ``steps`` bins after ``observed``, rolling into following days if needed."""
    B = model.n_bins
    day = np.empty(B)
    t = len(observed)
    day[:t] = observed
    for b in range(1, t + 1):
        if np.isnan(day[b - 1]):
            day[b - 1] = model.one_step(day, b)
    out = np.empty(steps)
    pos = t
    for i in range(steps):
        if pos == B:
            pos = 0
        b = pos + 1
        day[pos] = model.one_step(day, b)
        out[i] = day[pos]
        pos += 1
    return out


def predict_travel_time(model: NsarModel, observed_seconds, target: int) -> float:
    x = _to_domain(observed_seconds, model.domain)
    return float(_from_domain(forecast(model, x, target), model.domain))


class NonStationaryARForecaster(RegressorMixin, BaseEstimator):
    """Per-section non-stationary AR forecaster over a days-by-bins matrix.

    Parameters
    ----------
    domain : {"log", "linear"}
        ``"log"`` models log travel times and predicts the conditional median.
    significance : float
        Level of the partial-correlation t-test.
    tstat : {"unrooted", "conventional"}
        Denominator of the t statistic, see :func:`busarrival.stats.pc_t_test`.
    """

    def __init__(self, domain="log", significance=0.05, tstat="unrooted", section=0):
        self.domain = domain
        self.significance = significance
        self.tstat = tstat
        self.section = section

    def fit(self, X, y=None):
        X = check_day_matrix(X, min_days=MIN_TRAINING_DAYS)
        self.model_ = learn_all(
            _to_domain(X, self.domain),
            significance=self.significance,
            tstat=self.tstat,
            domain=self.domain,
            section=self.section,
        )
        return self

    @classmethod
    def from_model(cls, model: NsarModel) -> "NonStationaryARForecaster":
        est = cls(domain=model.domain, section=model.section)
        est.model_ = model
        return est

    def forecast(self, today=None, steps: int = 1, previous_days=None) -> np.ndarray:
        """Seconds for the ``steps`` bins following ``today``; earlier days are not used."""
        check_fitted(self, "model_")
        x = np.empty(0) if today is None else _to_domain(np.ravel(today), self.domain)
        return _from_domain(_extend(self.model_, x, steps), self.domain)

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "model_")
        X = check_day_matrix(X)
        L = _to_domain(X, self.domain)
        out = np.empty_like(L)
        for n, w in enumerate(self.model_.weights, start=1):
            k = len(w) - 1
            out[:, n - 1] = w[0] + (L[:, n - 2 :: -1][:, :k] @ w[1:] if k else 0.0)
        return _from_domain(out, self.domain)


def save_models(models, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MODEL_HEADER)
        for m in sorted(models, key=lambda m: m.section):
            for n, (wn, s2) in enumerate(zip(m.weights, m.noise_variance), start=1):
                w.writerow([m.section, n, len(wn) - 1, " ".join(repr(float(v)) for v in wn), repr(float(s2)), m.domain])


def load_models(path) -> dict[int, NsarModel]:
    rows: dict[int, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MODEL_HEADER:
            raise DataError(f"{path}: not a non-stationary AR model file")
        for row in reader:
            wn = np.array([float(v) for v in row["weights"].split()])
            if len(wn) != int(row["k"]) + 1:
                raise DataError(f"{path}: section {row['section']} bin {row['bin']} weight count disagrees with k")
            rows.setdefault(int(row["section"]), []).append((int(row["bin"]), wn, float(row["noise_var"]), row["domain"]))
    out = {}
    for sec, items in rows.items():
        items.sort(key=lambda r: r[0])
        if [r[0] for r in items] != list(range(1, len(items) + 1)):
            raise DataError(f"{path}: section {sec} bins are not contiguous from 1")
        out[sec] = NsarModel(tuple(r[1] for r in items), np.array([r[2] for r in items]), domain=items[0][3], section=sec)
    return out
