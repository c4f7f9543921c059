"""Seasonal autoregressive models of day-wise concatenated section travel times.

Two forms are fitted by conditional least squares on the same effective
sample (observations ``p + s`` onwards) so their AIC values are comparable:

* multiplicative ``(1 - sum phi_i L^i)(1 - Phi L^s) y_t = c + e_t``
* additive, an AR(s) with only lags ``1..p`` and ``s`` free.

Both reduce to a long AR polynomial of order ``p + s`` used for forecasting.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import DataError, check_day_matrix, check_fitted, check_series
from .stats import StatTestResult, adf, pacf

MODEL_HEADER = ("section", "kind", "domain", "differenced", "p", "P", "s", "intercept", "coeffs", "noise_var", "aic", "train_mean")


class ConvergenceError(RuntimeError):
    pass


class NonStationaryFitError(DataError):
    pass


@dataclass(frozen=True)
class SarModel:
    kind: str
    p: int
    s: int
    coeffs: np.ndarray
    intercept: float
    noise_variance: float
    aic: float
    train_mean: float = 0.0
    differenced: bool = False
    domain: str = "log"
    section: int = 0
    P: int = 1
    candidate_aic: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("multiplicative", "additive"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.domain not in ("log", "linear"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.p < 0 or self.s < 2 or self.p >= self.s:
            raise ValueError("need 0 <= p < s and s >= 2")
        expected = self.p + 1 if self.kind == "multiplicative" else self.p + self.s
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (expected,):
            raise ValueError(f"{self.kind} model needs {expected} coefficients, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return self.p + self.s

    @property
    def free_lags(self) -> tuple[int, ...]:
        return tuple(range(1, self.p + 1)) + (self.s,)

    def ar_polynomial(self) -> np.ndarray:
        """Coefficients ``a_1..a_{p+s}`` of ``y_t = c + sum a_j y_{t-j} + e_t``."""
        if self.kind == "additive":
            return self.coeffs.copy()
        phi, Phi = self.coeffs[: self.p], self.coeffs[self.p]
        a = np.zeros(self.p + self.s)
        a[: self.p] = phi
        a[self.s - 1] += Phi
        a[self.s : self.s + self.p] = -phi * Phi
        return a

    def is_stationary(self) -> bool:
        return _is_stationary(self.ar_polynomial())


def _is_stationary(a: np.ndarray) -> bool:
    if not np.any(a):
        return True
    roots = np.roots(np.concatenate([[1.0], -a]))
    return bool(np.all(np.abs(roots) < 1.0 - 1e-10))


def _lagmat(y: np.ndarray, lags, start: int) -> np.ndarray:
    rows = np.arange(start, len(y))
    return np.column_stack([y[rows - k] for k in lags]) if len(lags) else np.empty((len(rows), 0))


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    A = np.column_stack([np.ones(len(y)), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return beta


def _aic(rss: float, n_eff: int, p: int) -> tuple[float, float]:
    sigma2 = rss / n_eff
    return sigma2, n_eff * np.log(max(sigma2, np.finfo(float).tiny)) + 2 * (p + 2)


def _check_fit_input(series, p: int, s: int) -> np.ndarray:
    y = check_series(series, min_length=3)
    if p < 0 or s < 2 or p >= s:
        raise ValueError("need 0 <= p < s and s >= 2")
    if len(y) <= 2 * (p + s):
        raise DataError(f"need more than {2 * (p + s)} observations for p={p}, s={s}; got {len(y)}")
    return y


# --------------------------------------------------------------------------- screening & order


def screen_and_difference(series, *, significance: float = 0.05) -> tuple[np.ndarray, bool, StatTestResult]:
    """First-difference ``series`` when the ADF test cannot reject a unit root."""
    y = check_series(series, min_length=30)
    res = adf(y, significance=significance)
    if res.reject_null:
        return y, False, res
    return np.diff(y), True, res


def select_order(series, s: int, *, max_order: int = 5) -> int:
    """Largest lag ``<= max_order`` (and ``< s``) with a significant PACF; at least 1."""
    y = check_series(series, min_length=s + 2)
    cap = min(max_order, s - 1)
    r = pacf(y, cap)
    sig = np.nonzero(r.significant()[1:])[0]
    return int(sig[-1] + 1) if len(sig) else 1


# --------------------------------------------------------------------------- fitting


def fit_multiplicative(
    series,
    p: int,
    s: int,
    *,
    seasonal_coef: float | None = None,
    max_iter: int = 200,
    tol: float = 1e-8,
    **meta,
) -> SarModel:
    """Conditional least-squares fit of the multiplicative seasonal AR.

    Alternates two linear problems, ``(c, phi) | Phi`` on the seasonally
    filtered series and ``(c, Phi) | phi`` on the non-seasonally filtered
    series, each of which lowers the same residual sum of squares.
    ``seasonal_coef`` pins ``Phi`` and skips the alternation.
    """
    y = _check_fit_input(series, p, s)
    start = p + s
    n_eff = len(y) - start
    target = y[start:]
    phi = np.zeros(p)
    Phi = 0.0 if seasonal_coef is None else float(seasonal_coef)
    c = 0.0
    converged = seasonal_coef is not None
    delta = np.inf
    for _ in range(max_iter):
        u = y.copy()
        u[s:] = y[s:] - Phi * y[:-s]
        beta = _ols(_lagmat(u, range(1, p + 1), start), u[start:])
        c_new, phi_new = beta[0], beta[1:]
        if seasonal_coef is not None:
            c, phi = c_new, phi_new
            break
        v = y.copy()
        for i in range(1, p + 1):
            v[i:] -= phi_new[i - 1] * y[:-i]
        beta = _ols(_lagmat(v, [s], start), v[start:])
        c_new, Phi_new = beta[0], beta[1]
        delta = max(np.max(np.abs(phi_new - phi), initial=0.0), abs(Phi_new - Phi), abs(c_new - c))
        c, phi, Phi = c_new, phi_new, Phi_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"alternating least squares did not converge in {max_iter} iterations (last change {delta:.3g})")
    model = SarModel("multiplicative", p, s, np.append(phi, Phi), c, 0.0, 0.0, float(y.mean()), **meta)
    resid = target - c - _lagmat(y, range(1, p + s + 1), start) @ model.ar_polynomial()
    sigma2, aic = _aic(float(resid @ resid), n_eff, p)
    model = replace(model, noise_variance=sigma2, aic=aic)
    if not model.is_stationary():
        raise NonStationaryFitError("fitted multiplicative AR polynomial has roots on or inside the unit circle")
    return model


def fit_additive(series, p: int, s: int, **meta) -> SarModel:
    """Least-squares AR(s) with only lags ``1..p`` and ``s`` free."""
    y = _check_fit_input(series, p, s)
    start = p + s
    lags = list(range(1, p + 1)) + [s]
    beta = _ols(_lagmat(y, lags, start), y[start:])
    a = np.zeros(p + s)
    for lag, b in zip(lags, beta[1:]):
        a[lag - 1] = b
    resid = y[start:] - beta[0] - _lagmat(y, range(1, p + s + 1), start) @ a
    sigma2, aic = _aic(float(resid @ resid), len(y) - start, p)
    model = SarModel("additive", p, s, a, float(beta[0]), sigma2, aic, float(y.mean()), **meta)
    if not model.is_stationary():
        raise NonStationaryFitError("fitted additive AR polynomial has roots on or inside the unit circle")
    return model


def fit_best(series, p: int, s: int, **meta) -> SarModel:
    """Fit both forms and keep the lower AIC (ties go to the additive form)."""
    fits, errors = {}, {}
    for kind, fn in (("additive", fit_additive), ("multiplicative", fit_multiplicative)):
        try:
            fits[kind] = fn(series, p, s, **meta)
        except (ConvergenceError, NonStationaryFitError, np.linalg.LinAlgError) as exc:
            errors[kind] = exc
    if not fits:
        raise DataError(f"both seasonal AR fits failed: {errors}")
    for kind, exc in errors.items():
        warnings.warn(f"{kind} seasonal AR fit failed ({exc}); using the other form", RuntimeWarning, stacklevel=2)
    aics = {k: m.aic for k, m in fits.items()}
    best = min(fits.values(), key=lambda m: (m.aic, m.kind != "additive"))
    return replace(best, candidate_aic=aics)


# --------------------------------------------------------------------------- forecasting


def _next_value(model: SarModel, a: np.ndarray, x: np.ndarray) -> float:
    m = len(a)
    if model.differenced:
        d = np.diff(x[-(m + 1) :])
        return float(x[-1] + model.intercept + a @ d[::-1])
    return float(model.intercept + a @ x[-m:][::-1])


def _fill_missing(model: SarModel, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float)
    need = len(a) + int(model.differenced)
    # earlier gaps are already filled when a later one is reached
    for t in np.nonzero(np.isnan(x))[0]:
        if t >= need:
            x[t] = _next_value(model, a, x[:t])
        elif not model.differenced:
            x[t] = model.train_mean
        else:
            x[t] = x[t - 1] if t > 0 else np.nanmean(x)
    return x


def forecast(model: SarModel, history, h: int = 1) -> np.ndarray:
    """Iterated ``h``-step linear prediction in the model's domain.

    ``history`` holds levels (not differences); missing entries (NaN) are
    replaced by their own one-step predictions before forecasting.
    """
    if h < 1:
        raise ValueError("h must be at least 1")
    x = np.asarray(history, dtype=float)
    need = model.order + int(model.differenced)
    if x.ndim != 1 or len(x) < need:
        raise DataError(f"insufficient history: need {need} values, got {len(x)}")
    a = model.ar_polynomial()
    if np.isnan(x).any():
        x = _fill_missing(model, a, x)
    buf = list(x[-(need + 1) :])
    out = np.empty(h)
    for i in range(h):
        nxt = _next_value(model, a, np.asarray(buf[-(need + 1) :]))
        out[i] = nxt
        buf.append(nxt)
    return out


def _to_domain(x, domain: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if domain == "log":
        if np.any(x[~np.isnan(x)] <= 0):
            raise DataError("travel times must be positive")
        return np.log(x)
    return x


def _from_domain(x, domain: str) -> np.ndarray:
    return np.exp(x) if domain == "log" else np.asarray(x, dtype=float)


def predict_travel_time(model: SarModel, history_seconds, h: int = 1) -> np.ndarray:
    """Forecasts in seconds; in the log domain this is the conditional median."""
    return _from_domain(forecast(model, _to_domain(history_seconds, model.domain), h), model.domain)


# --------------------------------------------------------------------------- estimator


class SeasonalARForecaster(RegressorMixin, BaseEstimator):
    """Per-section seasonal AR forecaster over a days-by-bins matrix.

    Parameters
    ----------
    kind : {"auto", "multiplicative", "additive"}
        ``"auto"`` fits both and keeps the lower AIC.
    order : int or None
        Non-seasonal order ``p``; selected from the PACF when None.
    domain : {"log", "linear"}
        ``"linear"`` is the Gaussian ablation without the log transform.
    screen : bool
        Run the ADF unit-root screen and difference when it fails to reject.
    """

    def __init__(self, kind="auto", order=None, domain="log", screen=True, significance=0.05, max_order=5, section=0):
        self.kind = kind
        self.order = order
        self.domain = domain
        self.screen = screen
        self.significance = significance
        self.max_order = max_order
        self.section = section

    def fit(self, X, y=None):
        X = check_day_matrix(X)
        if self.domain not in ("log", "linear"):
            raise ValueError(f"unknown domain {self.domain!r}")
        s = X.shape[1]
        levels = _to_domain(X, self.domain).ravel()
        series, differenced = levels, False
        if self.screen:
            series, differenced, self.adf_ = screen_and_difference(levels, significance=self.significance)
        p = self.order if self.order is not None else select_order(series, s, max_order=self.max_order)
        meta = dict(section=self.section, domain=self.domain, differenced=differenced)
        if self.kind == "auto":
            model = fit_best(series, p, s, **meta)
        elif self.kind == "multiplicative":
            model = fit_multiplicative(series, p, s, **meta)
        elif self.kind == "additive":
            model = fit_additive(series, p, s, **meta)
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.model_ = model
        self.history_ = levels
        self.n_bins_ = s
        return self

    @classmethod
    def from_model(cls, model: SarModel, history_seconds) -> "SeasonalARForecaster":
        est = cls(kind=model.kind, order=model.p, domain=model.domain, section=model.section)
        X = check_day_matrix(history_seconds)
        est.model_ = model
        est.history_ = _to_domain(X, model.domain).ravel()
        est.n_bins_ = X.shape[1]
        return est

    def _context(self, previous_days, today) -> np.ndarray:
        parts = [self.history_]
        if previous_days is not None and np.size(previous_days):
            parts.append(_to_domain(np.atleast_2d(previous_days), self.domain).ravel())
        if today is not None and np.size(today):
            parts.append(_to_domain(np.ravel(today), self.domain))
        return np.concatenate(parts)

    def forecast(self, today=None, steps: int = 1, previous_days=None) -> np.ndarray:
        """Seconds for the ``steps`` bins following ``today`` (bins 1..t of the current day)."""
        check_fitted(self, "model_")
        return _from_domain(forecast(self.model_, self._context(previous_days, today), steps), self.domain)

    def predict(self, X) -> np.ndarray:
        """One-step-ahead predictions for every cell of later days ``X``."""
        check_fitted(self, "model_")
        X = check_day_matrix(X, allow_nan=True)
        a = self.model_.ar_polynomial()
        levels = np.concatenate([self.history_, _to_domain(X, self.domain).ravel()])
        if np.isnan(levels).any():
            levels = _fill_missing(self.model_, a, levels)
        n0 = len(self.history_)
        out = np.array([_next_value(self.model_, a, levels[:t]) for t in range(n0, len(levels))])
        return _from_domain(out, self.domain).reshape(X.shape)


# --------------------------------------------------------------------------- persistence


def _fmt(v: float) -> str:
    return repr(float(v))


def save_models(models, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MODEL_HEADER)
        for m in sorted(models, key=lambda m: m.section):
            w.writerow([
                m.section, m.kind, m.domain, int(m.differenced), m.p, m.P, m.s,
                _fmt(m.intercept), " ".join(_fmt(c) for c in m.coeffs),
                _fmt(m.noise_variance), _fmt(m.aic), _fmt(m.train_mean),
            ])


def load_models(path) -> dict[int, SarModel]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MODEL_HEADER:
            raise DataError(f"{path}: not a seasonal AR model file")
        for row in reader:
            m = SarModel(
                kind=row["kind"],
                p=int(row["p"]),
                s=int(row["s"]),
                coeffs=np.array([float(c) for c in row["coeffs"].split()]),
                intercept=float(row["intercept"]),
                noise_variance=float(row["noise_var"]),
                aic=float(row["aic"]),
                train_mean=float(row["train_mean"]),
                differenced=row["differenced"] == "1",
                domain=row["domain"],
                section=int(row["section"]),
                P=int(row["P"]),
            )
            out[m.section] = m
    return out
