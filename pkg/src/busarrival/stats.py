"""Statistical primitives used by the section travel-time models.

Correlograms, lognormal fitting and goodness of fit, the augmented
Dickey-Fuller test, least squares and partial correlation testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats as sps

from ._validation import DataError, check_positive, check_series, check_significance

__all__ = [
    "CorrelogramValues",
    "LognormalFit",
    "StatTestResult",
    "LinregResult",
    "PartialCorrResult",
    "acf",
    "pacf",
    "fit_lognormal",
    "ks_lognormal",
    "schwert_max_lag",
    "adf",
    "linreg",
    "partial_corr",
    "pc_t_test",
    "ADF_CRITICAL_VALUES",
]


@dataclass(frozen=True)
class CorrelogramValues:
    values: np.ndarray
    n: int

    @property
    def band(self) -> float:
        """Half-width of the approximate 95% white-noise band."""
        return 1.96 / np.sqrt(self.n)

    def __getitem__(self, lag):
        return self.values[lag]

    def __len__(self):
        return len(self.values)

    def significant(self) -> np.ndarray:
        return np.abs(self.values) > self.band


@dataclass(frozen=True)
class LognormalFit:
    mu: float
    sigma: float

    def cdf(self, x):
        return sps.norm.cdf((np.log(x) - self.mu) / self.sigma)

    @property
    def median(self) -> float:
        return float(np.exp(self.mu))


@dataclass(frozen=True)
class StatTestResult:
    statistic: float
    p_value: float
    reject_null: bool
    significance: float = 0.05
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LinregResult:
    weights: np.ndarray  # intercept first when fitted with one
    residuals: np.ndarray
    rss: float
    rank: int


@dataclass(frozen=True)
class PartialCorrResult:
    pc: float
    forward_weights: np.ndarray
    backward_weights: np.ndarray
    t_star: float
    df: int
    degenerate: bool = False


# --------------------------------------------------------------------------- correlograms


def acf(series, max_lag: int) -> CorrelogramValues:
    x = check_series(series, min_length=max_lag + 2)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom <= 0.0:
        raise DataError("degenerate series: zero variance")
    n = len(x)
    vals = np.empty(max_lag + 1)
    vals[0] = 1.0
    for k in range(1, max_lag + 1):
        vals[k] = np.dot(xc[: n - k], xc[k:]) / denom
    return CorrelogramValues(vals, n)


def _durbin_levinson(rho: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from autocorrelations ``rho[0..L]``."""
    L = len(rho) - 1
    out = np.zeros(L + 1)
    out[0] = 1.0
    if L == 0:
        return out
    phi = np.zeros(L + 1)
    phi[1] = rho[1]
    out[1] = rho[1]
    v = 1.0 - rho[1] ** 2
    for k in range(2, L + 1):
        if v <= 0:
            break
        a = (rho[k] - np.dot(phi[1:k], rho[k - 1 : 0 : -1])) / v
        prev = phi[1:k].copy()
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = a
        out[k] = a
        v *= 1.0 - a * a
    return out


def pacf(series, max_lag: int) -> CorrelogramValues:
    r = acf(series, max_lag)
    return CorrelogramValues(_durbin_levinson(r.values), r.n)


# --------------------------------------------------------------------------- lognormal


def fit_lognormal(sample) -> LognormalFit:
    """Fit ``ln(Y) ~ N(mu, sigma^2)`` by the sample mean and (n-1) std of the logs."""
    x = check_positive(check_series(sample, min_length=2, name="sample"), name="sample")
    logs = np.log(x)
    sigma = float(np.std(logs, ddof=1))
    if not sigma > 0:
        raise DataError("degenerate sample: zero spread in log domain")
    return LognormalFit(float(logs.mean()), sigma)


def _ks_distance(z_sorted: np.ndarray) -> float:
    """Two-sided K-S distance of sorted standardized values to N(0, 1)."""
    n = len(z_sorted)
    F = sps.norm.cdf(z_sorted)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@lru_cache(maxsize=64)
def _lilliefors_null(n: int, n_sim: int, seed: int) -> np.ndarray:
    # The statistic with estimated location/scale is a pivot, so one
    # standard-normal table per sample size serves every (mu, sigma).
    rng = np.random.default_rng(seed)
    draws = np.sort(rng.standard_normal((n_sim, n)), axis=1)
    m = draws.mean(axis=1, keepdims=True)
    s = draws.std(axis=1, ddof=1, keepdims=True)
    F = sps.norm.cdf((draws - m) / s)
    i = np.arange(1, n + 1)
    d = np.maximum(np.max(i / n - F, axis=1), np.max(F - (i - 1) / n, axis=1))
    return np.sort(d)


def ks_lognormal(
    sample,
    *,
    significance: float = 0.05,
    pvalue: str = "lilliefors",
    n_sim: int = 2000,
    seed: int = 20_190_901,
) -> StatTestResult:
    """Kolmogorov-Smirnov test of the lognormal hypothesis with fitted parameters.

    Parameters
    ----------
    sample : array_like
        Positive observations, at least 20.
    pvalue : {"lilliefors", "asymptotic"}
        ``"lilliefors"`` calibrates the p-value against a simulated null of the
        same statistic with estimated parameters (exact size up to Monte-Carlo
        error).  ``"asymptotic"`` uses the Kolmogorov limit law on ``sqrt(n) D``,
        which ignores parameter estimation and is therefore very conservative.
    """
    significance = check_significance(significance)
    x = check_positive(check_series(sample, min_length=20, name="sample"), name="sample")
    fit = fit_lognormal(x)
    n = len(x)
    z = np.sort((np.log(x) - fit.mu) / fit.sigma)
    D = _ks_distance(z)
    if pvalue == "asymptotic":
        p = float(sps.kstwobign.sf(np.sqrt(n) * D))
    elif pvalue == "lilliefors":
        null = _lilliefors_null(n, n_sim, seed)
        exceed = n_sim - np.searchsorted(null, D, side="left")
        p = float((1 + exceed) / (n_sim + 1))
    else:
        raise ValueError("pvalue must be 'lilliefors' or 'asymptotic'")
    return StatTestResult(D, p, p < significance, significance, {"n": n, "mu": fit.mu, "sigma": fit.sigma, "method": pvalue})


# --------------------------------------------------------------------------- ADF

# Asymptotic Dickey-Fuller critical values, constant and no trend.
ADF_CRITICAL_VALUES = {"1%": -3.43035, "5%": -2.86154, "10%": -2.56677}

# MacKinnon (1994) response-surface coefficients for the constant-only case.
_TAU_MAX, _TAU_MIN, _TAU_STAR = 2.74, -18.83, -1.61
_TAU_SMALLP = np.array([2.1659, 1.4412, 3.8269e-2])
_TAU_LARGEP = np.array([1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2])


def _mackinnon_pvalue(stat: float) -> float:
    if stat > _TAU_MAX:
        return 1.0
    if stat < _TAU_MIN:
        return 0.0
    coef = _TAU_SMALLP if stat <= _TAU_STAR else _TAU_LARGEP
    return float(sps.norm.cdf(np.polyval(coef[::-1], stat)))


def schwert_max_lag(n: int) -> int:
    return int(np.floor(12.0 * (n / 100.0) ** 0.25))


def _adf_design(x: np.ndarray, lag: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    dx = np.diff(x)
    rows = np.arange(start, len(dx))
    cols = [np.ones(len(rows)), x[rows]]
    cols += [dx[rows - i] for i in range(1, lag + 1)]
    return np.column_stack(cols), dx[rows]


def adf(series, *, significance: float = 0.05, max_lag: int | None = None) -> StatTestResult:
    """Augmented Dickey-Fuller unit-root test with a constant and BIC lag choice.

    Candidate lags 0..max_lag (Schwert's rule by default) are compared by BIC
    on a common estimation sample; the chosen lag is then refitted on all
    usable observations.  ``reject_null`` means no unit root.
    """
    significance = check_significance(significance)
    x = check_series(series, min_length=30)
    n = len(x)
    if max_lag is None:
        max_lag = schwert_max_lag(n)
    max_lag = int(min(max_lag, (n - 1) // 2 - 2))
    best_lag, best_bic = 0, np.inf
    for lag in range(max_lag + 1):
        X, y = _adf_design(x, lag, max_lag)
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(np.sum((y - X @ beta) ** 2))
        m = len(y)
        bic = m * np.log(rss / m) + X.shape[1] * np.log(m)
        if bic < best_bic:
            best_lag, best_bic = lag, bic
    X, y = _adf_design(x, best_lag, best_lag)
    XtX_inv = np.linalg.pinv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    resid = y - X @ beta
    dof = len(y) - X.shape[1]
    s2 = float(resid @ resid) / dof
    se = np.sqrt(s2 * XtX_inv[1, 1])
    stat = float(beta[1] / se) if se > 0 else -np.inf
    p = _mackinnon_pvalue(stat)
    return StatTestResult(
        stat,
        p,
        p < significance,
        significance,
        {"lag": best_lag, "max_lag": max_lag, "nobs": len(y), "critical_values": dict(ADF_CRITICAL_VALUES)},
    )


# --------------------------------------------------------------------------- regression


def linreg(X, y, *, intercept: bool = True) -> LinregResult:
    """Ordinary least squares; rank deficiency resolves to the minimum-norm solution."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.shape[0] != y.shape[0]:
        raise DataError("X and y have different numbers of rows")
    n, k = X.shape
    if n <= k + 1:
        raise DataError(f"underdetermined: {n} observations for {k} regressors")
    A = np.column_stack([np.ones(n), X]) if intercept else X
    w, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ w
    return LinregResult(w, resid, float(resid @ resid), int(rank))


def _is_flat(resid: np.ndarray, original: np.ndarray) -> bool:
    spread = np.sqrt(np.sum((original - original.mean()) ** 2))
    return np.sqrt(np.sum(resid**2)) <= 1e-10 * spread or spread == 0.0


def partial_corr(x, y, Z=None, *, tstat: str = "unrooted") -> PartialCorrResult:
    """Correlation of ``x`` and ``y`` after linearly removing ``Z`` (with intercept).

    An empty ``Z`` gives the plain Pearson correlation.  A residual with no
    variance on either side yields ``pc = 0`` flagged ``degenerate``.
    """
    x = check_series(x, min_length=3, name="x")
    y = check_series(y, min_length=3, name="y")
    d = len(x)
    if len(y) != d:
        raise DataError("x and y must have equal length")
    if Z is None:
        Z = np.empty((d, 0))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, np.newaxis]
    m = Z.shape[1]
    if d <= m + 2:
        raise DataError(f"partial correlation needs more than {m + 2} observations, got {d}")
    fx = linreg(Z, x)
    fy = linreg(Z, y)
    rx, ry = fx.residuals, fy.residuals
    if _is_flat(rx, x) or _is_flat(ry, y):
        return PartialCorrResult(0.0, fx.weights, fy.weights, 0.0, d - 2, degenerate=True)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    pc = float(np.clip(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)), -1.0, 1.0))
    t = pc_t_test(pc, d, variant=tstat).statistic
    return PartialCorrResult(pc, fx.weights, fy.weights, t, d - 2)


def pc_t_test(pc: float, d: int, *, significance: float = 0.05, variant: str = "unrooted") -> StatTestResult:
    """Two-sided t-test of zero (partial) correlation with ``d - 2`` degrees of freedom.

    ``variant="unrooted"`` uses ``pc * sqrt(d-2) / (1 - pc^2)``; ``"conventional"``
    uses the textbook ``sqrt(1 - pc^2)`` denominator.
    """
    significance = check_significance(significance)
    if d <= 2:
        raise DataError("pc_t_test needs d > 2")
    if variant not in ("unrooted", "conventional"):
        raise ValueError("variant must be 'unrooted' or 'conventional'")
    df = d - 2
    if abs(pc) >= 1.0:
        return StatTestResult(np.copysign(np.inf, pc), 0.0, True, significance, {"df": df, "variant": variant})
    denom = 1.0 - pc * pc
    if variant == "conventional":
        denom = np.sqrt(denom)
    t = pc * np.sqrt(df) / denom
    p = float(min(1.0, 2.0 * sps.t.sf(abs(t), df)))
    return StatTestResult(float(t), p, p < significance, significance, {"df": df, "variant": variant})
