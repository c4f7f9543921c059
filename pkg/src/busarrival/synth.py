"""Synthetic travel-time processes and GPS fixtures with known ground truth."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ingest import EARTH_RADIUS_M, BinGrid, GpsFix, SectionSeries
from .sar import SarModel

KINDS = ("sar_multiplicative", "sar_additive", "nsar", "lognormal_iid", "random_walk")
BURN_IN_SEASONS = 10


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic per-section log travel-time process.

    The log travel time of (day, bin ``n``) is ``mu + profile[n] + z``, where
    ``z`` follows the chosen zero-mean process with innovation s.d. ``sigma``.

    Parameters
    ----------
    kind : str
        One of ``sar_multiplicative``, ``sar_additive``, ``nsar``,
        ``lognormal_iid`` or ``random_walk``.
    phi : sequence of float
        Non-seasonal lag coefficients (sar kinds), or the within-day lag
        coefficients shared by every bin (``nsar``).
    seasonal : float
        Seasonal coefficient at lag ``bins`` (sar kinds).
    mu : float or sequence of float
        Log-domain level, one per section when a sequence.
    bin_weights : sequence of sequences, optional
        Per-bin within-day lag coefficients for ``nsar``; entry ``n - 1``
        belongs to bin ``n`` and may have at most ``n - 1`` terms.
    """

    kind: str = "sar_multiplicative"
    phi: tuple[float, ...] = (0.5, 0.2)
    seasonal: float = 0.3
    mu: float | tuple[float, ...] = math.log(60.0)
    sigma: float = 0.2
    profile: tuple[float, ...] | None = None
    bin_weights: tuple[tuple[float, ...], ...] | None = None
    days: int = 34
    bins: int = 19
    sections: int = 1
    seed: int = 0
    start_date: str = "2019-03-04"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.days < 1 or self.bins < 2 or self.sections < 1:
            raise ValueError("days, sections must be >= 1 and bins >= 2")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.profile is not None and len(self.profile) != self.bins:
            raise ValueError(f"profile needs {self.bins} entries")
        if self.bin_weights is not None:
            if len(self.bin_weights) != self.bins:
                raise ValueError(f"bin_weights needs {self.bins} entries")
            for n, w in enumerate(self.bin_weights, start=1):
                if len(w) > n - 1:
                    raise ValueError(f"bin {n} cannot depend on {len(w)} earlier bins")
        if not np.isscalar(self.mu) and len(self.mu) != self.sections:
            raise ValueError("mu needs one entry per section")

    def level(self, section: int) -> float:
        """Log-domain level of 1-based ``section``."""
        return float(self.mu) if np.isscalar(self.mu) else float(self.mu[section - 1])

    def day_labels(self) -> list[str]:
        start = dt.date.fromisoformat(self.start_date)
        return [(start + dt.timedelta(days=i)).isoformat() for i in range(self.days)]

    def ar_model(self) -> SarModel:
        """The stochastic part of a sar kind as a :class:`SarModel` (zero intercept)."""
        p = len(self.phi)
        if self.kind == "sar_multiplicative":
            coeffs = np.array([*self.phi, self.seasonal])
        else:
            coeffs = np.zeros(p + self.bins)
            coeffs[:p] = self.phi
            coeffs[self.bins - 1] += self.seasonal
        return SarModel(self.kind.split("_")[1], p, self.bins, coeffs, 0.0, self.sigma**2, float("nan"))


def _simulate_sar(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    z = np.zeros(len(e))
    L = len(a)
    for t in range(len(e)):
        lo = max(0, t - L)
        # z[t-1], z[t-2], ... against a[0], a[1], ...
        z[t] = e[t] + a[: t - lo] @ z[lo:t][::-1]
    return z


def _stochastic_part(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    d, B = spec.days, spec.bins
    if spec.kind in ("sar_multiplicative", "sar_additive"):
        model = spec.ar_model()
        if not model.is_stationary():
            raise ValueError("coefficients give a non-stationary process")
        burn = BURN_IN_SEASONS * B
        e = spec.sigma * rng.standard_normal(burn + d * B)
        return _simulate_sar(model.ar_polynomial(), e)[burn:].reshape(d, B)
    if spec.kind == "random_walk":
        e = spec.sigma * rng.standard_normal(d * B)
        return np.cumsum(e).reshape(d, B)
    if spec.kind == "lognormal_iid":
        return spec.sigma * rng.standard_normal((d, B))
    weights = spec.bin_weights or tuple(tuple(spec.phi[: n - 1]) for n in range(1, B + 1))
    z = spec.sigma * rng.standard_normal((d, B))
    for n in range(2, B + 1):
        w = np.asarray(weights[n - 1], dtype=float)
        if len(w):
            z[:, n - 1] += z[:, n - 2 :: -1][:, : len(w)] @ w
    return z


def synth_generate(spec: SynthSpec) -> dict[int, SectionSeries]:
    """Simulate every section of ``spec``; deterministic in ``spec.seed``.

    Sections are numbered from 1 and each draws from its own stream, so
    adding sections never changes earlier ones.
    """
    profile = np.zeros(spec.bins) if spec.profile is None else np.asarray(spec.profile, dtype=float)
    labels = spec.day_labels()
    out = {}
    for sec in range(1, spec.sections + 1):
        rng = np.random.default_rng([spec.seed, sec])
        logv = spec.level(sec) + profile + _stochastic_part(spec, rng)
        out[sec] = SectionSeries(sec, np.exp(logv), np.zeros_like(logv, dtype=bool), list(labels))
    return out


def rush_hour_profile(bins: int = 19, amplitude: float = 0.3) -> tuple[float, ...]:
    """Smooth two-peak daily log profile with zero mean."""
    x = np.arange(bins) / max(bins - 1, 1)
    prof = amplitude * (np.exp(-((x - 0.2) / 0.08) ** 2) + 0.8 * np.exp(-((x - 0.75) / 0.1) ** 2))
    return tuple(prof - prof.mean())


# --------------------------------------------------------------------------- GPS fixture


@dataclass(frozen=True)
class RouteGeometry:
    """A straight north-bound route along a meridian (haversine distances are exact)."""

    origin: tuple[float, float] = (12.90, 80.22)
    section_length: float = 500.0
    sections: int = 56

    @property
    def length(self) -> float:
        return self.section_length * self.sections

    @property
    def terminus(self) -> tuple[float, float]:
        return self.position(self.length)

    def position(self, distance: float) -> tuple[float, float]:
        return (self.origin[0] + math.degrees(distance / EARTH_RADIUS_M), self.origin[1])


@dataclass(frozen=True)
class GpsFixtureOptions:
    first_departure: int = 2 * 3600 + 1800
    last_departure: int = 22 * 3600
    headway: int = 1800
    fix_interval: int = 10
    dwell: int = 60
    tz_offset: int = 0
    departures: Sequence[int] | None = field(default=None)


def traverse(day_values: Mapping[int, np.ndarray], bins: BinGrid, start: float, sections: Sequence[int]) -> np.ndarray:
    """Boundary times of a bus entering ``sections[0]`` at ``start`` (seconds of day).

    Each section takes that day's value of the bin in which the bus enters
    it; entries outside the active bins use the nearest active bin.
    """
    times = np.empty(len(sections) + 1)
    times[0] = start
    for k, sec in enumerate(sections):
        b = min(max(bins.bin_of(times[k] % 86400), 1), bins.active_bins)
        times[k + 1] = times[k] + float(day_values[sec][b - 1])
    return times


def _leg(series, day, bins, route: RouteGeometry, start: float, reverse: bool) -> tuple[np.ndarray, np.ndarray]:
    """Boundary crossing times and distances from the leg's own origin."""
    day_values = {k: series[k].values[day] for k in range(1, route.sections + 1)}
    times = traverse(day_values, bins, start, range(1, route.sections + 1))
    dist = np.arange(route.sections + 1) * route.section_length
    return times, (route.length - dist if reverse else dist)


def synth_gps(
    series: Mapping[int, SectionSeries],
    route: RouteGeometry = RouteGeometry(),
    bins: BinGrid = BinGrid(),
    options: GpsFixtureOptions = GpsFixtureOptions(),
    days: Sequence[int] | None = None,
) -> list[GpsFix]:
    """GPS fixes of buses driving out and back with section times taken from ``series``.

    Each departure is its own device: it dwells at the origin, drives to
    the terminus, dwells, and returns.  Section ``k`` of either leg is the
    ``k``-th section from that leg's starting end and takes the series value
    of the bin in which the bus enters it.
    """
    missing = [k for k in range(1, route.sections + 1) if k not in series]
    if missing:
        raise ValueError(f"series lacks sections {missing[:5]}")
    labels = next(iter(series.values())).days
    day_ids = range(len(labels)) if days is None else days
    deps = options.departures or range(options.first_departure, options.last_departure + 1, options.headway)
    fixes: list[GpsFix] = []
    for di in day_ids:
        midnight = int(dt.datetime.combine(dt.date.fromisoformat(labels[di]), dt.time(), dt.timezone.utc).timestamp())
        base = midnight - options.tz_offset
        for j, dep in enumerate(deps):
            device = f"BUS{j + 1:03d}"
            out_t, out_d = _leg(series, di, bins, route, float(dep), reverse=False)
            back_start = math.ceil(out_t[-1]) + options.dwell
            back_t, back_d = _leg(series, di, bins, route, float(back_start), reverse=True)
            stamps = list(range(dep - 3 * options.fix_interval, dep, options.fix_interval))
            stamps += list(range(dep, back_start, options.fix_interval))
            stamps += list(range(back_start, math.ceil(back_t[-1]) + 3 * options.fix_interval, options.fix_interval))
            stamps = sorted(set(stamps) | {back_start})
            for ts in stamps:
                if ts < back_start:
                    dist = np.interp(ts, out_t, out_d)
                else:
                    dist = np.interp(ts, back_t, back_d)
                lat, lon = route.position(float(dist))
                fixes.append(GpsFix(device, base + ts, lat, lon))
    fixes.sort(key=lambda f: (f.device_id, f.timestamp))
    return fixes
