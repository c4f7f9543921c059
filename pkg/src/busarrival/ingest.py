"""GPS traces to per-section, per-time-bin travel-time series.

Pipeline: :func:`parse_gps` -> :func:`identify_trips` -> :func:`sectionize`
-> :func:`clean` -> :func:`binize`.  Sections and bins are numbered from 1.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DataError, check_fitted

EARTH_RADIUS_M = 6_371_000.0
SECONDS_PER_DAY = 86_400

GPS_HEADER = ("device_id", "timestamp", "lat", "lon")
RECORD_HEADER = ("trip_id", "date", "direction", "section", "entry_time", "travel_time")
SERIES_HEADER = ("section", "day", "bin", "value", "imputed")


class GpsFormatError(DataError):
    """A malformed row in a GPS CSV file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InsufficientCoverageError(DataError):
    pass


@dataclass(frozen=True, slots=True)
class GpsFix:
    device_id: str
    timestamp: int
    latitude: float
    longitude: float


@dataclass
class GpsParseResult:
    fixes: list[GpsFix]
    rejected: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class TripTrace:
    trip_id: str
    service_date: dt.date
    direction: str
    fixes: list[GpsFix]
    cumulative_distance: np.ndarray
    fragment: int = 0

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.fixes], dtype=float)


@dataclass(frozen=True)
class SectionGrid:
    route_length: float
    section_length: float = 500.0

    def __post_init__(self):
        if self.section_length <= 0 or self.route_length <= 0:
            raise ValueError("section and route lengths must be positive")

    @property
    def section_count(self) -> int:
        # guard against float noise such as 28000.000000001 / 500
        return max(1, math.ceil(round(self.route_length / self.section_length, 9)))

    def boundaries(self) -> np.ndarray:
        k = np.arange(self.section_count + 1, dtype=float)
        return np.minimum(k * self.section_length, self.route_length)


@dataclass(frozen=True, slots=True)
class TravelTimeRecord:
    trip_id: str
    section: int
    entry_time: float
    travel_time: float
    date: dt.date | None = None
    direction: str = "onward"


@dataclass(frozen=True)
class BinGrid:
    """Active time bins of a service day.

    ``day_start_bin`` counts bins from midnight, so the default grid runs
    04:00-23:00 and 14:30 falls in bin 11.
    """

    bin_duration: int = 3600
    active_bins: int = 19
    day_start_bin: int = 4

    def __post_init__(self):
        if self.bin_duration <= 0 or self.active_bins < 1 or self.day_start_bin < 0:
            raise ValueError("invalid bin grid")
        if (self.day_start_bin + self.active_bins) * self.bin_duration > SECONDS_PER_DAY:
            raise ValueError("active bins overrun the day")

    @property
    def day_start(self) -> int:
        return self.day_start_bin * self.bin_duration

    def bin_of(self, seconds_of_day: float) -> int:
        """1-based bin index; values outside ``1..active_bins`` mean out of service."""
        return int(math.floor((seconds_of_day - self.day_start) / self.bin_duration)) + 1

    def bin_start(self, b: int) -> float:
        return float(self.day_start + (b - 1) * self.bin_duration)

    def bin_end(self, b: int) -> float:
        return self.bin_start(b) + self.bin_duration


@dataclass
class SectionSeries:
    """Days-by-bins travel times (seconds) for one section."""

    section: int
    values: np.ndarray
    mask: np.ndarray
    days: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValueError("values and mask must be matching 2-d arrays")
        if len(self.days) != self.values.shape[0]:
            raise ValueError("one day label per row required")

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def split(self, n_train: int) -> tuple["SectionSeries", "SectionSeries"]:
        head = SectionSeries(self.section, self.values[:n_train], self.mask[:n_train], self.days[:n_train])
        tail = SectionSeries(self.section, self.values[n_train:], self.mask[n_train:], self.days[n_train:])
        return head, tail


# --------------------------------------------------------------------------- parsing


def _open_text(source) -> tuple[io.TextIOBase, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8")), False
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def parse_gps(source, *, on_error: str = "raise") -> GpsParseResult:
    """Parse a ``device_id,timestamp,lat,lon`` CSV.

    Rows are sorted by (device, timestamp) and repeated timestamps of a device
    keep their first occurrence.  Out-of-range coordinates are dropped and
    counted in ``rejected``.  Malformed rows raise :class:`GpsFormatError`
    unless ``on_error="skip"``, in which case they are listed in ``malformed``.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise GpsFormatError(1, "missing header")
        if tuple(h.strip() for h in header) != GPS_HEADER:
            raise GpsFormatError(1, f"expected header {','.join(GPS_HEADER)}")
        result = GpsParseResult(fixes=[])
        seen: set[tuple[str, int]] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 fields, got {len(row)}")
                device = row[0].strip()
                if not device:
                    raise ValueError("empty device_id")
                ts = int(row[1])
                lat = float(row[2])
                lon = float(row[3])
                if not (math.isfinite(lat) and math.isfinite(lon)):
                    raise ValueError("non-finite coordinate")
            except ValueError as exc:
                if on_error == "raise":
                    raise GpsFormatError(lineno, str(exc)) from None
                result.malformed.append((lineno, str(exc)))
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                result.rejected += 1
                continue
            # first occurrence of a (device, timestamp) pair wins
            key = (device, ts)
            if key in seen:
                continue
            seen.add(key)
            result.fixes.append(GpsFix(device, ts, lat, lon))
    finally:
        if owned:
            fh.close()
    result.fixes.sort(key=lambda f: (f.device_id, f.timestamp))
    return result


def write_gps_csv(fixes: Iterable[GpsFix], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GPS_HEADER)
        for f in fixes:
            w.writerow([f.device_id, f.timestamp, f"{f.latitude:.7f}", f"{f.longitude:.7f}"])


# --------------------------------------------------------------------------- geometry


def haversine(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance in metres between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


# --------------------------------------------------------------------------- trips


def _local_date(ts: float, tz_offset: int) -> dt.date:
    return dt.date(1970, 1, 1) + dt.timedelta(days=int((ts + tz_offset) // SECONDS_PER_DAY))


def _seconds_of_day(ts: float, tz_offset: int) -> float:
    return float((ts + tz_offset) % SECONDS_PER_DAY)


@dataclass
class TripSplitResult:
    trips: list[TripTrace]
    discarded: int = 0


def identify_trips(
    fixes: Sequence[GpsFix],
    origin: Sequence[float],
    terminus: Sequence[float],
    *,
    capture_radius: float = 250.0,
    gap_threshold: float = 600.0,
    tz_offset: int = 0,
) -> TripSplitResult:
    """Split device streams into onward/return trips between two endpoints.

    A trip starts at the bus's closest approach to an endpoint (distance
    zero) once it leaves that endpoint's capture radius heading for the
    other one, and ends at the closest approach inside the destination
    radius.  Time gaps above ``gap_threshold``
    cut the trip into fragments whose distance axis continues across the gap.
    """
    by_device: dict[str, list[GpsFix]] = defaultdict(list)
    for f in fixes:
        by_device[f.device_id].append(f)

    out = TripSplitResult(trips=[])
    counters: dict[tuple[str, dt.date], int] = defaultdict(int)

    def emit(device, direction, chunk, cum, fragment):
        if len(chunk) < 2:
            out.discarded += 1
            return
        date = _local_date(chunk[0].timestamp, tz_offset)
        seq = counters[(device, date)]
        counters[(device, date)] += 1
        out.trips.append(
            TripTrace(
                trip_id=f"{device}-{date.isoformat()}-{seq:03d}",
                service_date=date,
                direction=direction,
                fixes=list(chunk),
                cumulative_distance=np.asarray(cum, dtype=float),
                fragment=fragment,
            )
        )

    for device in sorted(by_device):
        stream = sorted(by_device[device], key=lambda f: f.timestamp)
        lat = np.array([f.latitude for f in stream])
        lon = np.array([f.longitude for f in stream])
        d_origin = haversine_array(lat, lon, origin[0], origin[1])
        d_term = haversine_array(lat, lon, terminus[0], terminus[1])
        zone = np.where(d_origin <= capture_radius, 1, np.where(d_term <= capture_radius, 2, 0))
        dist_to = {"onward": d_term, "return": d_origin}

        direction = None
        chunk: list[GpsFix] = []
        cum: list[float] = []
        fragment = 0
        arrived = False
        for i, fix in enumerate(stream):
            if direction is None:
                if i == 0 or zone[i] != 0 or zone[i - 1] == 0:
                    continue
                cand = "onward" if zone[i - 1] == 1 else "return"
                if dist_to[cand][i] >= dist_to[cand][i - 1]:
                    continue
                direction, fragment, arrived = cand, 0, False
                # back up through the dwell to the closest approach to the stop
                d_start = d_origin if cand == "onward" else d_term
                first = i - 1
                while (
                    first > 0
                    and zone[first - 1] == zone[i - 1]
                    and d_start[first - 1] < d_start[first]
                    and stream[first].timestamp - stream[first - 1].timestamp <= gap_threshold
                ):
                    first -= 1
                chunk, cum = [stream[first]], [0.0]
                for prev in stream[first + 1 : i]:
                    cum.append(cum[-1] + haversine((chunk[-1].latitude, chunk[-1].longitude), (prev.latitude, prev.longitude)))
                    chunk.append(prev)
            last = chunk[-1]
            step = haversine((last.latitude, last.longitude), (fix.latitude, fix.longitude))
            if fix.timestamp - last.timestamp > gap_threshold:
                emit(device, direction, chunk, cum, fragment)
                fragment += 1
                chunk, cum = [fix], [cum[-1] + step]
                arrived = False
            else:
                if arrived and dist_to[direction][i] >= dist_to[direction][i - 1]:
                    emit(device, direction, chunk, cum, fragment)
                    direction, chunk, cum = None, [], []
                    continue
                chunk.append(fix)
                cum.append(cum[-1] + step)
            if zone[i] == (2 if direction == "onward" else 1):
                arrived = True
        if direction is not None:
            emit(device, direction, chunk, cum, fragment)
    return out


# --------------------------------------------------------------------------- sections


# boundaries this close beyond the last fix count as reached (coordinate rounding)
_SNAP_M = 1.0


def _crossing_times(cum: np.ndarray, t: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    out = np.full(bounds.shape, np.nan)
    idx = np.searchsorted(cum, bounds, side="left")
    for k, (b, i) in enumerate(zip(bounds, idx)):
        if i >= len(cum):
            if b - cum[-1] <= _SNAP_M:
                out[k] = t[-1]
            continue
        if cum[i] == b:
            out[k] = t[i]
        elif i > 0:
            c0, c1 = cum[i - 1], cum[i]
            out[k] = t[i - 1] + (b - c0) / (c1 - c0) * (t[i] - t[i - 1])
    return out


def sectionize(trip: TripTrace, grid: SectionGrid, *, tz_offset: int = 0) -> list[TravelTimeRecord]:
    """Section travel times from boundary crossings interpolated in time."""
    cum = np.asarray(trip.cumulative_distance, dtype=float)
    if len(cum) < 2 or cum[-1] - cum[0] <= 0:
        return []
    if np.any(np.diff(cum) < 0):
        raise DataError(f"trip {trip.trip_id}: cumulative distance must be non-decreasing")
    crossings = _crossing_times(cum, trip.timestamps, grid.boundaries())
    records = []
    for k in range(grid.section_count):
        t_in, t_out = crossings[k], crossings[k + 1]
        if np.isnan(t_in) or np.isnan(t_out):
            continue
        records.append(
            TravelTimeRecord(
                trip_id=trip.trip_id,
                section=k + 1,
                entry_time=_seconds_of_day(t_in, tz_offset),
                travel_time=float(t_out - t_in),
                date=_local_date(t_in, tz_offset),
                direction=trip.direction,
            )
        )
    return records


def write_records_csv(records: Iterable[TravelTimeRecord], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([
                r.trip_id,
                r.date.isoformat() if r.date else "",
                r.direction,
                r.section,
                repr(float(r.entry_time)),
                repr(float(r.travel_time)),
            ])


def read_records_csv(path) -> list[TravelTimeRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                TravelTimeRecord(
                    trip_id=row["trip_id"],
                    section=int(row["section"]),
                    entry_time=float(row["entry_time"]),
                    travel_time=float(row["travel_time"]),
                    date=dt.date.fromisoformat(row["date"]) if row["date"] else None,
                    direction=row["direction"],
                )
            )
    return out


# --------------------------------------------------------------------------- cleaning


class TravelTimeCleaner(TransformerMixin, BaseEstimator):
    """Clamp section travel times into [free-flow minimum, historical percentile].

    ``fit`` learns per-section upper bounds from historical records; sections
    with fewer than ``min_observations`` records fall back to the percentile
    over all sections.
    """

    def __init__(self, section_length=500.0, free_flow_speed=60.0, percentile=95.0, min_observations=20):
        self.section_length = section_length
        self.free_flow_speed = free_flow_speed
        self.percentile = percentile
        self.min_observations = min_observations

    def fit(self, records: Sequence[TravelTimeRecord], y=None):
        if self.free_flow_speed <= 0 or self.section_length <= 0:
            raise ValueError("section_length and free_flow_speed must be positive")
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must lie in (0, 100]")
        if len(records) == 0:
            raise DataError("historical records are empty")
        self.lower_bound_ = self.section_length * 3.6 / self.free_flow_speed
        by_section: dict[int, list[float]] = defaultdict(list)
        for r in records:
            by_section[r.section].append(r.travel_time)
        everything = np.fromiter((r.travel_time for r in records), dtype=float)
        self.global_upper_ = float(np.percentile(everything, self.percentile))
        self.upper_bounds_ = {}
        for sec, vals in by_section.items():
            if len(vals) >= self.min_observations:
                self.upper_bounds_[sec] = float(np.percentile(vals, self.percentile))
            else:
                self.upper_bounds_[sec] = self.global_upper_
        return self

    def bounds(self, section: int) -> tuple[float, float]:
        check_fitted(self, "upper_bounds_")
        hi = self.upper_bounds_.get(section, self.global_upper_)
        return self.lower_bound_, max(hi, self.lower_bound_)

    def transform(self, records: Sequence[TravelTimeRecord]) -> list[TravelTimeRecord]:
        check_fitted(self, "upper_bounds_")
        out = []
        for r in records:
            lo, hi = self.bounds(r.section)
            v = min(max(r.travel_time, lo), hi)
            out.append(r if v == r.travel_time else replace(r, travel_time=v))
        return out


def clean(
    records: Sequence[TravelTimeRecord],
    grid: SectionGrid,
    historical: Sequence[TravelTimeRecord] | None = None,
    *,
    free_flow_speed: float = 60.0,
    percentile: float = 95.0,
    min_observations: int = 20,
) -> list[TravelTimeRecord]:
    """Clamp ``records`` to bounds derived from ``historical`` (default: ``records``)."""
    cleaner = TravelTimeCleaner(grid.section_length, free_flow_speed, percentile, min_observations)
    cleaner.fit(records if historical is None else historical)
    return cleaner.transform(records)


# --------------------------------------------------------------------------- binning


def geometric_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.exp(np.mean(np.log(v))))


def binize(
    records: Iterable[TravelTimeRecord],
    bins: BinGrid = BinGrid(),
    *,
    days: Sequence[dt.date | str] | None = None,
    sections: Sequence[int] | None = None,
) -> dict[int, SectionSeries]:
    """Aggregate records into one value per (day, bin) for every section.

    Each cell is the geometric mean of its records.  Empty cells take the
    geometric mean of the same bin's observed cells on other days and are
    flagged in ``mask``.  Records outside the active bins are ignored.
    """
    logs: dict[tuple[int, str, int], list[float]] = defaultdict(list)
    seen_days: set[str] = set()
    seen_sections: set[int] = set()
    for r in records:
        if r.date is None:
            raise DataError(f"record of trip {r.trip_id} has no date")
        if r.travel_time <= 0:
            raise DataError(f"record of trip {r.trip_id} has non-positive travel time")
        b = bins.bin_of(r.entry_time)
        if not 1 <= b <= bins.active_bins:
            continue
        day = r.date.isoformat() if isinstance(r.date, dt.date) else str(r.date)
        logs[(r.section, day, b)].append(math.log(r.travel_time))
        seen_days.add(day)
        seen_sections.add(r.section)
    day_labels = sorted(seen_days) if days is None else [
        d.isoformat() if isinstance(d, dt.date) else str(d) for d in days
    ]
    section_ids = sorted(seen_sections) if sections is None else list(sections)
    B = bins.active_bins
    out = {}
    for sec in section_ids:
        logv = np.full((len(day_labels), B), np.nan)
        for i, day in enumerate(day_labels):
            for b in range(1, B + 1):
                cell = logs.get((sec, day, b))
                if cell:
                    logv[i, b - 1] = sum(cell) / len(cell)
        mask = np.isnan(logv)
        for b in range(B):
            col = logv[:, b]
            if mask[:, b].all():
                raise InsufficientCoverageError(
                    f"insufficient coverage: section {sec}, bin {b + 1} is empty on every day"
                )
            col[mask[:, b]] = np.mean(col[~mask[:, b]])
        out[sec] = SectionSeries(sec, np.exp(logv), mask, list(day_labels))
    return out


def _open_out(path):
    if path == "-":
        import sys

        return _NoClose(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="")


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()
        return False


def write_series_csv(series: Iterable[SectionSeries], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for s in series:
            for i, day in enumerate(s.days):
                for b in range(s.n_bins):
                    w.writerow([s.section, day, b + 1, repr(float(s.values[i, b])), int(s.mask[i, b])])


def read_series_csv(path) -> dict[int, SectionSeries]:
    cells: dict[int, dict[tuple[str, int], tuple[float, bool]]] = defaultdict(dict)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SERIES_HEADER:
            raise DataError(f"{path}: expected header {','.join(SERIES_HEADER)}")
        for row in reader:
            cells[int(row["section"])][(row["day"], int(row["bin"]))] = (
                float(row["value"]),
                row["imputed"].strip() in ("1", "true", "True"),
            )
    out = {}
    for sec, cell in sorted(cells.items()):
        days = sorted({d for d, _ in cell})
        row = {d: i for i, d in enumerate(days)}
        B = max(b for _, b in cell)
        values = np.full((len(days), B), np.nan)
        mask = np.zeros((len(days), B), dtype=bool)
        for (day, b), (v, m) in cell.items():
            values[row[day], b - 1] = v
            mask[row[day], b - 1] = m
        if np.isnan(values).any():
            raise DataError(f"{path}: section {sec} has missing (day, bin) cells")
        out[sec] = SectionSeries(sec, values, mask, days)
    return out
