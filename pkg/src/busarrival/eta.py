"""Multi-section-ahead travel-time and arrival prediction.

A bus just leaving section ``i`` at time ``T_cur`` (bin ``j``) is walked
forward one section at a time.  Section ``i + k`` is predicted by its own
temporal model ``FutStep`` bins ahead of the last closed bin ``j - 1``; each
time the running exit time leaves the expected bin, both ``FutStep`` and the
expected bin advance.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Protocol

import numpy as np

from ._validation import DataError
from .ingest import BinGrid, TravelTimeRecord

TRACE_HEADER = ("k", "section", "futstep", "exp_bin", "pred_s", "cum_exit")


class SectionForecaster(Protocol):
    def forecast(self, today=None, steps: int = 1, previous_days=None) -> np.ndarray: ...


@dataclass(frozen=True)
class StoreSnapshot:
    cells: Mapping[tuple[int, int], tuple[float, int]]
    clock: float
    watermark: int
    previous_days: Mapping[int, np.ndarray]

    def observed(self, section: int, upto_bin: int) -> np.ndarray:
        """Geometric-mean travel times of bins ``1..upto_bin`` (NaN where unobserved)."""
        out = np.full(max(upto_bin, 0), np.nan)
        for b in range(1, min(upto_bin, self.watermark) + 1):
            cell = self.cells.get((section, b))
            if cell is not None:
                out[b - 1] = math.exp(cell[0] / cell[1])
        return out


class RealtimeStore:
    """Current-day observations from earlier buses, readable as consistent snapshots.

    Cells keep a running log-sum and count so each reads as the geometric mean
    of its records.  Only bins up to the watermark (the last fully closed
    bin) are visible to queries.  Writers swap in a new immutable state under
    a lock, so readers see either the old or the new state, never a mix.
    """

    def __init__(self, bins: BinGrid = BinGrid(), clock: float = 0.0, previous_days: Mapping[int, np.ndarray] | None = None):
        self.bins = bins
        self._lock = threading.Lock()
        prev = {int(k): np.atleast_2d(np.asarray(v, dtype=float)) for k, v in (previous_days or {}).items()}
        self._snap = StoreSnapshot(MappingProxyType({}), float(clock), self._watermark_at(clock), MappingProxyType(prev))

    def _watermark_at(self, clock: float) -> int:
        return min(max(self.bins.bin_of(clock) - 1, 0), self.bins.active_bins)

    @property
    def clock(self) -> float:
        return self._snap.clock

    @property
    def watermark(self) -> int:
        return self._snap.watermark

    @property
    def current_bin(self) -> int:
        return self.bins.bin_of(self._snap.clock)

    def snapshot(self) -> StoreSnapshot:
        return self._snap

    def advance_to(self, clock: float) -> "RealtimeStore":
        with self._lock:
            s = self._snap
            if clock < s.clock:
                raise ValueError("store clock cannot move backwards")
            self._snap = StoreSnapshot(s.cells, float(clock), self._watermark_at(clock), s.previous_days)
        return self

    def add(self, section: int, entry_time: float, travel_time: float) -> None:
        if travel_time <= 0:
            raise DataError("travel time must be positive")
        b = self.bins.bin_of(entry_time)
        with self._lock:
            s = self._snap
            if b > self.bins.bin_of(s.clock):
                raise DataError(f"record in future bin {b} rejected (current bin {self.bins.bin_of(s.clock)})")
            if not 1 <= b <= self.bins.active_bins:
                return
            cells = dict(s.cells)
            log_sum, count = cells.get((section, b), (0.0, 0))
            cells[(section, b)] = (log_sum + math.log(travel_time), count + 1)
            self._snap = StoreSnapshot(MappingProxyType(cells), s.clock, s.watermark, s.previous_days)

    @classmethod
    def from_day(
        cls,
        day_values: Mapping[int, np.ndarray],
        bins: BinGrid,
        clock: float,
        previous_days: Mapping[int, np.ndarray] | None = None,
    ) -> "RealtimeStore":
        """Store holding a binned day's values for every bin closed at ``clock``."""
        store = cls(bins, clock, previous_days)
        upto = store.watermark
        cells = {}
        for sec, row in day_values.items():
            row = np.asarray(row, dtype=float)
            for b in range(1, min(upto, len(row)) + 1):
                v = row[b - 1]
                if np.isfinite(v) and v > 0:
                    cells[(int(sec), b)] = (math.log(v), 1)
        s = store._snap
        store._snap = StoreSnapshot(MappingProxyType(cells), s.clock, s.watermark, s.previous_days)
        return store


def update_store(store: RealtimeStore, record: TravelTimeRecord, now: float | None = None) -> RealtimeStore:
    """Fold one completed section traversal into ``store``; optionally advance its clock first."""
    if now is not None:
        store.advance_to(now)
    store.add(record.section, record.entry_time, record.travel_time)
    return store


@dataclass(frozen=True)
class EtaQuery:
    section: int
    time: float
    horizon: int


@dataclass(frozen=True)
class EtaStep:
    k: int
    section: int
    futstep: int
    exp_bin: int
    pred_s: float
    cum_exit: float


@dataclass
class EtaPrediction:
    start_time: float
    current_bin: int
    steps: list[EtaStep] = field(default_factory=list)

    @property
    def arrival_time(self) -> float:
        return self.steps[-1].cum_exit if self.steps else self.start_time

    @property
    def travel_time(self) -> float:
        return self.arrival_time - self.start_time

    def rows(self):
        for s in self.steps:
            yield (s.k, s.section, s.futstep, s.exp_bin, s.pred_s, s.cum_exit)


def predict_multi_section(
    models: Mapping[int, SectionForecaster],
    store: RealtimeStore,
    query: EtaQuery,
    *,
    section_count: int | None = None,
) -> EtaPrediction:
    bins = store.bins
    if query.horizon < 0:
        raise ValueError("horizon must be non-negative")
    if section_count is not None and query.section + query.horizon > section_count:
        raise ValueError(f"sections {query.section + 1}..{query.section + query.horizon} exceed the route's {section_count}")
    j = bins.bin_of(query.time)
    if not 1 <= j <= bins.active_bins:
        raise DataError(f"query time {query.time:.0f}s lies outside the active bins")
    snap = store.snapshot()
    out = EtaPrediction(query.time, j)
    t_exit = float(query.time)
    futstep, exp_bin = 1, j
    for k in range(1, query.horizon + 1):
        sec = query.section + k
        try:
            model = models[sec]
        except KeyError:
            raise DataError(f"no trained model for section {sec}") from None
        today = snap.observed(sec, j - 1)
        pred = float(model.forecast(today, steps=futstep, previous_days=snap.previous_days.get(sec))[-1])
        t_exit += pred
        out.steps.append(EtaStep(k, sec, futstep, exp_bin, pred, t_exit))
        # a single long section can carry the bus across several bins
        while t_exit >= bins.bin_end(exp_bin):
            futstep += 1
            exp_bin += 1
    return out


def eta_to_stop(
    models: Mapping[int, SectionForecaster],
    store: RealtimeStore,
    section: int,
    time: float,
    stop_section: int,
) -> EtaPrediction:
    """Arrival at the stop closing section ``stop_section`` for a bus leaving ``section``.

    Sections ``section + 1 .. stop_section`` are predicted, so the arrival is
    ``time`` plus their sum; ``arrival_time`` of the result holds it.
    """
    if stop_section <= section:
        raise ValueError(f"stop section {stop_section} is not ahead of section {section}")
    return predict_multi_section(models, store, EtaQuery(section, time, stop_section - section))


def format_clock(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"


def parse_clock(text: str) -> float:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"time must be HH:MM[:SS], got {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = float(parts[2]) if len(parts) == 3 else 0.0
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"invalid clock time {text!r}")
    return h * 3600 + m * 60 + s
