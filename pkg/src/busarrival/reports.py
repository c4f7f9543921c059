"""Diagnostic reports (CSV) and a minimal SVG correlogram renderer."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ._validation import DataError
from .ingest import SectionSeries, _open_out
from .stats import acf, adf, ks_lognormal, pacf

CORRELOGRAM_HEADER = ("section", "lag", "acf", "pacf")
TESTS_HEADER = ("section", "test", "statistic", "p_value", "decision")


@dataclass(frozen=True)
class TestRow:
    section: int
    test: str
    statistic: float
    p_value: float
    decision: str


@dataclass
class Diagnostics:
    section: int
    acf: np.ndarray
    pacf: np.ndarray
    band: float
    tests: list[TestRow]


def diagnose_section(
    series: SectionSeries,
    *,
    max_lag: int | None = None,
    significance: float = 0.05,
    ks_pvalue: str = "lilliefors",
) -> Diagnostics:
    """Lognormality, unit-root and correlogram checks on one section's days.

    The K-S test runs on the raw travel times; the ADF test and the
    correlograms run on the day-wise concatenated log series.
    """
    s = series.n_bins
    x = np.log(series.values).ravel()
    L = min(max_lag or 2 * s, len(x) - 1)
    r, pr = acf(x, L), pacf(x, L)
    ks = ks_lognormal(series.values.ravel(), significance=significance, pvalue=ks_pvalue)
    ur = adf(x, significance=significance)
    tests = [
        TestRow(series.section, "ks_lognormal", ks.statistic, ks.p_value, "reject" if ks.reject_null else "retain"),
        TestRow(series.section, "adf", ur.statistic, ur.p_value, "reject" if ur.reject_null else "retain"),
        TestRow(series.section, "acf_lag1", float(r[1]), math.nan, "significant" if abs(r[1]) > r.band else "within_band"),
    ]
    if L >= s:
        # lag-s autocorrelation well below one rules out a seasonal unit root
        tests.append(TestRow(series.section, "acf_seasonal", float(r[s]), math.nan, "below_one" if r[s] < 0.9 else "near_one"))
    return Diagnostics(series.section, np.asarray(r.values), np.asarray(pr.values), r.band, tests)


def _num(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.10g}"


def write_correlogram_csv(diags: Iterable[Diagnostics], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORRELOGRAM_HEADER)
        for d in diags:
            for lag in range(len(d.acf)):
                w.writerow([d.section, lag, _num(d.acf[lag]), _num(d.pacf[lag])])


def write_tests_csv(diags: Iterable[Diagnostics], path) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TESTS_HEADER)
        for d in diags:
            for t in d.tests:
                w.writerow([t.section, t.test, _num(t.statistic), _num(t.p_value), t.decision])


def read_correlogram_csv(path) -> dict[int, dict[str, np.ndarray]]:
    rows: dict[int, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CORRELOGRAM_HEADER:
            raise DataError(f"{path}: expected header {','.join(CORRELOGRAM_HEADER)}")
        for row in reader:
            rows.setdefault(int(row["section"]), []).append(
                (int(row["lag"]), float(row["acf"] or "nan"), float(row["pacf"] or "nan"))
            )
    return {
        sec: {"acf": np.array([v[1] for v in sorted(r)]), "pacf": np.array([v[2] for v in sorted(r)])}
        for sec, r in rows.items()
    }


def correlogram_svg(values: np.ndarray, band: float, *, title: str = "", width: int = 480, height: int = 200) -> str:
    """Stem plot of lags ``1..`` with a dashed +/- ``band`` envelope."""
    v = np.asarray(values, dtype=float)[1:]
    pad = 30
    mid = height / 2
    scale = (height / 2 - pad / 2) / 1.0
    step = (width - 2 * pad) / max(len(v), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{pad}" y="14" font-size="12" font-family="sans-serif">{title}</text>',
        f'<line x1="{pad}" y1="{mid:.1f}" x2="{width - pad}" y2="{mid:.1f}" stroke="black"/>',
    ]
    for y in (mid - band * scale, mid + band * scale):
        parts.append(
            f'<line x1="{pad}" y1="{y:.1f}" x2="{width - pad}" y2="{y:.1f}" stroke="steelblue" stroke-dasharray="4,3"/>'
        )
    for i, val in enumerate(v):
        x = pad + (i + 0.5) * step
        y = mid - (0.0 if math.isnan(val) else val) * scale
        parts.append(f'<line x1="{x:.1f}" y1="{mid:.1f}" x2="{x:.1f}" y2="{y:.1f}" stroke="firebrick" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_correlogram_svgs(diags: Iterable[Diagnostics], out_dir) -> list[str]:
    import os

    paths = []
    for d in diags:
        for kind in ("acf", "pacf"):
            path = os.path.join(out_dir, f"{kind}_section{d.section:03d}.svg")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(correlogram_svg(getattr(d, kind), d.band, title=f"{kind.upper()} section {d.section}"))
            paths.append(path)
    return paths


def order_summary(diags: Mapping[int, Diagnostics], max_order: int = 5) -> dict[int, int]:
    """Largest significant PACF lag up to ``max_order`` per section (floor 1)."""
    out = {}
    for sec, d in diags.items():
        lags = [k for k in range(1, min(max_order, len(d.pacf) - 1) + 1) if abs(d.pacf[k]) > d.band]
        out[sec] = max(lags) if lags else 1
    return out
