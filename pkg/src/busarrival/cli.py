"""Command-line interface: ``busarrival <ingest|diagnose|fit|predict|evaluate|synth>``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
data errors (missing or malformed inputs, insufficient data).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import evaluation, ingest, nsar, reports, sar, synth
from ._validation import DataError
from .config import ConfigError, PipelineConfig, load_config
from .eta import TRACE_HEADER, RealtimeStore, eta_to_stop, format_clock, parse_clock

log = logging.getLogger("busarrival")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="override one configuration key (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-section fitting")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="diagnostics on standard error")

    p = _Parser(prog="busarrival", description="Bus travel-time modelling and arrival prediction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="GPS log -> section travel-time series")
    s.add_argument("--gps", required=True, help="CSV with device_id,timestamp,lat,lon")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--skip-malformed", action="store_true", help="skip malformed rows instead of failing")

    s = sub.add_parser("diagnose", parents=[common], help="K-S, ADF and correlogram reports")
    s.add_argument("--series", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--max-lag", type=int, default=None)
    s.add_argument("--svg", action="store_true", help="also render correlogram SVGs")

    s = sub.add_parser("fit", parents=[common], help="fit seasonal and non-stationary AR models per section")
    s.add_argument("--series", required=True)
    s.add_argument("--out-dir", required=True)

    s = sub.add_parser("predict", parents=[common], help="multi-section arrival-time trace")
    s.add_argument("--series", required=True, help="series file supplying history and the query day")
    s.add_argument("--models-dir", required=True)
    s.add_argument("--at", type=int, required=True, help="section the bus has just left")
    s.add_argument("--time", required=True, help="current time HH:MM:SS")
    s.add_argument("--to-stop", type=int, required=True, help="stop at the end of this section")
    s.add_argument("--model", choices=["sar", "nsar"], default=None)
    s.add_argument("--day", default=None, help="query day label or 0-based index (default: first test day)")
    s.add_argument("--out", default="-")

    s = sub.add_parser("evaluate", parents=[common], help="train/test metrics for all methods")
    s.add_argument("--series", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--methods", default="sar,sar_gaussian,nsar,nsar_gaussian,historical_average,exp_smoothing")
    s.add_argument("--external", default=None, help="predictions CSV of third-party methods")
    s.add_argument("--no-eta", action="store_true", help="skip the arrival-time evaluation")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic fixture")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--kind", choices=synth.KINDS, default="sar_multiplicative")
    s.add_argument("--days", type=int, default=34)
    s.add_argument("--sections", type=int, default=56)
    s.add_argument("--mean-seconds", type=float, default=835.0)
    s.add_argument("--profile", choices=["flat", "rush"], default="flat")
    s.add_argument("--noise", type=float, default=0.03, help="innovation s.d. in the log domain")
    s.add_argument("--gps-days", type=int, default=1, help="days of GPS fixes to emit (0: none)")
    s.add_argument("--gps-mean-seconds", type=float, default=60.0, help="section time of the GPS fixture")
    return p


# --------------------------------------------------------------------------- helpers


def _need_file(path: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    return path


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _series(path: str) -> dict[int, ingest.SectionSeries]:
    out = ingest.read_series_csv(_need_file(path))
    if not out:
        raise DataError(f"{path}: no series")
    return out


def _fit_section(args) -> tuple[sar.SarModel, nsar.NsarModel]:
    values, section, cfg = args
    s = sar.SeasonalARForecaster(
        kind=cfg.sar_kind, domain="log", significance=cfg.significance, max_order=cfg.max_order, section=section
    ).fit(values)
    n = nsar.NonStationaryARForecaster(domain="log", significance=cfg.significance, tstat=cfg.pc_tstat, section=section).fit(values)
    return s.model_, n.model_


# --------------------------------------------------------------------------- subcommands


def cmd_ingest(ns, cfg: PipelineConfig) -> None:
    parsed = ingest.parse_gps(_need_file(ns.gps), on_error="skip" if ns.skip_malformed else "raise")
    log.info("%d fixes, %d rejected, %d malformed", len(parsed.fixes), parsed.rejected, len(parsed.malformed))
    split = ingest.identify_trips(
        parsed.fixes, cfg.origin, cfg.terminus,
        capture_radius=cfg.capture_radius, gap_threshold=cfg.gap_threshold, tz_offset=cfg.tz_offset,
    )
    log.info("%d trips, %d discarded", len(split.trips), split.discarded)
    grid = cfg.grid
    records = [
        r for trip in split.trips if trip.direction == cfg.direction
        for r in ingest.sectionize(trip, grid, tz_offset=cfg.tz_offset)
    ]
    if not records:
        raise DataError(f"no {cfg.direction} section records found")
    records = ingest.clean(
        records, grid, free_flow_speed=cfg.free_flow_speed,
        percentile=cfg.percentile_cap, min_observations=cfg.min_observations,
    )
    series = ingest.binize(records, cfg.bins, sections=range(1, grid.section_count + 1))
    out = _out_dir(ns.out_dir)
    ingest.write_records_csv(records, os.path.join(out, "records.csv"))
    ingest.write_series_csv(series.values(), os.path.join(out, "series.csv"))
    imputed = sum(int(s.mask.sum()) for s in series.values())
    log.info("%d records -> %d sections, %d imputed cells", len(records), len(series), imputed)


def cmd_diagnose(ns, cfg: PipelineConfig) -> None:
    series = _series(ns.series)
    diags = []
    for sec in sorted(series):
        s = series[sec]
        train = ingest.SectionSeries(sec, s.values[: cfg.train_days], s.mask[: cfg.train_days], s.days[: cfg.train_days])
        diags.append(reports.diagnose_section(train, max_lag=ns.max_lag, significance=cfg.significance, ks_pvalue=cfg.ks_pvalue))
    out = _out_dir(ns.out_dir)
    reports.write_correlogram_csv(diags, os.path.join(out, "correlogram.csv"))
    reports.write_tests_csv(diags, os.path.join(out, "tests.csv"))
    if ns.svg:
        reports.write_correlogram_svgs(diags, out)


def cmd_fit(ns, cfg: PipelineConfig) -> None:
    series = _series(ns.series)
    for s in series.values():
        if s.n_days < cfg.train_days:
            raise DataError(f"section {s.section}: {s.n_days} days, {cfg.train_days} needed for training")
    jobs = [(series[k].values[: cfg.train_days], k, cfg) for k in sorted(series)]
    if ns.jobs > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            fitted = list(pool.map(_fit_section, jobs))
    else:
        fitted = [_fit_section(j) for j in jobs]
    out = _out_dir(ns.out_dir)
    sar.save_models([f[0] for f in fitted], os.path.join(out, "sar_models.csv"))
    nsar.save_models([f[1] for f in fitted], os.path.join(out, "nsar_models.csv"))
    for m in fitted:
        log.info("section %d: %s p=%d differenced=%s", m[0].section, m[0].kind, m[0].p, m[0].differenced)


def _day_index(series, day, default: int) -> int:
    labels = next(iter(series.values())).days
    if day is None:
        return min(default, len(labels) - 1)
    if day in labels:
        return labels.index(day)
    try:
        idx = int(day)
    except ValueError:
        raise DataError(f"unknown day {day!r}") from None
    if not 0 <= idx < len(labels):
        raise DataError(f"day index {idx} outside 0..{len(labels) - 1}")
    return idx


def cmd_predict(ns, cfg: PipelineConfig) -> None:
    try:
        t_cur = parse_clock(ns.time)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if ns.to_stop <= ns.at:
        raise UsageError(f"--to-stop {ns.to_stop} must lie after --at {ns.at}")
    kind = ns.model or cfg.model
    series = _series(ns.series)
    di = _day_index(series, ns.day, cfg.train_days)
    if di < cfg.train_days:
        raise DataError(f"query day {di} lies inside the {cfg.train_days} training days")
    path = os.path.join(ns.models_dir, f"{kind}_models.csv")
    stored = (sar.load_models if kind == "sar" else nsar.load_models)(_need_file(path))
    route = range(ns.at + 1, ns.to_stop + 1)
    missing = [k for k in route if k not in stored or k not in series]
    if missing:
        raise DataError(f"no model or series for section(s) {missing}")
    if kind == "sar":
        models = {k: sar.SeasonalARForecaster.from_model(stored[k], series[k].values[: cfg.train_days]) for k in route}
    else:
        models = {k: nsar.NonStationaryARForecaster.from_model(stored[k]) for k in route}
    store = RealtimeStore.from_day(
        {k: series[k].values[di] for k in route}, cfg.bins, t_cur,
        {k: series[k].values[cfg.train_days : di] for k in route},
    )
    pred = eta_to_stop(models, store, ns.at, t_cur, ns.to_stop)
    with ingest._open_out(ns.out) as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for k, sec, fut, b, p, cum in pred.rows():
            fh.write(f"{k},{sec},{fut},{b},{p:.3f},{cum:.3f}\n")
    log.info("arrival %s, travel time %.1f s", format_clock(pred.arrival_time), pred.travel_time)


def cmd_evaluate(ns, cfg: PipelineConfig) -> None:
    series = _series(ns.series)
    methods = [m.strip() for m in ns.methods.split(",") if m.strip()]
    factories = evaluation.default_methods(significance=cfg.significance, tstat=cfg.pc_tstat, alpha=cfg.alpha)
    unknown = [m for m in methods if m not in factories]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; known: {', '.join(sorted(factories))}")
    external = evaluation.read_predictions_csv(_need_file(ns.external)) if ns.external else None
    result = evaluation.evaluate_split(
        series, methods, n_train=cfg.train_days, n_test=cfg.test_days, external=external, factories=factories
    )
    rows = list(result.reports)
    out = _out_dir(ns.out_dir)
    if not ns.no_eta:
        if all(k in series for k in range(1, cfg.eta_stop + 1)):
            eta_methods = [m for m in methods if m in ("sar", "nsar", "historical_average", "exp_smoothing")]
            eta_rows, samples = evaluation.evaluate_eta(
                series, eta_methods, stop_section=cfg.eta_stop, n_train=cfg.train_days,
                n_test=cfg.test_days, bins=cfg.bins, factories=factories,
            )
            rows.extend(eta_rows)
            evaluation.write_eta_csv(samples, os.path.join(out, "eta.csv"))
        else:
            log.warning("series lacks sections 1..%d; arrival-time evaluation skipped", cfg.eta_stop)
    evaluation.write_reports_csv(rows, os.path.join(out, "report.csv"))
    evaluation.write_predictions_csv(result.predictions, os.path.join(out, "predictions.csv"))
    for name, value in result.overall().items():
        log.info("%-20s overall MAPE %.3f%%", name, value)


def cmd_synth(ns, cfg: PipelineConfig) -> None:
    seed = cfg.seed if ns.seed is None else ns.seed
    if ns.days < 1 or ns.sections < 1 or ns.mean_seconds <= 0 or ns.noise < 0:
        raise UsageError("days, sections and mean-seconds must be positive and noise non-negative")
    profile = synth.rush_hour_profile(cfg.active_bins) if ns.profile == "rush" else None
    spec = synth.SynthSpec(
        kind=ns.kind, mu=math.log(ns.mean_seconds), sigma=ns.noise, profile=profile,
        days=ns.days, bins=cfg.active_bins, sections=ns.sections, seed=seed,
    )
    series = synth.synth_generate(spec)
    out = _out_dir(ns.out_dir)
    ingest.write_series_csv(series.values(), os.path.join(out, "series.csv"))
    if ns.gps_days > 0:
        gps_spec = synth.SynthSpec(
            kind="lognormal_iid", mu=math.log(ns.gps_mean_seconds), sigma=ns.noise,
            days=min(ns.gps_days, ns.days), bins=cfg.active_bins, sections=ns.sections, seed=seed,
        )
        route = synth.RouteGeometry(cfg.origin, cfg.section_length, ns.sections)
        fixes = synth.synth_gps(synth.synth_generate(gps_spec), route, cfg.bins)
        ingest.write_gps_csv(fixes, os.path.join(out, "gps.csv"))
        with open(os.path.join(out, "gps.cfg"), "w", encoding="utf-8") as fh:
            fh.write(f"route_length = {route.length!r}\n")
            fh.write(f"origin_lat = {route.origin[0]!r}\norigin_lon = {route.origin[1]!r}\n")
            fh.write(f"terminus_lat = {route.terminus[0]!r}\nterminus_lon = {route.terminus[1]!r}\n")
    log.info("wrote %d sections x %d days to %s", ns.sections, ns.days, out)


COMMANDS = {
    "ingest": cmd_ingest,
    "diagnose": cmd_diagnose,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=ns.log_level, stream=sys.stderr, format="%(levelname)s %(message)s", force=True)
        if ns.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        cfg = load_config(ns.config, dict(ns.overrides))
        COMMANDS[ns.command](ns, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, sar.ConvergenceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
