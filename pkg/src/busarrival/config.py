"""Pipeline constants and the ``key = value`` configuration file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .ingest import BinGrid, SectionGrid
from .synth import RouteGeometry

_DEFAULT_ROUTE = RouteGeometry()


class ConfigError(ValueError):
    """Invalid configuration file or override."""


@dataclass(frozen=True)
class PipelineConfig:
    section_length: float = 500.0
    route_length: float = _DEFAULT_ROUTE.length
    bin_duration: int = 3600
    active_bins: int = 19
    day_start_bin: int = 4
    free_flow_speed: float = 60.0
    percentile_cap: float = 95.0
    min_observations: int = 20
    significance: float = 0.05
    pc_tstat: str = "unrooted"
    ks_pvalue: str = "lilliefors"
    model: str = "sar"
    sar_kind: str = "auto"
    max_order: int = 5
    alpha: float = 0.5
    train_days: int = 27
    test_days: int = 7
    seed: int = 0
    capture_radius: float = 250.0
    gap_threshold: float = 600.0
    tz_offset: int = 0
    direction: str = "onward"
    origin_lat: float = _DEFAULT_ROUTE.origin[0]
    origin_lon: float = _DEFAULT_ROUTE.origin[1]
    terminus_lat: float = _DEFAULT_ROUTE.terminus[0]
    terminus_lon: float = _DEFAULT_ROUTE.terminus[1]
    eta_stop: int = 16

    def __post_init__(self):
        positive = (
            "section_length", "route_length", "bin_duration", "active_bins", "free_flow_speed",
            "capture_radius", "gap_threshold", "train_days", "test_days", "min_observations",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.significance < 1.0:
            raise ConfigError("significance must lie in (0, 1)")
        if not 0.0 < self.percentile_cap <= 100.0:
            raise ConfigError("percentile_cap must lie in (0, 100]")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        choices = {
            "pc_tstat": ("unrooted", "conventional"),
            "ks_pvalue": ("lilliefors", "asymptotic"),
            "model": ("sar", "nsar"),
            "sar_kind": ("auto", "multiplicative", "additive"),
            "direction": ("onward", "return"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {', '.join(allowed)}")
        try:
            self.bins
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def bins(self) -> BinGrid:
        return BinGrid(self.bin_duration, self.active_bins, self.day_start_bin)

    @property
    def grid(self) -> SectionGrid:
        return SectionGrid(self.route_length, self.section_length)

    @property
    def origin(self) -> tuple[float, float]:
        return (self.origin_lat, self.origin_lon)

    @property
    def terminus(self) -> tuple[float, float]:
        return (self.terminus_lat, self.terminus_lon)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_overrides(self, overrides: dict[str, str]) -> "PipelineConfig":
        return dataclasses.replace(self, **_coerce_all(overrides))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce_all(raw: dict[str, str]) -> dict:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(types)}")
    out = {}
    for key, text in raw.items():
        kind = types[key]
        try:
            out[key] = int(text) if kind == "int" else float(text) if kind == "float" else text
        except ValueError:
            raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    return out


def parse_config_text(text: str, *, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` pairs; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = parse_config_text(fh.read(), source=str(path))
    raw.update(overrides or {})
    return PipelineConfig(**_coerce_all(raw))
