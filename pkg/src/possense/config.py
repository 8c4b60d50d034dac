"""Pipeline configuration: defaults, TOML loading, env and flag overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grouping import FeatureParams, FeatureScaling, GroupingParams
from .grouping.features import TAU_S_DEFAULT, TAU_V_DEFAULT
from .model import FrameClock
from .tracking import CHI2INV95, TrackerConfig

ENV_PREFIX = "POSSENSE_"


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit(x):
    return 0 <= x <= 1


@dataclass
class ClockSection:
    fps: float = 7.0
    n_skip: int = 1

    _checks = {"fps": _positive, "n_skip": lambda v: v >= 1}


@dataclass
class TrackingSection:
    n_init: int = 3
    max_age: int = 30
    gallery_size: int = 100
    chi2_gate: float = CHI2INV95[4]
    app_gate: float = 0.2
    lambda_mix: float = 0.0
    iou_min: float = 0.3
    min_confidence: float = 0.0
    min_len: int = 4

    _checks = {
        "n_init": lambda v: v >= 1,
        "max_age": _nonneg,
        "gallery_size": lambda v: v >= 1,
        "chi2_gate": _positive,
        "app_gate": lambda v: 0 <= v <= 2,
        "lambda_mix": _unit,
        "iou_min": _unit,
        "min_confidence": _unit,
        "min_len": lambda v: v >= 1,
    }


@dataclass
class GroupingSection:
    window_s: float = 10.0
    stride_s: float = 0.0  # 0 means non-overlapping windows
    smooth_s: float = 1.0
    tau_s: float = TAU_S_DEFAULT
    tau_v: float = TAU_V_DEFAULT
    lambda_loc: float = 0.5
    granger_order: int = 2
    grid_res: float = 0.5
    grid_pad: float = 5.0
    alpha: list = field(default_factory=lambda: [0.6, 0.4, 0.2, 0.3])
    beta: list = field(default_factory=lambda: [0.4, 0.6, 0.2, 0.3])
    eps_neg: float = -1.0  # negative means 0.1 * sum(beta)
    exact_limit: int = 12
    scaling: str = "fixed"
    f1_near_m: float = 1.2
    f2_bounds: list = field(default_factory=lambda: [1.44, 25.0])
    f3_bounds: list = field(default_factory=lambda: [0.0, 3.0])
    f4_bounds: list = field(default_factory=lambda: [0.0, 1.0])

    _checks = {
        "window_s": _positive,
        "stride_s": _nonneg,
        "smooth_s": _nonneg,
        "tau_s": _positive,
        "tau_v": _positive,
        "lambda_loc": _unit,
        "granger_order": lambda v: v >= 1,
        "grid_res": _positive,
        "grid_pad": _nonneg,
        "alpha": lambda v: len(v) == 4 and min(v) >= 0,
        "beta": lambda v: len(v) == 4 and min(v) >= 0,
        "exact_limit": lambda v: 0 <= v <= 14,
        "scaling": lambda v: v in ("fixed", "window"),
        "f1_near_m": _positive,
        "f2_bounds": lambda v: len(v) == 2 and v[0] < v[1],
        "f3_bounds": lambda v: len(v) == 2 and v[0] < v[1],
        "f4_bounds": lambda v: len(v) == 2 and v[0] < v[1],
    }


@dataclass
class MonitoringSection:
    threshold_m: float = 2.0
    min_duration_s: float = 0.0
    distance_mode: str = "min_pair"
    zone_buffer_m: float = 0.4
    zone_min_dwell_s: float = 5.0
    aspect_ratio_max_sit: float = 1.8
    min_px_height: float = 60.0
    bucket: str = "day"
    base_time: str = "2020-06-01T00:00:00"

    _checks = {
        "threshold_m": _positive,
        "min_duration_s": _nonneg,
        "distance_mode": lambda v: v in ("min_pair", "hausdorff"),
        "zone_buffer_m": _nonneg,
        "zone_min_dwell_s": _nonneg,
        "aspect_ratio_max_sit": _positive,
        "min_px_height": _nonneg,
        "bucket": lambda v: v in ("hour", "day"),
    }


@dataclass
class EvaluationSection:
    iou_min: float = 0.5

    _checks = {"iou_min": _unit}


@dataclass
class PipelineConfig:
    clock: ClockSection = field(default_factory=ClockSection)
    tracking: TrackingSection = field(default_factory=TrackingSection)
    grouping: GroupingSection = field(default_factory=GroupingSection)
    monitoring: MonitoringSection = field(default_factory=MonitoringSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    # -- conversions to module parameter objects -------------------------
    def frame_clock(self) -> FrameClock:
        return FrameClock(self.clock.fps, self.clock.n_skip)

    def tracker_config(self) -> TrackerConfig:
        t = self.tracking
        return TrackerConfig(t.n_init, t.max_age, t.gallery_size, t.chi2_gate, t.app_gate, t.lambda_mix, t.iou_min, t.min_confidence)

    def grouping_params(self) -> GroupingParams:
        g = self.grouping
        return GroupingParams(
            features=FeatureParams(g.tau_s, g.tau_v, g.lambda_loc, g.granger_order, g.grid_res, g.grid_pad),
            scaling=FeatureScaling(g.f1_near_m, g.tau_s, tuple(g.f2_bounds), tuple(g.f3_bounds), tuple(g.f4_bounds), g.scaling),
            alpha=tuple(g.alpha),
            beta=tuple(g.beta),
            eps_neg=None if g.eps_neg < 0 else g.eps_neg,
            exact_limit=g.exact_limit,
        )

    @property
    def stride_s(self) -> float | None:
        return self.grouping.stride_s or None

    def to_dict(self) -> dict:
        return {s.name: dataclasses.asdict(getattr(self, s.name)) for s in dataclasses.fields(self)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _coerce(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}", key)
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, str):
            value = value.strip()
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key) from None
        if f != int(f):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        return int(f)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key) from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}", key) from None
    return str(value)


def set_value(cfg: PipelineConfig, dotted: str, value: Any) -> None:
    """Set ``section.key``; unknown names and out-of-range values raise ConfigError."""
    parts = dotted.split(".")
    if len(parts) != 2:
        raise ConfigError(f"unknown config key {dotted!r} (expected section.key)", dotted)
    section_name, key = parts
    section_names = [f.name for f in dataclasses.fields(cfg)]
    if section_name not in section_names:
        raise ConfigError(f"unknown config key {dotted!r}: no section {section_name!r}", dotted)
    section = getattr(cfg, section_name)
    names = {f.name: f for f in dataclasses.fields(section)}
    if key not in names:
        raise ConfigError(f"unknown config key {dotted!r}", dotted)
    value = _coerce(dotted, getattr(section, key), value)
    check = type(section)._checks.get(key)
    if check is not None and not check(value):
        raise ConfigError(f"{dotted}: value {value!r} out of range", dotted)
    setattr(section, key, value)


def apply_mapping(cfg: PipelineConfig, data: Mapping[str, Any]) -> None:
    for section_name, body in data.items():
        if not isinstance(body, Mapping):
            raise ConfigError(f"unknown config key {section_name!r} (expected a [section] table)", section_name)
        for key, value in body.items():
            set_value(cfg, f"{section_name}.{key}", value)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """POSSENSE_TRACKING__MAX_AGE=40 -> {"tracking.max_age": "40"}."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            continue
        section, key = rest.split("__", 1)
        out[f"{section.lower()}.{key.lower()}"] = value
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Defaults, then the TOML file, then environment, then explicit overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        apply_mapping(cfg, data)
    for key, value in env_overrides(environ).items():
        set_value(cfg, key, value)
    for key, value in (overrides or {}).items():
        set_value(cfg, key, value)
    return cfg


def dump_toml(cfg: PipelineConfig) -> str:
    """Write the configuration back out as TOML."""
    lines = []
    for section, body in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in body.items():
            if isinstance(value, str):
                lines.append(f'{key} = "{value}"')
            elif isinstance(value, list):
                lines.append(f"{key} = [{', '.join(repr(float(v)) for v in value)}]")
            else:
                lines.append(f"{key} = {value!r}")
        lines.append("")
    return "\n".join(lines)
