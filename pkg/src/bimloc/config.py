"""Run configuration: a TOML parameter tree with validated defaults and a stable hash."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .localizer import DEFAULT_WHITELIST, PrefilterConfig, TrackerConfig, Variant
from .registration import WeightConfig
from .simulator import SensorModel


@dataclass(frozen=True)
class MapSection:
    density: float = 30.0
    seed: int = 0
    normal_k: int = 10
    n_candidates: int = 8


@dataclass(frozen=True)
class TrackerSection:
    variant: str = "SEM_WC_WRHO"
    max_iterations: int = 40
    whitelist: tuple = DEFAULT_WHITELIST
    scan_normal_k: int = 10


@dataclass(frozen=True)
class WeightSection:
    mu: float = 0.8
    delta: float = 0.05
    trim_ratio: float = 0.85
    normal_angle_max_deg: float = 50.0
    k: int = 3
    min_weight: float = 1e-3


@dataclass(frozen=True)
class PrefilterSection:
    target_count: int = 2100
    voxel: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class SensorSection:
    channels: int = 16
    vertical_fov_deg: tuple = (-15.0, 15.0)
    horizontal_step_deg: float = 0.2
    max_range: float = 100.0
    range_noise_sigma: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class EvaluationSection:
    mode: str = "se2"
    max_dt: float = 0.05
    z_window: int = 50


_SECTIONS = {
    "map": MapSection,
    "tracker": TrackerSection,
    "weight": WeightSection,
    "prefilter": PrefilterSection,
    "sensor": SensorSection,
    "evaluation": EvaluationSection,
}


class ConfigError(ValueError):
    pass


def _coerce(section: str, name: str, default, value):
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected an array")
        item = default[0] if default else ""
        return tuple(_coerce(section, name, item, v) for v in value)
    raise ConfigError(f"{where}: unsupported type")


@dataclass(frozen=True)
class RunConfig:
    map: MapSection = field(default_factory=MapSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    weight: WeightSection = field(default_factory=WeightSection)
    prefilter: PrefilterSection = field(default_factory=PrefilterSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def __post_init__(self):
        # build every derived object once so bad values fail at load time
        try:
            Variant(self.tracker.variant)
            self.tracker_config()
            self.sensor_model()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.map.density <= 0:
            raise ConfigError("map.density must be positive")
        if self.map.normal_k < 3:
            raise ConfigError("map.normal_k must be at least 3")
        if self.map.n_candidates < 1:
            raise ConfigError("map.n_candidates must be >= 1")
        if self.evaluation.mode not in ("se2", "none"):
            raise ConfigError("evaluation.mode must be 'se2' or 'none'")
        if len(self.sensor.vertical_fov_deg) != 2:
            raise ConfigError("sensor.vertical_fov_deg needs two values")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, section_cls in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"[{name}] must be a table")
            defaults = section_cls()
            known = {f.name for f in fields(section_cls)}
            bad = set(raw) - known
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            parts[name] = section_cls(**{k: _coerce(name, k, getattr(defaults, k), v) for k, v in raw.items()})
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with some keys of one section replaced (used for command-line flags)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        cur = getattr(self, section)
        data = {k: _coerce(section, k, getattr(cur, k), v) for k, v in values.items()}
        return replace(self, **{section: replace(cur, **data)})

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    @property
    def hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def weight_config(self) -> WeightConfig:
        w = self.weight
        return WeightConfig(
            mu=w.mu,
            delta=w.delta,
            trim_ratio=w.trim_ratio,
            normal_angle_max=math.radians(w.normal_angle_max_deg),
            k=w.k,
            min_weight=w.min_weight,
        )

    def tracker_config(self, variant: str | None = None) -> TrackerConfig:
        t = self.tracker
        p = self.prefilter
        return TrackerConfig.for_variant(
            variant or t.variant,
            budget=t.max_iterations,
            selection_whitelist=t.whitelist,
            weight=self.weight_config(),
            prefilter=PrefilterConfig(p.target_count, p.voxel, p.seed),
            scan_normal_k=t.scan_normal_k,
        )

    def sensor_model(self) -> SensorModel:
        return SensorModel.from_dict(asdict(self.sensor))
