"""Scenario configuration: YAML schema, dataclasses, and the packaged default."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError

SUPPORTED_CONFIG_VERSION = 1


@dataclass(frozen=True)
class SensorConfig:
    usbl_std: float = 0.3
    usbl_rate: float = 1.0
    pressure_depth_std: float = 0.05
    pressure_rate: float = 10.0
    pressure_kp: float = 9810.0
    pressure_p0: float = 101325.0
    ahrs_std_deg: float = 0.5
    ahrs_rate: float = 100.0
    sound_speed: float = 1500.0
    usbl_base: tuple = (0.0, 0.0, 0.0)

    @property
    def ahrs_std(self) -> float:
        return math.radians(self.ahrs_std_deg)

    @property
    def pressure_std(self) -> float:
        """Pressure noise std in Pa, from the depth-equivalent spec."""
        return self.pressure_kp * self.pressure_depth_std


@dataclass(frozen=True)
class CurrentConfig:
    cap: float = 0.15
    heave_scale: float = 0.1
    n_sinusoids: int = 3
    period_range: tuple = (60.0, 300.0)
    noise_std: float = 0.04
    noise_tau: float = 20.0


@dataclass(frozen=True)
class MismatchConfig:
    drag_rel_std: float = 0.10
    mass_rel_std: float = 0.10
    added_mass_rel_std: float = 0.10
    thruster_gain_rel_std: float = 0.025

    def zeroed(self) -> "MismatchConfig":
        return MismatchConfig(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PlantConfig:
    mass: float = 15.0
    inertia: tuple = (0.06, 0.35, 0.35)
    added_mass: tuple = (5.0, 12.0, 12.0, 0.02, 0.25, 0.25)
    drag: tuple = (10.0, 25.0, 0.3, 1.2)
    buoyancy_arm: float = 0.015
    thruster_lag: float = 0.25
    lever_x: float = 0.25
    pair_offset: float = 0.06
    gain_surge: float = 9.0
    gain_rl: float = 2.5
    gain_ud: float = 2.5


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one deterministic episode apart from the
    GNC parameter vector and the seed."""

    plant: PlantConfig = field(default_factory=PlantConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    current: CurrentConfig = field(default_factory=CurrentConfig)
    mismatch: MismatchConfig = field(default_factory=MismatchConfig)

    seed: int = 1
    waypoints: tuple = ()   # explicit (n, e, d) list; empty -> sampled from seed
    n_waypoints: int = 6
    box_north: tuple = (0.0, 60.0)
    box_east: tuple = (0.0, 60.0)
    depth_range: tuple = (2.0, 12.0)
    min_leg_horizontal: float = 12.0
    glide_max_deg: float = 15.0
    goal_radius: float = 1.0
    g_max: float = 1.5
    r_plan_max: float = 6.0
    t_max_factor: float = 3.0
    cost_variant: str = "original"
    sim_rate: float = 100.0
    control_rate: float = 10.0

    defaults: dict = field(default_factory=dict)

    @property
    def glide_max(self) -> float:
        return math.radians(self.glide_max_deg)

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_rate

    def validate(self) -> None:
        if self.g_max <= 0:
            raise ConfigError("g_max must be positive")
        if self.t_max_factor <= 0:
            raise ConfigError("t_max_factor must be positive")
        if self.cost_variant not in ("original", "quadratic"):
            raise ConfigError(f"unknown cost_variant {self.cost_variant!r}")
        if self.n_waypoints < 2:
            raise ConfigError("need at least 2 waypoints")
        if self.sim_rate % self.control_rate != 0:
            raise ConfigError("sim_rate must be an integer multiple of control_rate")
        if any(d <= 0 for d in self.plant.drag):
            raise ConfigError("drag entries must be positive")
        if self.plant.mass <= 0 or any(i <= 0 for i in self.plant.inertia):
            raise ConfigError("mass and inertia must be positive")

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


def _tupled(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tupled(v) for v in value)
    return value


def _build_section(cls, raw: dict):
    fields = {k: _tupled(v) for k, v in raw.items()}
    return cls(**fields)


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Load a scenario config from YAML; None loads the packaged default."""
    if path is None:
        text = resources.files("auvtune.data").joinpath("default_scenario.yaml").read_text()
    else:
        text = Path(path).read_text()
    raw = yaml.safe_load(text)
    version = raw.get("config_version")
    if version != SUPPORTED_CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r}")

    plant_raw = dict(raw.get("plant", {}))
    plant_raw.update(raw.get("thrusters", {}))
    cfg = ScenarioConfig(
        plant=_build_section(PlantConfig, plant_raw),
        sensors=_build_section(SensorConfig, raw.get("sensors", {})),
        current=_build_section(CurrentConfig, raw.get("current", {})),
        mismatch=_build_section(MismatchConfig, raw.get("mismatch", {})),
        defaults=dict(raw.get("defaults", {})),
        **{k: _tupled(v) for k, v in raw.get("scenario", {}).items()},
    )
    cfg.validate()
    return cfg


def default_config() -> ScenarioConfig:
    return load_config(None)
