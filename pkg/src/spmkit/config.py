"""Run configuration.

A flat YAML mapping; every angle is in degrees and is converted to radians
here and nowhere else.  Unknown keys are rejected so a misspelt imperfection
magnitude cannot silently fall back to its default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import mechanism as mk
from .control import DesiredTrajectory
from .mlp import MlpHyperparams
from .plant import DEFAULT_DURATION, DEFAULT_SAMPLE_RATE, PlantConfig, VelocityProfile, default_profiles
from .rotation import EulerAngles, UnitQuaternion, euler_to_quat

DEG = math.pi / 180.0


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # plant
    design_perturbations_deg: list = field(default_factory=lambda: [-1.0, -1.0, 1.0, -1.0, -1.0])
    joint_zero_offsets_deg: list = field(default_factory=lambda: [0.5, 0.5, 0.0, 0.0, 0.0])
    hinge_compliance_gain: float = 0.02
    servo_time_constant_s: float = 0.01
    quaternion_noise_std_deg: float = 0.1
    chassis_mount_euler_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    max_servo_rate_deg_s: float = 4.8 / DEG
    # sampling
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    profile_duration_s: float = DEFAULT_DURATION
    profile_count: int = 11
    profiles: list | None = None  # [{amplitude_deg_s, frequency_hz, phase_deg}, ...]
    workers: int = 1
    # network
    hidden_units: int = 2700
    tolerance: float = 1e-3
    n_iter_no_change: int = 10
    max_iterations: int = 1000
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    # tracking
    track_duration_s: float = 20.0
    track_rate_hz: float = 200.0
    sweep_amplitude_deg: list = field(default_factory=lambda: [0.5 / DEG, 0.4 / DEG])
    sweep_frequency_hz: list = field(default_factory=lambda: [0.10, 0.13])
    # scan
    scan_alpha_deg: list = field(default_factory=lambda: [90.0] * 5)
    scan_min_deg: float = -1.2 / DEG
    scan_max_deg: float = 1.2 / DEG
    scan_points: int = 30
    # bench
    bench_steps: int = 10_000
    bench_min_hz: float = 200.0

    def __post_init__(self):
        _check_len(self, "design_perturbations_deg", 5)
        _check_len(self, "joint_zero_offsets_deg", 5)
        _check_len(self, "chassis_mount_euler_deg", 3)
        _check_len(self, "sweep_amplitude_deg", 2)
        _check_len(self, "sweep_frequency_hz", 2)
        _check_len(self, "scan_alpha_deg", 5)
        for name in ("sample_rate_hz", "profile_duration_s", "track_duration_s", "track_rate_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.scan_points < 1:
            raise ConfigError("scan_points must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # -- converters -------------------------------------------------------

    @property
    def chassis_mount(self) -> UnitQuaternion:
        return euler_to_quat(EulerAngles(*(DEG * v for v in self.chassis_mount_euler_deg)))

    def plant(self) -> PlantConfig:
        try:
            return PlantConfig(
                design_perturbations=tuple(DEG * v for v in self.design_perturbations_deg),
                joint_zero_offsets=tuple(DEG * v for v in self.joint_zero_offsets_deg),
                hinge_compliance_gain=self.hinge_compliance_gain,
                servo_time_constant=self.servo_time_constant_s,
                quaternion_noise_std=DEG * self.quaternion_noise_std_deg,
                chassis_mount=self.chassis_mount,
                rng_seed=self.seed,
                max_servo_rate=DEG * self.max_servo_rate_deg_s,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def velocity_profiles(self) -> list[VelocityProfile]:
        try:
            if self.profiles is None:
                return default_profiles(self.profile_duration_s, self.profile_count)
            out = []
            for i, p in enumerate(self.profiles):
                extra = set(p) - {"amplitude_deg_s", "frequency_hz", "phase_deg"}
                if extra:
                    raise ConfigError(f"profiles[{i}]: unknown keys {sorted(extra)}")
                out.append(
                    VelocityProfile(
                        i,
                        tuple(DEG * v for v in p["amplitude_deg_s"]),
                        tuple(float(v) for v in p["frequency_hz"]),
                        tuple(DEG * v for v in p.get("phase_deg", [0.0, 0.0])),
                        self.profile_duration_s,
                    )
                )
            if not out:
                raise ConfigError("profiles list is empty")
            return out
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad profile definition: {exc}") from exc

    def hyperparams(self) -> MlpHyperparams:
        try:
            return MlpHyperparams(
                hidden_units=self.hidden_units,
                tolerance=self.tolerance,
                n_iter_no_change=self.n_iter_no_change,
                max_iterations=self.max_iterations,
                step_size=self.step_size,
                beta1=self.beta1,
                beta2=self.beta2,
                epsilon=self.epsilon,
                batch_size=self.batch_size,
                rng_seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sweep(self) -> DesiredTrajectory:
        return DesiredTrajectory.sweep(
            self.track_duration_s,
            self.track_rate_hz,
            tuple(DEG * v for v in self.sweep_amplitude_deg),
            tuple(self.sweep_frequency_hz),
            self.chassis_mount,
        )

    def hold_home(self) -> DesiredTrajectory:
        q = self.chassis_mount
        return DesiredTrajectory.hold(q, self.track_duration_s, self.track_rate_hz, q)

    def scan_params(self) -> mk.DesignParams:
        return mk.DesignParams(*(DEG * v for v in self.scan_alpha_deg))

    def scan_grid(self):
        return mk.actuator_grid(DEG * self.scan_min_deg, DEG * self.scan_max_deg, self.scan_points)

    # -- identity ---------------------------------------------------------

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _check_len(cfg, name, n):
    v = getattr(cfg, name)
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{name} needs {n} values, got {v!r}")
    try:
        setattr(cfg, name, [float(x) for x in v])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


KNOWN_KEYS = frozenset(f.name for f in fields(RunConfig))


def config_from_mapping(data: dict, seed: int | None = None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def load_config(path=None, seed: int | None = None) -> RunConfig:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return config_from_mapping({}, seed)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data, seed)


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.as_dict(), sort_keys=False))
    return path
