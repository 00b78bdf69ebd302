"""Simulated stand-in for the laminate prototype.

The plant wraps the numerical forward kinematics of a perturbed linkage with
the effects the real hardware shows:

* link-twist errors (``design_perturbations``) and servo zero offsets,
* a deterministic compliance sag that tilts the end effector further away from
  the home pose, proportional to how far it already is,
* first-order servo lag (``servo_time_constant``), rate limited in position mode,
* isotropic axis-angle noise on the motion-capture observation only.

Motion data are gathered by driving both servos with sinusoidal velocity
profiles and recording the relative quaternion chassis -> end effector
alongside the actual servo angles.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import mechanism as mk
from .rotation import (
    UnitQuaternion,
    canonicalize_array,
    quat_compose,
    relative_rotation,
    wrap_angle,
)

DEG = math.pi / 180.0
MAX_PERTURBATION = 10.0 * DEG

CSV_HEADER = ["t_s", "q01_w", "q01_x", "q01_y", "q01_z", "theta1_rad", "theta2_rad", "profile_id", "split"]


class PlantSingular(Exception):
    """The perturbed loop could not be closed for the commanded servo angles."""

    def __init__(self, message: str, profile_id: int | None = None, t: float | None = None):
        super().__init__(message)
        self.profile_id = profile_id
        self.t = t


@dataclass(frozen=True)
class PlantConfig:
    design_perturbations: tuple[float, ...] = tuple(DEG * d for d in (-1.0, -1.0, 1.0, -1.0, -1.0))
    joint_zero_offsets: tuple[float, ...] = (0.5 * DEG, 0.5 * DEG, 0.0, 0.0, 0.0)
    hinge_compliance_gain: float = 0.02
    servo_time_constant: float = 0.01
    quaternion_noise_std: float = 0.1 * DEG
    chassis_mount: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    rng_seed: int = 0
    max_servo_rate: float = 4.8  # rad/s, position mode only

    def __post_init__(self):
        object.__setattr__(self, "design_perturbations", tuple(float(v) for v in self.design_perturbations))
        object.__setattr__(self, "joint_zero_offsets", tuple(float(v) for v in self.joint_zero_offsets))
        if len(self.design_perturbations) != 5 or len(self.joint_zero_offsets) != 5:
            raise ValueError("design_perturbations and joint_zero_offsets need five entries")
        for name in ("design_perturbations", "joint_zero_offsets"):
            worst = max(abs(v) for v in getattr(self, name))
            if worst > MAX_PERTURBATION:
                raise ValueError(f"{name}: |{worst / DEG:.3g} deg| exceeds 10 deg")
        if self.servo_time_constant < 0:
            raise ValueError("servo_time_constant must be >= 0")
        if self.quaternion_noise_std < 0:
            raise ValueError("quaternion_noise_std must be >= 0")
        if self.max_servo_rate <= 0:
            raise ValueError("max_servo_rate must be > 0")

    @classmethod
    def ideal(cls, **overrides) -> "PlantConfig":
        """Nominal linkage, no noise, instantaneous servos."""
        base = dict(
            design_perturbations=(0.0,) * 5,
            joint_zero_offsets=(0.0,) * 5,
            hinge_compliance_gain=0.0,
            servo_time_constant=0.0,
            quaternion_noise_std=0.0,
        )
        base.update(overrides)
        return cls(**base)

    def scaled(self, k: float) -> "PlantConfig":
        """Same plant with every imperfection multiplied by ``k`` (noise untouched)."""
        return replace(
            self,
            design_perturbations=tuple(k * v for v in self.design_perturbations),
            joint_zero_offsets=tuple(k * v for v in self.joint_zero_offsets),
            hinge_compliance_gain=k * self.hinge_compliance_gain,
        )

    @cached_property
    def params(self) -> mk.DesignParams:
        return mk.DesignParams().perturbed(self.design_perturbations)


@dataclass(frozen=True)
class VelocityProfile:
    """Per-servo sinusoidal velocity command ``A sin(2 pi f t + phase)``."""

    profile_id: int
    amplitude: tuple[float, float]  # rad/s
    frequency: tuple[float, float]  # Hz
    phase: tuple[float, float]  # rad
    duration: float  # s

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        for a in self.amplitude:
            if abs(a) > 4.8:
                raise ValueError(f"amplitude {a} rad/s exceeds servo limit")

    def rates(self, t: float) -> np.ndarray:
        return np.array(
            [a * math.sin(2.0 * math.pi * f * t + p) for a, f, p in zip(self.amplitude, self.frequency, self.phase)]
        )

    def n_samples(self, sample_rate: float) -> int:
        return int(round(self.duration * sample_rate))


# 11 distinct (amplitude, frequency, phase) tuples; each amplitude is paired with a
# frequency high enough that the integrated swing 2A/(2 pi f) stays within ~1.1 rad.
_DEFAULT_PROFILE_TABLE = [
    ((0.20, 0.35), (0.060, 0.110), (0.0, 1.3)),
    ((0.30, 0.25), (0.090, 0.075), (0.6, 2.9)),
    ((0.45, 0.60), (0.140, 0.190), (1.2, 4.4)),
    ((0.55, 0.40), (0.170, 0.125), (1.8, 0.3)),
    ((0.25, 0.70), (0.080, 0.230), (2.3, 5.1)),
    ((0.80, 0.50), (0.270, 0.160), (2.9, 3.6)),
    ((0.65, 0.30), (0.210, 0.095), (3.4, 1.9)),
    ((0.35, 0.75), (0.115, 0.250), (4.0, 0.8)),
    ((0.70, 0.22), (0.230, 0.070), (4.6, 2.4)),
    ((0.50, 0.55), (0.160, 0.180), (5.2, 5.8)),
    ((0.40, 0.80), (0.130, 0.300), (5.8, 3.1)),
]

DEFAULT_SAMPLE_RATE = 180.0
# 11 x 9727 = 106,997 samples at the default rate
DEFAULT_DURATION = 9727 / DEFAULT_SAMPLE_RATE


def default_profiles(duration: float = DEFAULT_DURATION, count: int = 11) -> list[VelocityProfile]:
    if not 1 <= count <= len(_DEFAULT_PROFILE_TABLE):
        raise ValueError(f"count must be in 1..{len(_DEFAULT_PROFILE_TABLE)}")
    return [
        VelocityProfile(i, amp, freq, phase, duration)
        for i, (amp, freq, phase) in enumerate(_DEFAULT_PROFILE_TABLE[:count])
    ]


@dataclass(frozen=True)
class PlantState:
    t: float = 0.0
    theta: tuple[float, float] = (0.0, 0.0)
    rate: tuple[float, float] = (0.0, 0.0)
    joints: mk.JointState | None = None  # last closed loop, warm start only


@dataclass(frozen=True)
class Sample:
    timestamp: float
    q01: UnitQuaternion
    theta1: float
    theta2: float
    profile_id: int = 0


def _sag(q: UnitQuaternion, gain: float) -> UnitQuaternion:
    """Tilt the end effector further from vertical by ``gain`` times its current tilt."""
    if gain == 0.0:
        return q
    # N = q e_z
    nx = 2.0 * (q.x * q.z + q.w * q.y)
    ny = 2.0 * (q.y * q.z - q.w * q.x)
    nz = 1.0 - 2.0 * (q.x * q.x + q.y * q.y)
    s = math.hypot(nx, ny)
    if s < 1e-12:
        return q
    half = 0.5 * gain * math.atan2(s, nz)
    k = math.sin(half) / s
    # axis e_z x N = (-ny, nx, 0)
    return quat_compose(UnitQuaternion(math.cos(half), -ny * k, nx * k, 0.0), q)


def true_orientation(config: PlantConfig, theta, guess: mk.JointState | None = None):
    """Noise-free end-effector orientation (chassis frame) and the closed joint state."""
    t1 = float(theta[0]) + config.joint_zero_offsets[0]
    t2 = float(theta[1]) + config.joint_zero_offsets[1]
    params = config.params
    try:
        joints = mk.solve_passive(t1, t2, params, guess)
    except mk.NoConvergenceError as exc:
        if guess is None:
            raise PlantSingular(str(exc)) from exc
        try:
            joints = mk.solve_passive(t1, t2, params, None)
        except mk.NoConvergenceError as exc2:
            raise PlantSingular(str(exc2)) from exc2
    q = mk.end_effector_quat(joints.theta2, joints.theta3, params)
    return _sag(q, config.hinge_compliance_gain), joints


def observe(config: PlantConfig, state: PlantState, rng: np.random.Generator | None = None, profile_id: int = 0):
    """Motion-capture sample of the current state; returns ``(sample, closed joints)``."""
    q, joints = true_orientation(config, state.theta, state.joints)
    q1 = quat_compose(config.chassis_mount, q)
    if config.quaternion_noise_std > 0.0:
        if rng is None:
            rng = np.random.default_rng(config.rng_seed)
        q1 = quat_compose(UnitQuaternion.from_rotvec(rng.normal(0.0, config.quaternion_noise_std, 3)), q1)
    q01 = relative_rotation(config.chassis_mount, q1)
    return Sample(state.t, q01, state.theta[0], state.theta[1], profile_id), joints


def _advance_velocity(theta, rate, cmd, dt, tau):
    if tau == 0.0:
        return theta + cmd * dt, cmd.copy()
    a = math.exp(-dt / tau)
    new_rate = cmd + (rate - cmd) * a
    return theta + cmd * dt + (rate - cmd) * tau * (1.0 - a), new_rate


def _advance_position(theta, target, dt, tau, max_rate):
    if tau == 0.0:
        return target.copy(), (target - theta) / dt
    new = target + (theta - target) * math.exp(-dt / tau)
    step = np.clip(new - theta, -max_rate * dt, max_rate * dt)
    return theta + step, step / dt


def plant_step(
    config: PlantConfig,
    commanded,
    dt: float,
    state: PlantState,
    rng: np.random.Generator | None = None,
    mode: str = "velocity",
    profile_id: int = 0,
) -> tuple[PlantState, Sample]:
    """Advance the servos by ``dt`` and observe the end effector.

    ``mode="velocity"`` treats ``commanded`` as servo rates (rad/s) passed
    through a first-order lag on the rate; ``mode="position"`` treats it as
    target angles approached with a first-order lag and the servo rate limit.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt={dt} outside (0, 0.1]")
    cmd = np.asarray(commanded, dtype=float)
    theta = np.asarray(state.theta, dtype=float)
    rate = np.asarray(state.rate, dtype=float)
    if mode == "velocity":
        theta, rate = _advance_velocity(theta, rate, cmd, dt, config.servo_time_constant)
    elif mode == "position":
        theta, rate = _advance_position(theta, cmd, dt, config.servo_time_constant, config.max_servo_rate)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    moved = PlantState(state.t + dt, (float(theta[0]), float(theta[1])), (float(rate[0]), float(rate[1])), state.joints)
    try:
        sample, joints = observe(config, moved, rng, profile_id)
    except PlantSingular as exc:
        raise PlantSingular(str(exc), profile_id, moved.t) from exc
    return replace(moved, joints=joints), sample


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Column-oriented motion samples with a train/test marker."""

    t: np.ndarray
    q01: np.ndarray  # (n, 4) canonical
    theta: np.ndarray  # (n, 2)
    profile_id: np.ndarray
    is_train: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Sample:
        return Sample(float(self.t[i]), UnitQuaternion.from_array(self.q01[i]), float(self.theta[i, 0]), float(self.theta[i, 1]), int(self.profile_id[i]))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def subset(self, mask) -> "Dataset":
        return Dataset(self.t[mask], self.q01[mask], self.theta[mask], self.profile_id[mask], self.is_train[mask])

    def split(self, which: str) -> "Dataset":
        if which == "train":
            return self.subset(self.is_train)
        if which == "test":
            return self.subset(~self.is_train)
        raise ValueError(f"split must be 'train' or 'test', not {which!r}")

    @property
    def n_train(self) -> int:
        return int(np.sum(self.is_train))

    @property
    def n_test(self) -> int:
        return len(self) - self.n_train

    @staticmethod
    def concatenate(parts: Sequence["Dataset"]) -> "Dataset":
        return Dataset(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("t", "q01", "theta", "profile_id", "is_train")))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for i in range(len(self)):
                q = self.q01[i]
                w.writerow(
                    [
                        f"{self.t[i]:.9g}",
                        f"{q[0]:.9g}",
                        f"{q[1]:.9g}",
                        f"{q[2]:.9g}",
                        f"{q[3]:.9g}",
                        f"{self.theta[i, 0]:.9g}",
                        f"{self.theta[i, 1]:.9g}",
                        int(self.profile_id[i]),
                        "train" if self.is_train[i] else "test",
                    ]
                )
        return path

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = list(reader)
        if not rows:
            return cls(np.zeros(0), np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros(0, dtype=bool))
        cols = list(zip(*rows))
        split = np.array(cols[8])
        bad = set(split) - {"train", "test"}
        if bad:
            raise ValueError(f"{path}: unknown split labels {sorted(bad)}")
        return cls(
            t=np.array(cols[0], dtype=float),
            q01=canonicalize_array(np.column_stack([np.array(c, dtype=float) for c in cols[1:5]])),
            theta=np.column_stack([np.array(cols[5], dtype=float), np.array(cols[6], dtype=float)]),
            profile_id=np.array(cols[7], dtype=int),
            is_train=split == "train",
        )


def _split_mask(n: int, seed: int, profile_id: int, train_fraction: float = 0.8) -> np.ndarray:
    rng = np.random.default_rng([seed, profile_id, 1])
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: int(round(train_fraction * n))]] = True
    return mask


def simulate_profile(config: PlantConfig, profile: VelocityProfile, sample_rate: float) -> Dataset:
    """Run one profile; the noise stream is seeded from ``(rng_seed, profile_id)``."""
    n = profile.n_samples(sample_rate)
    dt = 1.0 / sample_rate
    rng = np.random.default_rng([config.rng_seed, profile.profile_id])
    t = np.empty(n)
    q = np.empty((n, 4))
    th = np.empty((n, 2))
    state = PlantState()
    try:
        sample, joints = observe(config, state, rng, profile.profile_id)
    except PlantSingular as exc:
        raise PlantSingular(f"profile {profile.profile_id} at t=0: {exc}", profile.profile_id, 0.0) from exc
    state = replace(state, joints=joints)
    for k in range(n):
        if k:
            # zero-order hold of the command over each sample interval
            cmd = profile.rates((k - 1) * dt)
            try:
                state, sample = plant_step(config, cmd, dt, state, rng, profile_id=profile.profile_id)
            except PlantSingular as exc:
                raise PlantSingular(f"profile {profile.profile_id} at t={exc.t:.4f}s: {exc}", profile.profile_id, exc.t) from exc
            # exact sample clock, free of accumulated float drift
            state = replace(state, t=k * dt)
        t[k] = k * dt
        q[k] = sample.q01.as_array()
        th[k] = sample.theta1, sample.theta2
    return Dataset(t, q, th, np.full(n, profile.profile_id), _split_mask(n, config.rng_seed, profile.profile_id))


def _simulate_args(args):
    return simulate_profile(*args)


def generate_dataset(
    config: PlantConfig,
    profiles: Sequence[VelocityProfile],
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    workers: int = 1,
) -> Dataset:
    """Drive the plant along every profile and stack the samples with an 80/20 split.

    Profiles are independent, so ``workers > 1`` runs them in separate
    processes; the result is identical to the sequential run.
    """
    if not profiles:
        raise ValueError("at least one velocity profile is required")
    jobs = [(config, p, sample_rate) for p in profiles]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_args, jobs))
    else:
        parts = [simulate_profile(*j) for j in jobs]
    return Dataset.concatenate(parts)


def normals_from_q01(q01: np.ndarray) -> np.ndarray:
    from .rotation import rotate_array

    return rotate_array(q01, np.array([0.0, 0.0, 1.0]))


def analytic_ik_batch(q01: np.ndarray) -> np.ndarray:
    """Closed-form IK applied to each observed end-effector normal."""
    N = normals_from_q01(q01)
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    out = np.empty((len(N), 2))
    for i, n in enumerate(N):
        out[i] = mk.inverse_kinematics(n)
    return out


def wrapped_abs_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))
