"""Open-loop orientation tracking.

Each step takes a desired world orientation ``Q1_D``, expresses it in the
chassis frame, asks an IK model for servo angles, commands them to the plant
as position targets and records the observed orientation.  There is no
feedback from the observation to the command.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mechanism as mk
from .plant import PlantConfig, PlantState, observe, plant_step
from .rotation import (
    UnitQuaternion,
    canonicalize_array,
    quat_multiply_array,
    quat_to_euler_array,
    rotate_array,
    wrap_angle,
)

DEFAULT_CONTROL_RATE = 200.0
TRACK_CSV_HEADER = ["t_s", "des_phi", "des_psi", "des_theta", "act_phi", "act_psi", "act_theta"]
ENDPOINT_CSV_HEADER = ["t_s", "x", "y", "z"]


class TrackingError(Exception):
    """Tracking could not run (bad trajectory or plant failure)."""


@dataclass
class DesiredTrajectory:
    t: np.ndarray  # (n,) s, strictly increasing
    q1: np.ndarray  # (n, 4) world-frame orientation
    chassis_mount: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.q1 = canonicalize_array(np.atleast_2d(np.asarray(self.q1, dtype=float)))
        if len(self.t) != len(self.q1):
            raise ValueError("t and q1 lengths differ")
        if len(self.t) == 0:
            raise ValueError("trajectory is empty")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    def relative(self) -> np.ndarray:
        """``Q01_D = Q0^-1 Q1_D`` for every step."""
        q0inv = np.tile(self.chassis_mount.conj().as_array(), (len(self), 1))
        return canonicalize_array(quat_multiply_array(q0inv, self.q1))

    def reachable(self) -> np.ndarray:
        """End-effector normal in the upper hemisphere of the chassis frame."""
        n = rotate_array(self.relative(), np.array([0.0, 0.0, 1.0]))
        return n[:, 2] >= 0.0

    @classmethod
    def from_servo_path(cls, t, theta, chassis_mount: UnitQuaternion | None = None) -> "DesiredTrajectory":
        """Orientations the nominal mechanism reaches along a servo path."""
        mount = chassis_mount or UnitQuaternion.identity()
        q = [(mount * mk.forward_kinematics_ideal(a, b).orientation).as_array() for a, b in theta]
        return cls(np.asarray(t, dtype=float), np.array(q), mount)

    @classmethod
    def sweep(
        cls,
        duration: float = 20.0,
        rate: float = DEFAULT_CONTROL_RATE,
        amplitude: tuple[float, float] = (0.5, 0.4),
        frequency: tuple[float, float] = (0.10, 0.13),
        chassis_mount: UnitQuaternion | None = None,
    ) -> "DesiredTrajectory":
        """Lissajous servo path starting at home, mapped through the ideal FK."""
        n = int(round(duration * rate))
        t = np.arange(n) / rate
        theta = np.column_stack([a * np.sin(2 * math.pi * f * t) for a, f in zip(amplitude, frequency)])
        return cls.from_servo_path(t, theta, chassis_mount)

    @classmethod
    def hold(cls, q1: UnitQuaternion, duration: float = 2.0, rate: float = DEFAULT_CONTROL_RATE,
             chassis_mount: UnitQuaternion | None = None) -> "DesiredTrajectory":
        n = int(round(duration * rate))
        return cls(np.arange(n) / rate, np.tile(q1.as_array(), (n, 1)), chassis_mount or UnitQuaternion.identity())


@dataclass
class TrackingReport:
    t: np.ndarray
    desired_q1: np.ndarray  # (n, 4) world
    actual_q1: np.ndarray  # (n, 4) world
    desired_q01: np.ndarray  # (n, 4) chassis frame, fed to the model
    commanded: np.ndarray  # (n, 2) rad
    unreachable: np.ndarray  # (n,) bool
    loop_hz: float
    chassis_mount: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    @property
    def desired_euler(self) -> np.ndarray:
        """(n, 3) degrees, columns phi, psi, theta."""
        return np.degrees(quat_to_euler_array(self.desired_q1))

    @property
    def actual_euler(self) -> np.ndarray:
        return np.degrees(quat_to_euler_array(self.actual_q1))

    def euler_error(self) -> np.ndarray:
        """Wrapped actual minus desired, degrees."""
        d = quat_to_euler_array(self.desired_q1)
        a = quat_to_euler_array(self.actual_q1)
        return np.degrees(wrap_angle(a - d))

    @property
    def mae(self) -> np.ndarray:
        """Per-axis (phi, psi, theta) MAE in degrees over reachable steps."""
        err = np.abs(self.euler_error()[~self.unreachable])
        if len(err) == 0:
            return np.full(3, np.nan)
        return err.mean(0)

    def summary(self) -> dict:
        m = self.mae
        return {
            "mae_phi_deg": float(m[0]),
            "mae_psi_deg": float(m[1]),
            "mae_theta_deg": float(m[2]),
            "loop_hz": float(self.loop_hz),
            "steps": int(len(self.t)),
            "unreachable_steps": int(self.unreachable.sum()),
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        des, act = self.desired_euler, self.actual_euler
        lines = [",".join(TRACK_CSV_HEADER)]
        for i in range(len(self.t)):
            lines.append(",".join(f"{v:.9g}" for v in (self.t[i], *des[i], *act[i])))
        lines.append("")
        lines.extend(f"# {k},{v:.9g}" if isinstance(v, float) else f"# {k},{v}" for k, v in self.summary().items())
        path.write_text("\n".join(lines) + "\n")
        return path


def virtual_endpoint_series(report: TrackingReport) -> np.ndarray:
    """Tip of a unit stick along each observed output z axis."""
    if len(report.t) == 0:
        raise ValueError("report is empty")
    return rotate_array(report.actual_q1, np.array([0.0, 0.0, 1.0]))


def write_endpoint_csv(report: TrackingReport, path) -> Path:
    path = Path(path)
    pts = virtual_endpoint_series(report)
    lines = [",".join(ENDPOINT_CSV_HEADER)]
    lines.extend(",".join(f"{v:.9g}" for v in (t, *p)) for t, p in zip(report.t, pts))
    path.write_text("\n".join(lines) + "\n")
    return path


def track(model, plant: PlantConfig, traj: DesiredTrajectory, rng: np.random.Generator | None = None) -> TrackingReport:
    """Run the open-loop pipeline along ``traj``.

    Steps whose target leaves the hemisphere are flagged and the previous
    command is held.  ``PlantSingular`` from the plant propagates.
    """
    if not plant.chassis_mount.as_array().tolist() == traj.chassis_mount.as_array().tolist():
        raise TrackingError("plant and trajectory disagree on the chassis mount")
    if len(traj) < 2:
        raise TrackingError("trajectory needs at least two steps")
    if rng is None:
        rng = np.random.default_rng([plant.rng_seed, 7919])
    n = len(traj)
    q0 = traj.chassis_mount
    q01_d = traj.relative()
    ok = traj.reachable()
    dt = np.diff(traj.t, append=traj.t[-1] + (traj.t[-1] - traj.t[-2]))
    actual = np.empty((n, 4))
    cmd = np.empty((n, 2))
    state = PlantState()
    sample, joints = observe(plant, state, rng)
    state = PlantState(joints=joints)
    last = (0.0, 0.0)
    start = time.perf_counter()
    for k in range(n):
        if ok[k]:
            last = model.predict(q01_d[k])
        cmd[k] = last
        state, sample = plant_step(plant, last, float(dt[k]), state, rng, mode="position")
        actual[k] = (q0 * sample.q01).as_array()
    elapsed = time.perf_counter() - start
    return TrackingReport(
        t=traj.t.copy(),
        desired_q1=traj.q1.copy(),
        actual_q1=canonicalize_array(actual),
        desired_q01=q01_d,
        commanded=cmd,
        unreachable=~ok,
        loop_hz=n / elapsed,
        chassis_mount=q0,
    )


def loop_benchmark(model, plant: PlantConfig, steps: int = 10_000) -> float:
    """Mean end-to-end step rate in Hz (predict, plant step, bookkeeping)."""
    if steps < 1000:
        raise ValueError("steps must be >= 1000")
    # 5 s period, so any run of >= 1000 steps sees the same mix of motion
    traj = DesiredTrajectory.sweep(
        duration=steps / DEFAULT_CONTROL_RATE, frequency=(0.2, 0.4), chassis_mount=plant.chassis_mount
    )
    return track(model, plant, traj).loop_hz


def relative_check(traj: DesiredTrajectory) -> float:
    """Largest angle between ``Q0 Q01_D`` and ``Q1_D`` over the trajectory."""
    q0 = np.tile(traj.chassis_mount.as_array(), (len(traj), 1))
    back = quat_multiply_array(q0, traj.relative())
    inv = traj.q1 * np.array([1.0, -1.0, -1.0, -1.0])
    err = quat_multiply_array(inv, back)
    return float(np.max(2.0 * np.arctan2(np.linalg.norm(err[:, 1:], axis=1), np.abs(err[:, 0]))))
