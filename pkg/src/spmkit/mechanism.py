"""Spherical five-bar (5R) linkage: kinematics and singularity analysis.

Joint and frame convention
--------------------------
Going around the loop, hinge ``i`` rotates about the local z axis by
``theta_i + HINGE_ZERO[i]`` and link ``i`` then twists about the local x axis
by ``alpha_i``.  The loop closes when

    prod_i Rz(theta_i + HINGE_ZERO[i]) @ Rx(alpha_i) == I.

Link 1 is the grounded chassis link (twist ``alpha1``), hinges 1 and 2 are the
servos, link 2 is the proximal link on servo 2, link 3 is the end-effector
(distal) link, link 4 the other distal link and link 5 the proximal link on
servo 1.  ``CHASSIS_FROM_GROUND`` maps link-1 coordinates to the chassis frame
so that servo 1 turns about chassis x and servo 2 about chassis y.

The end-effector normal ``N`` is the common normal of hinges 3 and 4 (the
x axis of link 3).  With ``HINGE_ZERO = (-pi/2, 0, 0, 0, 0)`` this reproduces
the closed-form inverse kinematics

    theta1 = atan(N_y N_z / (N_x^2 + N_z^2)),   theta2 = atan2(N_x, N_z)

on the nominal all-right-angle design, which is checked numerically by the
test-suite rather than assumed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rotation import UnitQuaternion, matrix_log, rot_x, rot_z, skew, wrap_angle

HALF_PI = 0.5 * math.pi

HINGE_ZERO = np.array([-HALF_PI, 0.0, 0.0, 0.0, 0.0])
CHASSIS_FROM_GROUND = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
# passive hinges (theta3, theta4, theta5) at the home pose of the working branch
HOME_PASSIVE = (0.0, -HALF_PI, HALF_PI)

LOOP_TOL = 1e-8
NEWTON_TARGET = 1e-13
MAX_ITERATIONS = 50
MAX_HALVINGS = 8
COND_LIMIT = 1e12
SIN_THETA5_TOL = 1e-9
SCAN_COND_LIMIT = 1e8
# max actuator-space step when continuing from the home pose
CONTINUATION_STEP = 0.2


class KinematicsError(Exception):
    pass


class NotUnitError(KinematicsError):
    pass


class OutOfHemisphereError(KinematicsError):
    pass


class UnreachableError(KinematicsError):
    pass


class NoConvergenceError(KinematicsError):
    pass


class SingularStepError(NoConvergenceError):
    """The Newton system became too ill-conditioned to step."""


class SingularError(KinematicsError):
    pass


@dataclass(frozen=True)
class DesignParams:
    """Twist angles (rad) between consecutive hinge axes; link 1 is grounded."""

    alpha1: float = HALF_PI
    alpha2: float = HALF_PI
    alpha3: float = HALF_PI
    alpha4: float = HALF_PI
    alpha5: float = HALF_PI

    def __post_init__(self):
        for k, a in zip(range(1, 6), self.as_array()):
            if not (-math.pi < a <= math.pi):
                raise ValueError(f"alpha{k}={a} outside (-pi, pi]")

    @classmethod
    def nominal(cls) -> "DesignParams":
        return cls()

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5])

    def perturbed(self, offsets: Sequence[float]) -> "DesignParams":
        return DesignParams(*(self.as_array() + np.asarray(offsets, dtype=float)))

    def is_nominal(self) -> bool:
        return bool(np.all(self.as_array() == HALF_PI))


@dataclass(frozen=True)
class JointState:
    """Hinge angles (rad).  1 and 2 are the servos, 3-5 passive."""

    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: float

    @classmethod
    def from_array(cls, a) -> "JointState":
        return cls(*(float(v) for v in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3, self.theta4, self.theta5])

    @property
    def passive(self) -> np.ndarray:
        return np.array([self.theta3, self.theta4, self.theta5])

    def wrapped(self) -> "JointState":
        return JointState.from_array(wrap_angle(self.as_array()))


@dataclass(frozen=True)
class EndEffectorPose:
    N: np.ndarray
    orientation: UnitQuaternion


@dataclass(frozen=True)
class BodyRates:
    """End-effector angular velocity (rad/s) in the chassis frame."""

    omegaX: float
    omegaY: float
    omegaZ: float

    def as_array(self) -> np.ndarray:
        return np.array([self.omegaX, self.omegaY, self.omegaZ])


# --------------------------------------------------------------------------
# closed-form kinematics of the nominal design


def inverse_kinematics(N) -> tuple[float, float]:
    """Servo angles that point the end-effector normal along ``N``."""
    n = np.asarray(N, dtype=float)
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-6:
        raise NotUnitError(f"|N| = {norm:.9g}, expected 1")
    nx, ny, nz = n
    if nz < -1e-9:
        raise OutOfHemisphereError(f"N_z = {nz:.3g} < 0; only the upper hemisphere is charted")
    # N along +-y, or theta2 within 1e-9 of +-pi/2: fixed special-case answer
    h = math.hypot(nx, nz)
    if h < 1e-9 or abs(nz) < 1e-9 * h:
        return 0.0, HALF_PI
    return math.atan(ny * nz / (nx * nx + nz * nz)), math.atan2(nx, nz)


def _ideal_normal(theta1: float, theta2: float) -> np.ndarray:
    c2 = math.cos(theta2)
    t = math.tan(theta1) / c2
    r = 1.0 / math.sqrt(1.0 + t * t)
    return np.array([r * math.sin(theta2), t * r, r * c2])


def _body_frame(N: np.ndarray, theta2: float) -> np.ndarray:
    # link-3 frame from geometry: hinge 3 is perpendicular to servo 2 (chassis y)
    # and to N; hinge 4 is N x hinge3.
    hinge3 = np.array([-math.cos(theta2), 0.0, math.sin(theta2)])
    hinge4 = np.cross(N, hinge3)
    return np.column_stack([N, np.cross(hinge4, N), hinge4])


def forward_kinematics_ideal(theta1: float, theta2: float) -> EndEffectorPose:
    """Analytic forward kinematics of the nominal design.

    Inverts the closed-form IK on the chart ``theta2 in (-pi/2, pi/2]``.  From
    ``N_x = r sin(theta2)``, ``N_z = r cos(theta2)`` and
    ``tan(theta1) = N_y cos(theta2) / r`` with ``r = sqrt(1 - N_y^2)``.
    """
    if not (-HALF_PI < theta2 <= HALF_PI) or abs(theta1) >= HALF_PI:
        raise UnreachableError(f"({theta1}, {theta2}) outside the charted workspace")
    if abs(math.cos(theta2)) < 1e-12:
        raise UnreachableError("theta2 = pi/2 leaves N undetermined")
    N = _ideal_normal(theta1, theta2)
    R = _body_frame(N, theta2) @ _HOME_BODY.T
    return EndEffectorPose(N=N, orientation=UnitQuaternion.from_matrix(R))


# --------------------------------------------------------------------------
# loop closure


def _link_frames(theta: np.ndarray, alpha: np.ndarray) -> list[np.ndarray]:
    """Cumulative frames T_0 = I, T_k = prod_{i<=k} Rz Rx, in hinge-1 coordinates."""
    frames = [np.eye(3)]
    for t, a, z in zip(theta, alpha, HINGE_ZERO):
        frames.append(frames[-1] @ rot_z(t + z) @ rot_x(a))
    return frames


def _as_params(params: DesignParams | None) -> DesignParams:
    return DesignParams.nominal() if params is None else params


def loop_closure_residual(state: JointState, params: DesignParams | None = None) -> np.ndarray:
    """Rotation vector of the loop product; zero iff the loop closes."""
    T = _link_frames(state.as_array(), _as_params(params).as_array())
    return matrix_log(T[5])


def hinge_axes(state: JointState, params: DesignParams | None = None) -> np.ndarray:
    """Hinge axes (columns 0..4) in hinge-1 coordinates."""
    T = _link_frames(state.as_array(), _as_params(params).as_array())
    return np.column_stack([T[k][:, 2] for k in range(5)])


def _inv_left_jacobian(phi: np.ndarray) -> np.ndarray:
    a = float(np.linalg.norm(phi))
    K = skew(phi)
    if a < 1e-8:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    return np.eye(3) - 0.5 * K + (1.0 / a**2 - (1.0 + math.cos(a)) / (2.0 * a * math.sin(a))) * K @ K


def passive_jacobian(state: JointState, params: DesignParams | None = None) -> np.ndarray:
    """d(residual)/d(theta3, theta4, theta5)."""
    T = _link_frames(state.as_array(), _as_params(params).as_array())
    r = matrix_log(T[5])
    A = np.column_stack([T[k][:, 2] for k in (2, 3, 4)])
    return _inv_left_jacobian(r) @ A


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _loop_quats(theta, alpha):
    """Cumulative loop rotations as plain-float quaternions (hot path of the solver)."""
    q = (1.0, 0.0, 0.0, 0.0)
    out = [q]
    for t, a, z in zip(theta, alpha, HINGE_ZERO):
        h = 0.5 * (t + z)
        q = _qmul(q, (math.cos(h), 0.0, 0.0, math.sin(h)))
        h = 0.5 * a
        q = _qmul(q, (math.cos(h), math.sin(h), 0.0, 0.0))
        out.append(q)
    return out


def _z_axis(q):
    w, x, y, z = q
    return (2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y))


def _quat_log(q):
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    k = 2.0 if s < 1e-12 else 2.0 * math.atan2(s, w) / s
    return np.array([k * x, k * y, k * z])


def _newton(t1: float, t2: float, p: np.ndarray, alpha: np.ndarray, max_iter: int):
    alpha = [float(a) for a in alpha]
    theta = [float(t1), float(t2), *(float(v) for v in p)]
    Q = _loop_quats(theta, alpha)
    r = _quat_log(Q[5])
    rn = math.sqrt(r @ r)
    for it in range(max_iter):
        if rn <= NEWTON_TARGET:
            break
        J = _inv_left_jacobian(r) @ np.array([_z_axis(Q[k]) for k in (2, 3, 4)]).T
        if np.linalg.cond(J) > COND_LIMIT:
            raise SingularStepError(f"Newton system condition number exceeds {COND_LIMIT:g} at {theta}")
        step = np.linalg.solve(J, -r)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = theta[:2] + [theta[2 + i] + lam * float(step[i]) for i in range(3)]
            Qt = _loop_quats(trial, alpha)
            rt = _quat_log(Qt[5])
            rtn = math.sqrt(rt @ rt)
            if rtn < rn:
                break
            lam *= 0.5
        else:
            # no descent: converged to round-off or stuck
            break
        theta, Q, r, rn = trial, Qt, rt, rtn
    return np.array(theta), rn


def solve_passive(
    theta1: float,
    theta2: float,
    params: DesignParams | None = None,
    guess: JointState | None = None,
    max_iterations: int = MAX_ITERATIONS,
) -> JointState:
    """Close the loop for fixed servo angles by damped Newton on the passive hinges.

    Without a ``guess`` the solve is continued from the home pose along a
    straight line in servo space, which keeps it on the working branch.
    """
    alpha = _as_params(params).as_array()
    if guess is not None:
        p = guess.passive
        path = [(theta1, theta2)]
    else:
        p = np.array(HOME_PASSIVE)
        n = max(1, int(math.ceil(max(abs(theta1), abs(theta2)) / CONTINUATION_STEP)))
        path = [(theta1 * k / n, theta2 * k / n) for k in range(1, n + 1)]
    for t1, t2 in path:
        theta, rn = _newton(t1, t2, p, alpha, max_iterations)
        p = theta[2:]
    if not rn <= LOOP_TOL:
        raise NoConvergenceError(f"loop residual {rn:.3g} after {max_iterations} iterations at ({theta1}, {theta2})")
    theta[2:] = wrap_angle(theta[2:])
    if guess is not None:
        s_new, s_old = math.sin(theta[4]), math.sin(guess.theta5)
        if s_new * s_old < 0 and min(abs(s_new), abs(s_old)) > SIN_THETA5_TOL:
            # a distant guess pulled Newton onto the other assembly mode
            return solve_passive(theta1, theta2, params, None, max_iterations)
    return JointState.from_array(theta)


def end_effector_pose(state: JointState, params: DesignParams | None = None) -> EndEffectorPose:
    """Pose of link 3 in the chassis frame for a closed state."""
    q = end_effector_quat(state.theta2, state.theta3, _as_params(params))
    return EndEffectorPose(N=q.rotate([0.0, 0.0, 1.0]), orientation=q)


def end_effector_quat(theta2: float, theta3: float, params: DesignParams) -> UnitQuaternion:
    # link 3 relative to ground only involves hinges 2 and 3
    q = _Q_CHASSIS
    for t, a in ((theta2 + HINGE_ZERO[1], params.alpha2), (theta3 + HINGE_ZERO[2], params.alpha3)):
        q = _qmul(q, (math.cos(0.5 * t), 0.0, 0.0, math.sin(0.5 * t)))
        q = _qmul(q, (math.cos(0.5 * a), math.sin(0.5 * a), 0.0, 0.0))
    return UnitQuaternion(*_qmul(q, _Q_HOME_INV))


def forward_kinematics(
    theta1: float, theta2: float, params: DesignParams | None = None, guess: JointState | None = None
) -> tuple[EndEffectorPose, JointState]:
    state = solve_passive(theta1, theta2, params, guess)
    return end_effector_pose(state, params), state


# --------------------------------------------------------------------------
# velocity kinematics


def inverse_jacobian(state: JointState) -> np.ndarray:
    """The closed-form inverse Jacobian.

    Maps ``(omega_X, omega_Y, omega_Z)`` to ``(dtheta1, dtheta2, 0)`` using the
    passive hinge angles of ``state``.  Rows 1 and 3 are not orthogonal
    (their product is ``-sin(2 theta3)``), so this does not agree with the
    loop kinematics; use :func:`kinematic_inverse_jacobian` for rate mapping.
    """
    s3, c3 = math.sin(state.theta3), math.cos(state.theta3)
    s4 = math.sin(state.theta4)
    s5, c5 = math.sin(state.theta5), math.cos(state.theta5)
    if abs(s5) <= SIN_THETA5_TOL:
        raise SingularError(f"|sin(theta5)| = {abs(s5):.3g}")
    return np.array(
        [
            [s3, 0.0, -c3],
            [c5 * s3 / s5, -s4 / s5, c5 * c3 / s5],
            [-c3, 0.0, s3],
        ]
    )


def actuation_jacobian(state: JointState, params: DesignParams | None = None) -> np.ndarray:
    """3x2 map from servo rates to end-effector angular velocity (chassis frame)."""
    theta = state.as_array()
    T = _link_frames(theta, _as_params(params).as_array())
    a = np.column_stack([T[k][:, 2] for k in range(5)])
    Ap = a[:, 2:]
    if np.linalg.cond(Ap) > COND_LIMIT:
        raise SingularError("passive hinge axes are degenerate")
    # passive rates from sum_i a_i dtheta_i = 0
    dp = -np.linalg.solve(Ap, a[:, :2])
    to_chassis = CHASSIS_FROM_GROUND @ T[1].T
    # link 3 relative to ground turns about hinges 2 and 3
    B = np.column_stack([np.zeros(3), a[:, 1]]) + np.outer(a[:, 2], dp[0])
    return to_chassis @ B


def kinematic_inverse_jacobian(state: JointState, params: DesignParams | None = None) -> np.ndarray:
    """Loop-derived inverse Jacobian in the chassis frame.

    Rows 1-2 return the servo rates for any feasible angular velocity; row 3
    is the unit normal of the feasible plane, so it annihilates every
    feasible velocity.
    """
    B = actuation_jacobian(state, params)
    n = np.cross(B[:, 0], B[:, 1])
    nn = float(np.linalg.norm(n))
    if nn < 1e-12:
        raise SingularError("servo rates produce parallel angular velocities")
    n /= nn
    G = np.linalg.inv(np.column_stack([B, n]))
    G[2] = n
    return G


# --------------------------------------------------------------------------
# singularity scan


@dataclass
class ScanReport:
    theta1: np.ndarray
    theta2: np.ndarray
    sin_theta5: np.ndarray
    condition_number: np.ndarray
    reachable: np.ndarray
    params: DesignParams = field(default_factory=DesignParams)

    def __len__(self) -> int:
        return len(self.theta1)

    @property
    def singular(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (
                ~self.reachable
                | (np.abs(self.sin_theta5) <= SIN_THETA5_TOL)
                | (self.condition_number > SCAN_COND_LIMIT)
            )

    @property
    def singular_fraction(self) -> float:
        return float(np.mean(self.singular)) if len(self) else 0.0

    def summary(self) -> dict:
        ok = self.reachable
        if not np.any(ok):
            return {"points": len(self), "reachable": 0, "singular_fraction": self.singular_fraction}
        s = np.abs(self.sin_theta5[ok])
        c = self.condition_number[ok]
        return {
            "points": len(self),
            "reachable": int(np.sum(ok)),
            "singular_fraction": self.singular_fraction,
            "min_abs_sin_theta5": float(s.min()),
            "max_abs_sin_theta5": float(s.max()),
            "min_condition_number": float(c.min()),
            "max_condition_number": float(c.max()),
        }

    def heat_grid(self, shape: tuple[int, int]) -> np.ndarray:
        return np.abs(self.sin_theta5).reshape(shape)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta1", "theta2", "sin_theta5", "condition_number", "reachable"])
            for row in zip(self.theta1, self.theta2, self.sin_theta5, self.condition_number, self.reachable):
                w.writerow([f"{row[0]:.9g}", f"{row[1]:.9g}", f"{row[2]:.9g}", f"{row[3]:.9g}", int(row[4])])
        return path


def actuator_grid(lo: float = -1.2, hi: float = 1.2, n: int = 30) -> list[tuple[float, float]]:
    """Boustrophedon-ordered ``n x n`` grid so neighbouring points warm-start each other."""
    ticks = np.linspace(lo, hi, n)
    pts = []
    for i, t1 in enumerate(ticks):
        row = ticks if i % 2 == 0 else ticks[::-1]
        pts.extend((float(t1), float(t2)) for t2 in row)
    return pts


def singularity_scan(params: DesignParams | None, grid: Iterable[tuple[float, float]]) -> ScanReport:
    """Solve each grid point and record |sin theta5| and the passive-Jacobian condition number."""
    grid = list(grid)
    n = len(grid)
    out = ScanReport(
        theta1=np.array([g[0] for g in grid], dtype=float),
        theta2=np.array([g[1] for g in grid], dtype=float),
        sin_theta5=np.full(n, np.nan),
        condition_number=np.full(n, np.inf),
        reachable=np.zeros(n, dtype=bool),
        params=_as_params(params),
    )
    prev: JointState | None = None
    for i, (t1, t2) in enumerate(grid):
        state = None
        for guess in (prev, None) if prev is not None else (None,):
            try:
                state = solve_passive(t1, t2, params, guess)
                break
            except NoConvergenceError:
                continue
        if state is None:
            prev = None
            continue
        prev = state
        out.reachable[i] = True
        out.sin_theta5[i] = math.sin(state.theta5)
        out.condition_number[i] = float(np.linalg.cond(passive_jacobian(state, params)))
    return out


# body frame of link 3 at the home pose; orientation is reported relative to it
_Q_CHASSIS = tuple(UnitQuaternion.from_matrix(CHASSIS_FROM_GROUND).as_array())
_Q_HOME_INV = (1.0, 0.0, 0.0, 0.0)
_Q_HOME_INV = tuple(end_effector_quat(0.0, HOME_PASSIVE[0], DesignParams()).conj().as_array())
_HOME_BODY = UnitQuaternion(*_Q_HOME_INV).conj().to_matrix()
