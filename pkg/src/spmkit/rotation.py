"""Rotation algebra: unit quaternions, rotation matrices and Euler angles.

Conventions
-----------
- Quaternions are stored scalar-first ``(w, x, y, z)``.
- Every quaternion is renormalised and put in canonical sign on construction:
  ``w >= 0`` and, when ``w == 0``, the first nonzero of ``(x, y, z)`` is
  positive.  This picks one representative of each rotation so stored data
  and error metrics never see the double cover.
- Euler angles are intrinsic Z-Y-X: ``R = Rz(phi) @ Ry(psi) @ Rx(theta)``
  (yaw ``phi``, pitch ``psi``, roll ``theta``).  ``phi`` and ``theta`` lie in
  ``(-pi, pi]`` and ``psi`` in ``[-pi/2, pi/2]``.
- Rotation matrices act on column vectors.

The scalar API works on :class:`UnitQuaternion` values; the ``*_array``
functions are vectorised over ``(..., 4)`` arrays for dataset-sized work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# |psi| closer than this to pi/2 is treated as gimbal lock
GIMBAL_TOL = 1e-6


def _canonical_sign(w: float, x: float, y: float, z: float) -> float:
    for c in (w, x, y, z):
        if c != 0.0:
            return 1.0 if c > 0.0 else -1.0
    return 1.0


@dataclass(frozen=True, slots=True)
class UnitQuaternion:
    """Unit quaternion in canonical sign.  Construction normalises."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self) -> None:
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError(f"cannot normalise quaternion {(self.w, self.x, self.y, self.z)}")
        s = _canonical_sign(self.w, self.x, self.y, self.z) / n
        object.__setattr__(self, "w", float(self.w * s))
        object.__setattr__(self, "x", float(self.x * s))
        object.__setattr__(self, "y", float(self.y * s))
        object.__setattr__(self, "z", float(self.z * s))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        w, x, y, z = (float(c) for c in q)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        a = np.asarray(axis, dtype=float)
        n = np.linalg.norm(a)
        if n == 0.0:
            return cls.identity()
        a = a / n
        s = math.sin(0.5 * angle)
        return cls(math.cos(0.5 * angle), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_rotvec(cls, v) -> "UnitQuaternion":
        v = np.asarray(v, dtype=float)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            # second-order accurate for tiny rotations
            return cls(1.0 - angle * angle / 8.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2])
        return cls.from_axis_angle(v / angle, angle)

    @classmethod
    def from_matrix(cls, m) -> "UnitQuaternion":
        return cls.from_array(matrix_to_quat_array(np.asarray(m, dtype=float)))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conj(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix_array(self.as_array())

    def to_rotvec(self) -> np.ndarray:
        v = np.array([self.x, self.y, self.z])
        s = float(np.linalg.norm(v))
        if s < 1e-12:
            return 2.0 * v
        return v * (2.0 * math.atan2(s, self.w) / s)

    def rotate(self, v) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return quat_compose(self, other)


class EulerAngles(NamedTuple):
    """Intrinsic Z-Y-X angles in radians: yaw ``phi``, pitch ``psi``, roll ``theta``."""

    phi: float
    psi: float
    theta: float


def quat_compose(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    return UnitQuaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def relative_rotation(q0: UnitQuaternion, q1: UnitQuaternion) -> UnitQuaternion:
    """Rotation ``q01`` with ``q0 * q01 == q1``; ``q1`` expressed in the ``q0`` frame."""
    return quat_compose(q0.conj(), q1)


def quat_angle_error(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Geodesic angle between two orientations, in ``[0, pi]``."""
    # atan2 of the relative rotation keeps full precision near zero, unlike acos
    r = a.conj() * b
    return 2.0 * math.atan2(math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z), abs(r.w))


def quat_to_euler(q: UnitQuaternion) -> EulerAngles:
    return EulerAngles(*(float(v) for v in quat_to_euler_array(q.as_array())))


def euler_to_quat(e: EulerAngles) -> UnitQuaternion:
    return UnitQuaternion.from_array(euler_to_quat_array(np.asarray(e, dtype=float)))


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``; works on scalars and arrays."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation_matrix(m, tol: float = 1e-10) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    return bool(np.allclose(m.T @ m, np.eye(3), atol=tol) and abs(np.linalg.det(m) - 1.0) <= tol)


def matrix_log(m: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    return UnitQuaternion.from_matrix(m).to_rotvec()


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# --------------------------------------------------------------------------
# vectorised helpers, arrays of shape (..., 4) in (w, x, y, z) order


def canonicalize_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # sign of the first nonzero component
    nz = q != 0.0
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0.0, -q, q)


def quat_multiply_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return canonicalize_array(out)


def quat_to_matrix_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat_array(m: np.ndarray) -> np.ndarray:
    """Shepperd's method: pick the largest of w, x, y, z to divide by."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        k = int(np.argmax([tr, r[0, 0], r[1, 1], r[2, 2]]))
        if k == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
            out[i] = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
        elif k == 1:
            s = 2.0 * math.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0))
            out[i] = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
        elif k == 2:
            s = 2.0 * math.sqrt(max(1.0 + r[1, 1] - r[0, 0] - r[2, 2], 0.0))
            out[i] = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(max(1.0 + r[2, 2] - r[0, 0] - r[1, 1], 0.0))
            out[i] = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    return canonicalize_array(out).reshape(m.shape[:-2] + (4,))


def rotate_array(q: np.ndarray, v) -> np.ndarray:
    """Rotate vector(s) ``v`` by quaternion(s) ``q``."""
    return np.einsum("...ij,...j->...i", quat_to_matrix_array(q), np.broadcast_to(v, np.shape(q)[:-1] + (3,)))


def rotvec_to_quat_array(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 as a -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5)
    return canonicalize_array(np.concatenate([np.cos(half), v * k], axis=-1))


def quat_to_euler_array(q: np.ndarray) -> np.ndarray:
    """Z-Y-X Euler angles ``(phi, psi, theta)`` along the last axis."""
    m = quat_to_matrix_array(q)
    cpsi = np.hypot(m[..., 0, 0], m[..., 1, 0])
    psi = np.arctan2(-m[..., 2, 0], cpsi)
    locked = np.abs(np.abs(psi) - 0.5 * np.pi) < GIMBAL_TOL
    phi = np.where(locked, np.arctan2(-m[..., 0, 1], m[..., 1, 1]), np.arctan2(m[..., 1, 0], m[..., 0, 0]))
    theta = np.where(locked, 0.0, np.arctan2(m[..., 2, 1], m[..., 2, 2]))
    return np.stack([wrap_angle(phi), psi, wrap_angle(theta)], axis=-1)


def euler_to_quat_array(e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    hp, hs, ht = 0.5 * e[..., 0], 0.5 * e[..., 1], 0.5 * e[..., 2]
    cp, sp = np.cos(hp), np.sin(hp)
    cs, ss = np.cos(hs), np.sin(hs)
    ct, st = np.cos(ht), np.sin(ht)
    q = np.stack(
        [
            cp * cs * ct + sp * ss * st,
            cp * cs * st - sp * ss * ct,
            cp * ss * ct + sp * cs * st,
            sp * cs * ct - cp * ss * st,
        ],
        axis=-1,
    )
    return canonicalize_array(q)
