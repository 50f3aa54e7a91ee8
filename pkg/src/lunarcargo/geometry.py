"""Rigid-transform primitives shared by every other module.

Conventions: right-handed frames, x forward, y left, z up; the world frame is
fixed at mission start. Rotations are unit quaternions stored scalar-last
(x, y, z, w). Planar headings are wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def wrap_heading(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def _as_fixed(arr, shape) -> np.ndarray:
    out = np.array(arr, dtype=np.float64).reshape(shape)
    out.setflags(write=False)
    return out


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    px, py, pz, pw = p
    qx, qy, qz, qw = q
    return np.array(
        [
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
            pw * qw - px * qx - py * qy - pz * qz,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < _EPS or abs(angle) < _EPS:
        return np.array([0.0, 0.0, 0.0, 1.0])
    half = 0.5 * angle
    return np.concatenate([axis / n * math.sin(half), [math.cos(half)]])


@dataclass(frozen=True)
class Pose3:
    """Rigid transform in 3-D: maps points from the child frame to the parent."""

    t: np.ndarray = field(default_factory=lambda: _as_fixed([0, 0, 0], (3,)))
    q: np.ndarray = field(default_factory=lambda: _as_fixed([0, 0, 0, 1], (4,)))

    def __post_init__(self):
        t = _as_fixed(self.t, (3,))
        q = np.array(self.q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < _EPS:
            raise ValueError("rotation quaternion must be finite and non-zero")
        q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Pose3":
        return Pose3()

    @staticmethod
    def from_translation(x: float, y: float, z: float = 0.0) -> "Pose3":
        return Pose3(t=np.array([x, y, z]))

    @staticmethod
    def from_axis_angle(axis, angle: float, t=(0.0, 0.0, 0.0)) -> "Pose3":
        return Pose3(t=np.asarray(t, dtype=np.float64), q=quat_from_axis_angle(axis, angle))

    @staticmethod
    def from_yaw(yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> "Pose3":
        return Pose3.from_axis_angle((0, 0, 1), yaw, (x, y, z))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def rotation_angle(self) -> float:
        """Magnitude of the rotation, in [0, pi]."""
        w = min(1.0, abs(float(self.q[3])))
        return 2.0 * math.acos(w)

    def axis_angle(self) -> tuple[np.ndarray, float]:
        angle = self.rotation_angle()
        v = self.q[:3] if self.q[3] >= 0 else -self.q[:3]
        n = np.linalg.norm(v)
        if n < _EPS:
            return np.array([0.0, 0.0, 1.0]), 0.0
        return v / n, angle

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector) into the parent frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix.T + self.t

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation_matrix.T


def compose(a: Pose3, b: Pose3) -> Pose3:
    """Chain two transforms: the result maps b's frame into a's parent frame."""
    return Pose3(t=a.t + a.rotate(b.t), q=quat_multiply(a.q, b.q))


def invert(p: Pose3) -> Pose3:
    q_inv = np.array([-p.q[0], -p.q[1], -p.q[2], p.q[3]])
    return Pose3(t=-(quat_to_matrix(q_inv) @ p.t), q=q_inv)


def yaw_of(p: Pose3) -> float:
    """Rotation of the parent-frame x-axis image about +z."""
    x, y, z, w = p.q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


@dataclass(frozen=True)
class Pose2:
    """Planar pose in the control frame; heading is wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_heading(float(self.heading)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_pose3(self, z: float = 0.0) -> Pose3:
        return Pose3.from_yaw(self.heading, self.x, self.y, z)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 2) points into the parent frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        pts = np.asarray(points, dtype=np.float64)
        rot = np.array([[c, -s], [s, c]])
        return pts @ rot.T + np.array([self.x, self.y])


def planar_project(p: Pose3) -> Pose2:
    """Project onto the control plane: x, y and yaw about the world up-axis."""
    return Pose2(float(p.t[0]), float(p.t[1]), wrap_heading(yaw_of(p)))


def compose2(a: Pose2, b: Pose2) -> Pose2:
    c, s = math.cos(a.heading), math.sin(a.heading)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        wrap_heading(a.heading + b.heading),
    )


def invert2(p: Pose2) -> Pose2:
    c, s = math.cos(p.heading), math.sin(p.heading)
    return Pose2(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.heading)


@dataclass(frozen=True)
class TwistCommand:
    """Planar twist: signed forward speed and angular velocity."""

    v: float = 0.0
    omega: float = 0.0

    def is_finite(self) -> bool:
        return math.isfinite(self.v) and math.isfinite(self.omega)


ZERO_TWIST = TwistCommand(0.0, 0.0)
