"""SE(3) poses, quaternions, and similarity transforms.

Conventions used everywhere in this package:
  - quaternions are stored (w, x, y, z), unit norm, with w >= 0 so every
    rotation has exactly one representation,
  - lengths are meters, angles are radians,
  - a pose maps points from its local frame into its parent frame:
    p_parent = R * p_local + t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, canonicalized so w is non-negative."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < 1e-12:
            raise ValueError("cannot normalize near-zero quaternion")
        s = 1.0 / n
        w, x, y, z = self.w * s, self.x * s, self.y * s, self.z * s
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            if abs(angle) > 1e-12:
                raise ValueError("rotation axis must be non-zero")
            return Quaternion.identity()
        half = 0.5 * angle
        s = math.sin(half) / n
        return Quaternion(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @staticmethod
    def from_rotation_matrix(m) -> "Quaternion":
        m = np.asarray(m, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return Quaternion(
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            )
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            return Quaternion(
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            )
        if i == 1:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            return Quaternion(
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            )
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        return Quaternion(
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        )

    def to_rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def multiply(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector (quaternion sandwich, no matrix build)."""
        v = np.asarray(v, dtype=float)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def angle_to(self, other: "Quaternion") -> float:
        """Geodesic rotation angle between two orientations, in [0, pi].

        Chordal form of 2*acos(|<q1,q2>|): exactly symmetric in its
        arguments and full precision for tiny angles where acos loses ~8
        digits.
        """
        dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
        s = 1.0 if dot >= 0.0 else -1.0
        chord_sq = (
            (self.w - s * other.w) ** 2
            + (self.x - s * other.x) ** 2
            + (self.y - s * other.y) ** 2
            + (self.z - s * other.z) ** 2
        )
        return 4.0 * math.asin(min(1.0, 0.5 * math.sqrt(chord_sq)))

    def axis_angle(self) -> np.ndarray:
        """Rotation vector (axis * angle) of this orientation."""
        # w >= 0 by canonicalization so angle is already in [0, pi]
        sin_half = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if sin_half < 1e-12:
            return np.zeros(3)
        angle = 2.0 * math.atan2(sin_half, self.w)
        return np.array([self.x, self.y, self.z]) * (angle / sin_half)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


def _zeros3() -> np.ndarray:
    return np.zeros(3)


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: rotation followed by translation."""

    position: np.ndarray = field(default_factory=_zeros3)
    orientation: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=float).reshape(3).copy()
        )

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "PoseSE3":
        return PoseSE3(np.array([x, y, z]), Quaternion.identity())

    def apply(self, point) -> np.ndarray:
        return self.orientation.rotate(point) + self.position

    def as_array(self) -> np.ndarray:
        """(x, y, z, qw, qx, qy, qz) layout used on the wire and on disk."""
        q = self.orientation
        return np.array(
            [self.position[0], self.position[1], self.position[2], q.w, q.x, q.y, q.z]
        )

    @staticmethod
    def from_array(a) -> "PoseSE3":
        a = np.asarray(a, dtype=float).reshape(7)
        return PoseSE3(a[:3], Quaternion(a[3], a[4], a[5], a[6]))


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Pose that applies b first, then a."""
    return PoseSE3(
        a.orientation.rotate(b.position) + a.position,
        a.orientation.multiply(b.orientation),
    )


def inverse(p: PoseSE3) -> PoseSE3:
    qinv = p.orientation.conjugate()
    return PoseSE3(-qinv.rotate(p.position), qinv)


def pose_delta(prev: PoseSE3, next_: PoseSE3) -> tuple[float, float]:
    """(linear meters, angular radians) separation between two poses."""
    lin = float(np.linalg.norm(next_.position - prev.position))
    ang = prev.orientation.angle_to(next_.orientation)
    return lin, ang


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R * p + translation (the sim/recon alignment map)."""

    scale: float = 1.0
    rotation: Quaternion = field(default_factory=Quaternion.identity)
    translation: np.ndarray = field(default_factory=_zeros3)

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        object.__setattr__(
            self,
            "translation",
            np.asarray(self.translation, dtype=float).reshape(3).copy(),
        )

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform()

    def inverse(self) -> "SimilarityTransform":
        rinv = self.rotation.conjugate()
        return SimilarityTransform(
            1.0 / self.scale, rinv, -rinv.rotate(self.translation) / self.scale
        )


def apply_similarity(t: SimilarityTransform, points) -> np.ndarray:
    """Map one 3-vector or an (N, 3) array through scale*R*p + translation."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = t.scale * (p @ t.rotation.to_rotation_matrix().T) + t.translation
    return out[0] if single else out
