"""Rigid-body transform algebra.

Conventions
-----------
A transform ``T_ab`` maps coordinates expressed in frame ``b`` into frame
``a``: ``p_a = R_ab @ p_b + t_ab``. Composition follows matrix order, so
``compose(T_ab, T_bc) == T_ac``. Lengths are millimetres, angles radians
unless a name says ``_deg``.

Rotations live as 3x3 matrices; unit quaternions (w, x, y, z) with w >= 0
are used only for serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue

ORTHO_TOL = 1e-9
# compose() re-projects onto SO(3) once accumulated drift exceeds this.
_REPROJECT_TOL = 1e-12


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Closest rotation matrix (polar factor) to ``r``."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotvec_to_matrix(rv) -> np.ndarray:
    """Rodrigues formula: rotation vector (axis * angle) to matrix."""
    rv = np.asarray(rv, dtype=float)
    theta = math.sqrt(float(rv @ rv))
    k = skew(rv)
    if theta < 1e-8:
        # second-order series; exact to double precision at this scale
        return np.eye(3) + k + 0.5 * (k @ k)
    s = math.sin(theta) / theta
    c = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + s * k + c * (k @ k)


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotvec_to_matrix`, robust near 0 and pi."""
    w = 0.5 * vee(r - r.T)
    sin_t = math.sqrt(float(w @ w))
    cos_t = 0.5 * (float(np.trace(r)) - 1.0)
    theta = math.atan2(sin_t, cos_t)
    if theta < 1e-8:
        return w * (1.0 + theta * theta / 6.0)
    if math.pi - theta > 1e-3:
        return w * (theta / sin_t)
    # near pi: axis from the symmetric part, sign from the skew part
    b = 0.5 * (r + r.T) - cos_t * np.eye(3)
    col = int(np.argmax(np.diag(b)))
    axis = b[:, col] / math.sqrt(max(b[col, col], 1e-300))
    axis /= np.linalg.norm(axis)
    if float(axis @ w) < 0.0:
        axis = -axis
    return axis * theta


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return rotvec_to_matrix(axis / np.linalg.norm(axis) * angle)


def rot_x(angle: float) -> np.ndarray:
    return axis_angle_matrix((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> np.ndarray:
    return axis_angle_matrix((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> np.ndarray:
    return axis_angle_matrix((0.0, 0.0, 1.0), angle)


@dataclass(frozen=True)
class UnitQuaternion:
    """Serialization form of a rotation; canonical sign ``w >= 0``."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > ORTHO_TOL:
            raise InvalidValue(f"quaternion norm {n!r} is not 1")
        if self.w < 0.0:
            raise InvalidValue("quaternion must be canonical (w >= 0)")

    @classmethod
    def from_components(cls, w, x, y, z) -> "UnitQuaternion":
        """Normalize and canonicalize arbitrary components."""
        q = np.array([w, x, y, z], dtype=float)
        q /= np.linalg.norm(q)
        if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q[1:])):
            q = -q
        return cls(*(float(c) for c in q))

    @classmethod
    def from_matrix(cls, r: np.ndarray) -> "UnitQuaternion":
        # Shepperd's method: branch on the largest diagonal term
        m = np.asarray(r, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls.from_components(*q)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)


def _first_nonzero_negative(v) -> bool:
    for c in v:
        if c != 0.0:
            return c < 0.0
    return False


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``p -> rotation @ p + translation`` (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if r.shape != (3, 3):
            raise InvalidValue(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidValue("transform has non-finite entries")
        if np.linalg.norm(r.T @ r - np.eye(3)) > ORTHO_TOL:
            raise InvalidValue("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise InvalidValue("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q: UnitQuaternion, t) -> "RigidTransform":
        return cls(q.to_matrix(), t)

    @classmethod
    def from_rotvec(cls, rv, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_matrix(rv), t)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def quaternion(self) -> UnitQuaternion:
        return UnitQuaternion.from_matrix(self.rotation)

    @property
    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    def apply(self, points) -> np.ndarray:
        """Map a point (3,) or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        q = self.quaternion
        return f"RigidTransform(q=({q.w:.6g}, {q.x:.6g}, {q.y:.6g}, {q.z:.6g}), t={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _REPROJECT_TOL:
        r = orthonormalize(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle of ``r`` in radians, accurate near 0 and pi."""
    w = 0.5 * vee(r - r.T)
    return math.atan2(math.sqrt(float(w @ w)), 0.5 * (float(np.trace(r)) - 1.0))


def rotation_distance(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the rotations of ``a`` and ``b`` in degrees."""
    return math.degrees(rotation_angle(a.rotation.T @ b.rotation))


def translation_distance(a: RigidTransform, b: RigidTransform) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix."""
    q = rng.standard_normal(4)
    return UnitQuaternion.from_components(*q).to_matrix()


def random_transform(rng: np.random.Generator, scale: float = 500.0) -> RigidTransform:
    return RigidTransform(orthonormalize(random_rotation(rng)), rng.uniform(-scale, scale, 3))


def small_perturbation(rng: np.random.Generator, rot_sd: float, pos_sd: float) -> RigidTransform:
    """Random transform with per-axis rotation sd ``rot_sd`` (rad) and
    per-axis translation sd ``pos_sd`` (mm)."""
    return RigidTransform(
        rotvec_to_matrix(rng.normal(0.0, rot_sd, 3)), rng.normal(0.0, pos_sd, 3)
    )
