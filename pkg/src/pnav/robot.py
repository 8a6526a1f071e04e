"""Serial-chain kinematics: forward kinematics, geometric Jacobian, J^T F.

A chain is a list of revolute joints. Joint ``i`` contributes
``Trans(origin_i) @ Rot(zero_rotation_i) @ Rot(axis_i, q_i)`` to the product;
``tcp_offset`` is appended last. Lengths are mm, angles rad internally
(chain files store degrees).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, InvalidValue
from .geom import RigidTransform, axis_angle_matrix, compose, matrix_to_rotvec, rotvec_to_matrix

MAX_JOINTS = 16


@dataclass(frozen=True, eq=False)
class Joint:
    axis: np.ndarray
    origin: np.ndarray
    zero_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    limits: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise InvalidValue("joint axis must be nonzero")
        if abs(n - 1.0) > 1e-9:
            raise InvalidValue(f"joint axis must be unit norm, got {n}")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "zero_rotation", np.asarray(self.zero_rotation, dtype=float).reshape(3, 3))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple
    tcp_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    name: str = "chain"

    def __post_init__(self):
        joints = tuple(self.joints)
        if not 1 <= len(joints) <= MAX_JOINTS:
            raise InvalidValue(f"chain needs 1..{MAX_JOINTS} joints, got {len(joints)}")
        object.__setattr__(self, "joints", joints)

    @property
    def n(self) -> int:
        return len(self.joints)

    def random_q(self, rng: np.random.Generator, margin: float = 0.9) -> np.ndarray:
        lo = np.array([j.limits[0] for j in self.joints]) * margin
        hi = np.array([j.limits[1] for j in self.joints]) * margin
        return rng.uniform(lo, hi)


@dataclass(frozen=True, eq=False)
class JointState:
    q: np.ndarray
    qdot: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.zeros_like(q) if self.qdot is None else np.asarray(self.qdot, dtype=float).reshape(-1)
        if qd.shape != q.shape:
            raise DimensionMismatch("q and qdot lengths differ")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise InvalidValue("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


def _as_q(chain: KinematicChain, q) -> np.ndarray:
    q = q.q if isinstance(q, JointState) else np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (chain.n,):
        raise DimensionMismatch(f"chain has {chain.n} joints, got q of length {len(q)}")
    return q


def _joint_frames(chain: KinematicChain, q: np.ndarray):
    """Per-joint (axis point, axis direction) in the base frame, and the TCP pose."""
    r = np.eye(3)
    p = np.zeros(3)
    axes = []
    for joint, qi in zip(chain.joints, q):
        p = p + r @ joint.origin
        r = r @ joint.zero_rotation
        axes.append((p.copy(), r @ joint.axis))
        r = r @ axis_angle_matrix(joint.axis, qi)
    tcp = compose(RigidTransform(r, p), chain.tcp_offset)
    return axes, tcp


def forward_kinematics(chain: KinematicChain, q) -> RigidTransform:
    """TCP pose in the base frame."""
    _, tcp = _joint_frames(chain, _as_q(chain, q))
    return tcp


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6 x n Jacobian; rows 0-2 linear (mm/rad), rows 3-5 angular (rad/rad).

    Column ``i`` is ``(z_i x (p_tcp - p_i), z_i)`` with ``z_i`` the joint
    axis and ``p_i`` a point on it, both in the base frame.
    """
    axes, tcp = _joint_frames(chain, _as_q(chain, q))
    j = np.empty((6, chain.n))
    for i, (p_i, z_i) in enumerate(axes):
        j[:3, i] = np.cross(z_i, tcp.translation - p_i)
        j[3:, i] = z_i
    return j


def torques_from_wrench(j: np.ndarray, f) -> np.ndarray:
    """Joint torques ``J^T F``; torque rows of ``F`` in N*mm so that the
    result is in N*mm for every joint."""
    j = np.asarray(j, dtype=float)
    f = np.asarray(f, dtype=float).reshape(-1)
    if j.ndim != 2 or j.shape[0] != 6 or f.shape != (6,):
        raise DimensionMismatch(f"need a 6 x n Jacobian and a 6-vector, got {j.shape} and {f.shape}")
    return j.T @ f


def gravity_torques(chain: KinematicChain, q, payload_kg: float, g=(0.0, 0.0, -9.81)) -> np.ndarray:
    """Joint torques (N*mm) holding a point-mass payload at the TCP."""
    wrench = np.concatenate([payload_kg * np.asarray(g, dtype=float), np.zeros(3)])
    return torques_from_wrench(geometric_jacobian(chain, q), wrench)


def chain_from_dict(d: dict) -> KinematicChain:
    try:
        joints = []
        for jd in d["joints"]:
            zero = rotvec_to_matrix(np.radians(jd.get("zero_rotvec_deg", [0.0, 0.0, 0.0])))
            lim = jd.get("limits", [-180.0, 180.0])
            joints.append(Joint(jd["axis"], jd["origin"], zero, (math.radians(lim[0]), math.radians(lim[1]))))
        tcp = d.get("tcp_offset", {})
        tcp_t = RigidTransform(
            rotvec_to_matrix(np.radians(tcp.get("rotvec_deg", [0.0, 0.0, 0.0]))),
            tcp.get("translation", [0.0, 0.0, 0.0]),
        )
        return KinematicChain(tuple(joints), tcp_t, d.get("name", "chain"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid chain description: {exc}") from exc


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "name": chain.name,
        "units": {"length": "mm", "angle": "deg"},
        "joints": [
            {
                "axis": j.axis.tolist(),
                "origin": j.origin.tolist(),
                "zero_rotvec_deg": np.degrees(matrix_to_rotvec(j.zero_rotation)).tolist(),
                "limits": [math.degrees(j.limits[0]), math.degrees(j.limits[1])],
            }
            for j in chain.joints
        ],
        "tcp_offset": {
            "rotvec_deg": np.degrees(chain.tcp_offset.rotvec).tolist(),
            "translation": chain.tcp_offset.translation.tolist(),
        },
    }


def load_chain(path) -> KinematicChain:
    with open(path, encoding="utf-8") as fh:
        return chain_from_dict(json.load(fh))


def dump_chain(chain: KinematicChain, path) -> None:
    Path(path).write_text(json.dumps(chain_to_dict(chain), indent=2) + "\n", encoding="utf-8")


def default_chain() -> KinematicChain:
    """Generic 7-DoF arm with alternating z/y joint axes."""
    text = resources.files("pnav").joinpath("data/default_chain.json").read_text(encoding="utf-8")
    return chain_from_dict(json.loads(text))
