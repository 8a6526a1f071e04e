"""Eye-to-hand calibration: robot base <- tracker transform from paired poses.

Each :class:`PosePair` holds the robot flange pose in the base frame (``T``)
and the reference-tool pose reported by the tracker (``M``, tool frame in
tracker coordinates). With ``X`` the unknown base <- tracker transform and
``Y`` the fixed flange <- tool offset, ``T_i @ Y == X @ M_i`` for every
configuration. Differencing two configurations eliminates ``Y``:

    A @ X == X @ B,    A = T_2 @ inv(T_1),    B = M_2 @ inv(M_1)

``B`` is the tool motion seen by the tracker; written with the inverse
(tool <- tracker) transforms it reads ``inv(M_2^-1) @ M_1^-1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConditioningWarning, DegenerateMotion, InsufficientData
from .geom import (
    RigidTransform,
    UnitQuaternion,
    compose,
    invert,
    orthonormalize,
    rotation_angle,
    skew,
)
from .register import FiducialSet, rmse

MIN_ROTATION = 1e-6  # rad; below this a motion's axis is undefined
OUTLIER_ANGLE_DEG = 5.0
CONDITIONING_SV = 1e-3


@dataclass(frozen=True)
class PosePair:
    robot_tcp: RigidTransform  # base <- flange
    tracker_ref: RigidTransform  # tracker <- reference tool


@dataclass(frozen=True)
class MotionPair:
    a: RigidTransform
    b: RigidTransform

    @property
    def angle_gap_deg(self) -> float:
        return math.degrees(abs(rotation_angle(self.a.rotation) - rotation_angle(self.b.rotation)))


@dataclass(frozen=True)
class HandEyeSolution:
    """Result of :func:`solve_axxb`.

    Residuals are RMS values of ``A_i X - X B_i`` over the motions used:
    the rotational part as an angle in degrees, the translational part in mm.
    """

    x: RigidTransform
    rotation_residual_deg: float
    translation_residual_mm: float
    n_used: int
    n_dropped: int
    min_singular_value: float


def make_motion_pairs(pairs, all_pairs: bool = False) -> list[MotionPair]:
    """Relative motions from consecutive configurations (or every pair)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientData(f"need at least 2 pose pairs, got {len(pairs)}")
    if all_pairs:
        index = list(combinations(range(len(pairs)), 2))
    else:
        index = [(i, i + 1) for i in range(len(pairs) - 1)]
    motions = []
    for i, j in index:
        p1, p2 = pairs[i], pairs[j]
        a = compose(p2.robot_tcp, invert(p1.robot_tcp))
        b = compose(p2.tracker_ref, invert(p1.tracker_ref))
        motions.append(MotionPair(a, b))
    return motions


def _tsai_vector(r: np.ndarray) -> np.ndarray:
    # 2 sin(theta/2) * axis, i.e. twice the quaternion vector part
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    theta = rotation_angle(r)
    s = math.sin(theta)
    if s < 1e-12:
        # theta ~ pi: fall back to the quaternion route
        q = UnitQuaternion.from_matrix(r)
        return 2.0 * np.array([q.x, q.y, q.z])
    return w * (2.0 * math.sin(0.5 * theta) / s)


def _usable(motions):
    used, dropped = [], 0
    for m in motions:
        ta = rotation_angle(m.a.rotation)
        tb = rotation_angle(m.b.rotation)
        if ta < MIN_ROTATION or tb < MIN_ROTATION:
            dropped += 1
        elif math.degrees(abs(ta - tb)) > OUTLIER_ANGLE_DEG:
            dropped += 1
        else:
            used.append(m)
    return used, dropped


def solve_axxb(motions) -> HandEyeSolution:
    """Tsai-Lenz two-stage least-squares solution of ``A_i X = X B_i``.

    Stage one solves for the rotation through the modified Rodrigues
    vectors ``P = 2 sin(theta/2) n`` of every motion,

        skew(P_a + P_b) @ P' = P_b - P_a,   P_x = 2 P' / sqrt(1 + |P'|^2),

    stage two for the translation from the stacked system
    ``(R_a - I) t_x = R_x t_b - t_a``.

    Motions with rotation below 1e-6 rad, or whose A/B rotation angles
    differ by more than 5 degrees, are dropped first.

    Raises
    ------
    DegenerateMotion
        Fewer than two usable motions remain, or all rotation axes are
        parallel so the rotation about them is unobservable.
    """
    motions = list(motions)
    if not motions:
        raise InsufficientData("no motion pairs")
    used, dropped = _usable(motions)
    if len(used) < 2:
        raise DegenerateMotion(f"only {len(used)} usable motion(s) after dropping {dropped}")

    axes = []
    for m in used:
        pa = _tsai_vector(m.a.rotation)
        axes.append(pa / np.linalg.norm(pa))
    axes = np.array(axes)
    # largest angle between any axis and the first one (sign-insensitive)
    spread = np.linalg.norm(np.cross(axes, axes[0]), axis=1).max()
    if spread < MIN_ROTATION:
        raise DegenerateMotion("all motion rotation axes are parallel")

    lhs = np.zeros((3 * len(used), 3))
    rhs = np.zeros(3 * len(used))
    for k, m in enumerate(used):
        pa = _tsai_vector(m.a.rotation)
        pb = _tsai_vector(m.b.rotation)
        lhs[3 * k : 3 * k + 3] = skew(pa + pb)
        rhs[3 * k : 3 * k + 3] = pb - pa
    p_prime, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] < CONDITIONING_SV:
        warnings.warn(
            f"poorly conditioned rotation system (smallest singular value {sv[-1]:.3g}); "
            "vary the calibration poses more",
            ConditioningWarning,
            stacklevel=2,
        )
    px = 2.0 * p_prime / math.sqrt(1.0 + float(p_prime @ p_prime))
    n2 = float(px @ px)
    rx = (1.0 - 0.5 * n2) * np.eye(3) + 0.5 * (np.outer(px, px) + math.sqrt(max(4.0 - n2, 0.0)) * skew(px))

    c = np.zeros((3 * len(used), 3))
    d = np.zeros(3 * len(used))
    for k, m in enumerate(used):
        c[3 * k : 3 * k + 3] = m.a.rotation - np.eye(3)
        d[3 * k : 3 * k + 3] = rx @ m.b.translation - m.a.translation
    tx, *_ = np.linalg.lstsq(c, d, rcond=None)

    x = RigidTransform(orthonormalize(rx), tx)
    rot_res, trans_res = axxb_residuals(used, x)
    return HandEyeSolution(x, rot_res, trans_res, len(used), dropped, float(sv[-1]))


def axxb_residuals(motions, x: RigidTransform) -> tuple[float, float]:
    """RMS rotational (deg) and translational (mm) residual of ``A X - X B``."""
    rot, trans = [], []
    for m in motions:
        ax = compose(m.a, x)
        xb = compose(x, m.b)
        rot.append(rotation_angle(ax.rotation.T @ xb.rotation))
        trans.append(float(np.linalg.norm(ax.translation - xb.translation)))
    return (
        math.degrees(math.sqrt(float(np.mean(np.square(rot))))),
        math.sqrt(float(np.mean(np.square(trans)))),
    )


def rmse_e2h(markers_tracker: FiducialSet, markers_robot: FiducialSet, x: RigidTransform) -> float:
    """RMS distance between robot-frame markers and tracker markers mapped by ``x``."""
    robot_pts, tracker_pts = markers_robot.matched(markers_tracker)
    return rmse(np.linalg.norm(robot_pts - x.apply(tracker_pts), axis=1))
