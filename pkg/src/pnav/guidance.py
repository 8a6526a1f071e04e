"""Cartesian impedance control, virtual fixtures and the insertion simulator.

Unit conventions: positions in mm, velocities in mm/s, rotations as
rotation vectors (rad). Stiffness is given in N/m (translation) and
N*m/rad (rotation), damping in N*s/m and N*m*s/rad, effective mass in kg
and kg*m^2. Wrenches are (N, N, N, N*m, N*m, N*m).

The operator is modelled as a spring-damper "hand" pulling the needle
toward a goal pose. The goal is the operator's perceived plan (true plan
plus per-trial biases) with band-limited tremor and, during insertion, a
slow random-walk drift. After the "aligned" event a guided robot locks the
current pose laterally and rotationally and leaves the insertion axis
free; a manual robot stays in gravity compensation throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._layout import N_PARAMS, NOISE_COLUMNS, P
from .errors import ConfigError, InvalidTimestep, InvalidValue
from .geom import RigidTransform, matrix_to_rotvec, rotvec_to_matrix
from .metrics import Modality, NeedleObservation, PathSpec, TrialResult, path_errors

MAX_DT = 0.01  # s


class ControlMode(str, enum.Enum):
    GRAVITY_COMPENSATION = "GravityCompensation"
    STIFFENED = "Stiffened"


def _diag6(d, what) -> np.ndarray:
    a = np.asarray(d, dtype=float)
    if a.shape == (6, 6):
        if np.any(a - np.diag(np.diag(a))):
            raise InvalidValue(f"{what} must be diagonal")
        a = np.diag(a)
    a = a.reshape(6)
    if not np.all(np.isfinite(a)):
        raise InvalidValue(f"{what} must be finite")
    return a


@dataclass(frozen=True, eq=False)
class ImpedanceParams:
    """Diagonal impedance ``K_c``, ``D_c`` expressed in ``basis``.

    ``basis`` is a rotation whose columns are the controller axes in the
    base frame; the translational and rotational blocks both use it.
    """

    stiffness: np.ndarray
    damping: np.ndarray
    zeta: float = 0.707
    mode: ControlMode = ControlMode.STIFFENED
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        k = _diag6(self.stiffness, "stiffness")
        d = _diag6(self.damping, "damping")
        if np.any(k < 0) or np.any(d < 0):
            raise InvalidValue("stiffness and damping must be nonnegative")
        if not 0.0 <= self.zeta <= 1.0:
            raise InvalidValue("zeta must lie in [0, 1]")
        basis = np.asarray(self.basis, dtype=float).reshape(3, 3)
        if np.linalg.norm(basis.T @ basis - np.eye(3)) > 1e-9 or np.linalg.det(basis) < 0:
            raise InvalidValue("basis must be a rotation")
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "damping", d)
        object.__setattr__(self, "mode", ControlMode(self.mode))
        object.__setattr__(self, "basis", basis)

    def base_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """6 x 6 stiffness and damping rotated into the base frame."""
        b = np.zeros((6, 6))
        b[:3, :3] = self.basis
        b[3:, 3:] = self.basis
        return b @ np.diag(self.stiffness) @ b.T, b @ np.diag(self.damping) @ b.T


@dataclass(frozen=True, eq=False)
class FixtureFrame:
    """Insertion line: ``origin`` (mm) and unit direction ``axis``."""

    origin: np.ndarray
    axis: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        a = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise InvalidValue("fixture axis must be unit norm")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "axis", a)

    @classmethod
    def from_path(cls, plan: PathSpec) -> "FixtureFrame":
        return cls(plan.entry, plan.direction)

    @property
    def slot(self) -> int:
        """Index of the coordinate axis closest to ``axis``."""
        return int(np.argmax(np.abs(self.axis)))

    @property
    def basis(self) -> np.ndarray:
        """Rotation closest to identity whose column ``slot`` is +/- ``axis``."""
        k = self.slot
        e = np.zeros(3)
        e[k] = 1.0
        a = self.axis if self.axis[k] >= 0 else -self.axis
        c = np.cross(e, a)
        s = np.linalg.norm(c)
        if s < 1e-15:
            return np.eye(3)
        return rotvec_to_matrix(c / s * math.atan2(s, float(e @ a)))


@dataclass(frozen=True, eq=False)
class SimState:
    x: np.ndarray  # position (mm) + rotation vector (rad)
    v: np.ndarray  # mm/s + rad/s
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(6)
        v = np.asarray(self.v, dtype=float).reshape(6)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and math.isfinite(self.t)):
            raise InvalidValue("state must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def at_rest(cls, x) -> "SimState":
        return cls(x, np.zeros(6), 0.0)


DEFAULT_M_EFF = np.array([1.0, 1.0, 1.0, 0.01, 0.01, 0.01])


def critical_damping(stiffness, zeta: float = 0.707, m_eff=None) -> np.ndarray:
    """``D_ii = 2 zeta sqrt(K_ii m_ii)`` as a 6 x 6 diagonal (unit mass by default)."""
    k = _diag6(stiffness, "stiffness")
    if np.any(k < 0):
        raise InvalidValue("stiffness must be nonnegative")
    m = np.ones(6) if m_eff is None else _diag6(m_eff, "m_eff")
    return np.diag(2.0 * zeta * np.sqrt(k * m))


def fixture_stiffness(
    frame: FixtureFrame, lateral: float = 4000.0, axial: float = 0.0, rotational: float = 200.0
) -> tuple[np.ndarray, np.ndarray]:
    """Fixture stiffness in fixture coordinates and the basis that diagonalizes it.

    The zero (or ``axial``) entry sits in the slot of the coordinate axis
    nearest to the insertion axis, so a z-aligned fixture gives
    ``diag(lateral, lateral, axial, rot, rot, rot)``.
    """
    k = np.full(6, float(rotational))
    k[:3] = lateral
    k[frame.slot] = axial
    return np.diag(k), frame.basis


def fixture_params(frame: FixtureFrame, zeta: float = 0.707, m_eff=None, **stiff) -> ImpedanceParams:
    k, basis = fixture_stiffness(frame, **stiff)
    m = DEFAULT_M_EFF if m_eff is None else m_eff
    return ImpedanceParams(k, critical_damping(k, zeta, m), zeta, ControlMode.STIFFENED, basis)


def pose_error(x_des, x_msr) -> np.ndarray:
    """Translational difference and rotation vector of ``R_des R_msr^T``."""
    x_des = np.asarray(x_des, dtype=float).reshape(6)
    x_msr = np.asarray(x_msr, dtype=float).reshape(6)
    rel = rotvec_to_matrix(x_des[3:]) @ rotvec_to_matrix(x_msr[3:]).T
    return np.concatenate([x_des[:3] - x_msr[:3], matrix_to_rotvec(rel)])


def impedance_force(x_des, x_msr, v, p: ImpedanceParams) -> np.ndarray:
    """``F = K x~ - D v``; identically zero in gravity-compensation mode."""
    if p.mode is ControlMode.GRAVITY_COMPENSATION:
        return np.zeros(6)
    k, d = p.base_matrices()
    unit = np.array([1e-3, 1e-3, 1e-3, 1.0, 1.0, 1.0])  # mm -> m
    err = pose_error(x_des, x_msr) * unit
    vel = np.asarray(v, dtype=float).reshape(6) * unit
    return k @ err - d @ vel


def step_dynamics(s: SimState, f_operator, f_controller, m_eff=None, dt: float = 1e-3) -> SimState:
    """One semi-implicit Euler step of the reduced Cartesian plant."""
    if not (dt > 0.0 and dt <= MAX_DT):
        raise InvalidTimestep(f"dt must lie in (0, {MAX_DT}], got {dt}")
    m = DEFAULT_M_EFF if m_eff is None else _diag6(m_eff, "m_eff")
    if np.any(m <= 0):
        raise InvalidValue("m_eff must be positive definite")
    f = np.asarray(f_operator, dtype=float).reshape(6) + np.asarray(f_controller, dtype=float).reshape(6)
    acc = f / m
    acc[:3] *= 1e3  # m/s^2 -> mm/s^2
    v = s.v + acc * dt
    return SimState(s.x + v * dt, v, s.t + dt)


@dataclass(frozen=True)
class OperatorModel:
    """Stand-in for a human operator; lengths in mm, angles in deg.

    ``bias_*`` are standard deviations of per-trial offsets of the perceived
    plan, ``drift_*`` the end-of-insertion standard deviations of the goal
    random walk, ``tremor_*`` the stationary standard deviations of the
    low-pass tremor.
    """

    tremor_sd: float = 0.5
    tremor_rot_sd: float = 0.1
    tremor_cutoff_hz: float = 2.0
    bias_lat: float = 0.0
    bias_depth: float = 0.0
    bias_ang: float = 0.0
    drift_lat: float = 0.0
    drift_ang: float = 0.0
    start_offset_sd: float = 15.0
    start_ang_sd: float = 8.0
    k_hand: float = 400.0  # N/m
    zeta_hand: float = 1.0
    k_hand_rot: float = 4.0  # N*m/rad
    speed: float = 30.0  # mm/s

    def __post_init__(self):
        for name in (
            "tremor_sd", "tremor_rot_sd", "bias_lat", "bias_depth", "bias_ang",
            "drift_lat", "drift_ang", "start_offset_sd", "start_ang_sd",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError(f"{name} must be finite and >= 0")
        for name in ("tremor_cutoff_hz", "k_hand", "k_hand_rot", "speed"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.zeta_hand <= 2.0:
            raise ConfigError("zeta_hand must lie in [0, 2]")

    def scaled(self, factor: float) -> "OperatorModel":
        """All noise and bias magnitudes multiplied by ``factor``."""
        return replace(
            self,
            tremor_sd=self.tremor_sd * factor,
            tremor_rot_sd=self.tremor_rot_sd * factor,
            bias_lat=self.bias_lat * factor,
            bias_depth=self.bias_depth * factor,
            bias_ang=self.bias_ang * factor,
            drift_lat=self.drift_lat * factor,
            drift_ang=self.drift_ang * factor,
        )


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3  # s
    ctrl_dt: float = 1e-2  # operator update period, s
    m_lin: float = 1.0  # kg
    m_rot: float = 0.01  # kg*m^2
    k_lat: float = 4000.0  # N/m
    k_ax: float = 0.0  # N/m
    k_rot: float = 200.0  # N*m/rad
    zeta: float = 0.707
    needle_length: float = 120.0  # mm, end effector to tip
    align_min_t: float = 1.5  # s
    align_max_t: float = 10.0  # s
    align_lat_thr: float = 1.0  # mm
    align_ang_thr: float = 0.5  # deg
    settle_t: float = 1.5  # s
    anchor: str = "base"

    def __post_init__(self):
        if not (self.dt > 0.0 and self.dt <= MAX_DT):
            raise InvalidTimestep(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        ratio = self.ctrl_dt / self.dt
        if ratio < 1.0 - 1e-9 or abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError("ctrl_dt must be a positive multiple of dt")
        if self.m_lin <= 0 or self.m_rot <= 0:
            raise ConfigError("effective masses must be positive")
        if min(self.k_lat, self.k_ax, self.k_rot) < 0 or not 0.0 <= self.zeta <= 1.0:
            raise ConfigError("invalid fixture stiffness or damping ratio")
        if self.needle_length <= 0 or self.align_max_t < self.align_min_t or self.settle_t < 0:
            raise ConfigError("invalid needle length or timing")
        if self.anchor not in ("base", "entry"):
            raise ConfigError(f"unknown anchor {self.anchor!r}")

    @property
    def ctrl_every(self) -> int:
        return int(round(self.ctrl_dt / self.dt))


@dataclass(frozen=True, eq=False)
class InsertionTask:
    """Insertion line in the base frame: skin ``entry``, unit ``axis``, ``depth`` to target (mm)."""

    entry: np.ndarray
    axis: np.ndarray
    depth: float

    def __post_init__(self):
        f = FixtureFrame(self.entry, self.axis)
        if not self.depth > 0:
            raise ConfigError("insertion depth must be > 0")
        object.__setattr__(self, "entry", f.origin)
        object.__setattr__(self, "axis", f.axis)

    @classmethod
    def from_path(cls, plan: PathSpec) -> "InsertionTask":
        return cls(plan.entry, plan.direction, plan.length)

    @property
    def target(self) -> np.ndarray:
        return self.entry + self.depth * self.axis

    def plan_frame(self, needle_length: float) -> RigidTransform:
        """Base <- plan transform; plan origin is the TCP with the tip on the entry."""
        r = FixtureFrame(self.entry, self.axis).basis
        k = FixtureFrame(self.entry, self.axis).slot
        # permute so the insertion axis becomes plan z
        cols = [(k + 1) % 3, (k + 2) % 3, k]
        r = r[:, cols]
        if r[:, 2] @ self.axis < 0:
            r = r @ np.diag([1.0, -1.0, -1.0])
        return RigidTransform(r, self.entry - needle_length * self.axis)


@dataclass
class InsertionOutcome:
    result: TrialResult
    trajectory: np.ndarray  # rows: t, pos(3), rotvec(3), vel(3), angvel(3), phase; base frame
    t_press: float
    final: SimState

    def states(self) -> list[SimState]:
        return [SimState(row[1:7], row[7:13], row[0]) for row in self.trajectory]


def _trial_rng(seed: int, modality: Modality, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), MODALITY_INDEX[modality], int(trial)])


MODALITY_INDEX = {Modality.SM: 0, Modality.SG: 1, Modality.AM: 2, Modality.AG: 3}


def _pack(mode: Modality, task: InsertionTask, op: OperatorModel, cfg: SimConfig, biases):
    ell = cfg.needle_length
    lat_x, lat_y, depth, ang_x, ang_y = biases
    rot_perc = np.array([ang_x, ang_y, 0.0])
    u = rotvec_to_matrix(rot_perc)[:, 2]
    target = np.array([0.0, 0.0, task.depth + ell])
    target_perc = target + np.array([lat_x, lat_y, depth])
    gfin = target_perc - ell * u
    gpre = gfin - task.depth * u

    k_fix = np.array([cfg.k_lat, cfg.k_lat, cfg.k_ax, cfg.k_rot])
    m_fix = np.array([cfg.m_lin, cfg.m_lin, cfg.m_lin, cfg.m_rot])
    d_fix = 2.0 * cfg.zeta * np.sqrt(k_fix * m_fix)
    prm = np.zeros(N_PARAMS)
    prm[P["dt"]] = cfg.dt
    prm[P["ctrl_every"]] = cfg.ctrl_every
    prm[P["m_lin"]] = cfg.m_lin
    prm[P["m_rot"]] = cfg.m_rot
    prm[P["k_hand"]] = op.k_hand
    prm[P["b_hand"]] = 2.0 * op.zeta_hand * math.sqrt(op.k_hand * cfg.m_lin)
    prm[P["k_hand_rot"]] = op.k_hand_rot
    prm[P["b_hand_rot"]] = 2.0 * op.zeta_hand * math.sqrt(op.k_hand_rot * cfg.m_rot)
    prm[P["guided"]] = 1.0 if mode.guided else 0.0
    prm[P["k_lat"]], prm[P["k_ax"]], prm[P["k_rot"]] = cfg.k_lat, cfg.k_ax, cfg.k_rot
    prm[P["d_lat"]], prm[P["d_ax"]], prm[P["d_rot"]] = d_fix[0], d_fix[2], d_fix[3]
    prm[P["goal_pre_x"] : P["goal_pre_z"] + 1] = gpre
    prm[P["goal_fin_x"] : P["goal_fin_z"] + 1] = gfin
    prm[P["goal_rot_x"] : P["goal_rot_z"] + 1] = rot_perc
    prm[P["tremor_lin"]] = op.tremor_sd
    prm[P["tremor_rot"]] = math.radians(op.tremor_rot_sd)
    prm[P["tremor_alpha"]] = math.exp(-2.0 * math.pi * op.tremor_cutoff_hz * cfg.ctrl_dt)
    prm[P["drift_lin"]] = op.drift_lat
    prm[P["drift_rot"]] = math.radians(op.drift_ang)
    prm[P["align_min_t"]] = cfg.align_min_t
    prm[P["align_max_t"]] = cfg.align_max_t
    prm[P["align_lat_thr"]] = cfg.align_lat_thr
    prm[P["align_ang_thr"]] = math.radians(cfg.align_ang_thr)
    prm[P["insert_t"]] = task.depth / op.speed
    prm[P["settle_t"]] = cfg.settle_t
    return prm, gpre, rot_perc


def simulate_insertion(
    mode,
    task: InsertionTask,
    operator: OperatorModel,
    seed: int,
    cfg: SimConfig | None = None,
    *,
    trial: int = 0,
    record_every: int = 10,
) -> InsertionOutcome:
    """Run alignment then insertion for one trial of modality ``mode``.

    Randomness comes from ``default_rng([seed, modality index, trial])`` and
    is drawn in a fixed order (start offset, perception biases, per-tick
    noise), all as standard normals scaled afterwards, so that different
    noise magnitudes see common random numbers.
    """
    try:
        mode = Modality(mode)
    except ValueError as exc:
        raise ConfigError(f"unknown modality {mode!r}") from exc
    cfg = SimConfig() if cfg is None else cfg
    rng = _trial_rng(seed, mode, trial)
    start = rng.standard_normal(6)
    bias_n = rng.standard_normal(5)
    insert_t = task.depth / operator.speed
    n_ctrl = int(math.ceil((cfg.align_max_t + insert_t + cfg.settle_t) / cfg.ctrl_dt)) + 3
    noise = rng.standard_normal((n_ctrl, NOISE_COLUMNS))

    biases = (
        operator.bias_lat * bias_n[0],
        operator.bias_lat * bias_n[1],
        operator.bias_depth * bias_n[2],
        math.radians(operator.bias_ang) * bias_n[3],
        math.radians(operator.bias_ang) * bias_n[4],
    )
    prm, gpre, rot_perc = _pack(mode, task, operator, cfg, biases)
    x0 = np.empty(6)
    x0[:3] = gpre + operator.start_offset_sd * start[:3]
    x0[2] = gpre[2] - abs(operator.start_offset_sd * start[2])  # start behind the skin
    x0[3:5] = rot_perc[:2] + math.radians(operator.start_ang_sd) * start[3:5]
    x0[5] = 0.0

    final, t_press, traj = _kernels.simulate(prm, x0, noise, int(record_every))

    frame = task.plan_frame(cfg.needle_length)
    r = frame.rotation
    base = frame.apply(final[:3])
    needle_rot = r @ rotvec_to_matrix(final[3:6])
    plan = PathSpec(frame.apply([0.0, 0.0, task.depth]), cfg.needle_length * task.axis)
    obs = NeedleObservation(base, cfg.needle_length * needle_rot[:, 2])
    e_t, e_o = path_errors(plan, obs, anchor=cfg.anchor)
    result = TrialResult(mode, e_t, e_o, float(final[12]), int(seed))

    out = traj.copy()
    if len(out):
        out[:, 1:4] = frame.apply(traj[:, 1:4])
        out[:, 4:7] = [matrix_to_rotvec(r @ rotvec_to_matrix(rv)) for rv in traj[:, 4:7]]
        out[:, 7:10] = traj[:, 7:10] @ r.T
        out[:, 10:13] = traj[:, 10:13] @ r.T
    final_state = SimState(
        np.concatenate([base, matrix_to_rotvec(needle_rot)]),
        np.concatenate([r @ final[6:9], r @ final[9:12]]),
        float(final[12]),
    )
    return InsertionOutcome(result, out, float(t_press), final_state)
