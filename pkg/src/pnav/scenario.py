"""Synthetic end-to-end harness: world generation, calibration pipeline and
the four-modality insertion experiment.

Everything is computed against the generated ground truth; fitted values
are never used to grade themselves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from itertools import combinations

import numpy as np

from .errors import ConditioningWarning, ConfigError
from .geom import RigidTransform, compose, invert, random_rotation, rot_z, rotvec_to_matrix, small_perturbation
from .guidance import InsertionTask, OperatorModel, SimConfig, simulate_insertion
from .handeye import PosePair, make_motion_pairs, rmse_e2h, solve_axxb
from .metrics import (
    METRICS,
    MODALITY_ORDER,
    GroupStats,
    Modality,
    PathSpec,
    TrialResult,
    aggregate,
    lower_median,
    sample_sd,
    significance_stars,
    wilcoxon_ranksum,
)
from .register import FiducialSet, ProbeSampleBlock, average_blocks, fiducial_errors, rmse, svd_rigid_fit
from .robot import default_chain, forward_kinematics

N_CONFIGS = 80
PROBE_SAMPLES = 50
PROBE_RATE_HZ = 20.0
N_PHANTOM_FIDUCIALS = 10
N_E2H_MARKERS = 4
N_VERTICES = 20
PHANTOM_RADIUS = 110.0  # mm
PHANTOM_LENGTH = 220.0  # mm

# Tremor standard deviation (mm) that the modality presets are written for;
# ``NoiseConfig.operator_tremor_sd`` scales every operator noise term by
# ``operator_tremor_sd / REFERENCE_TREMOR_SD``.
REFERENCE_TREMOR_SD = 0.5

# Modality presets. These are modelling assumptions, not measurements:
# screen viewing gives larger perception biases, the headset smaller ones
# but a less stable overlay (larger drift during insertion).
SCREEN_OPERATOR = OperatorModel(
    tremor_sd=0.5, tremor_rot_sd=0.1,
    bias_lat=2.5, bias_depth=2.0, bias_ang=1.2,
    drift_lat=3.0, drift_ang=0.8,
)
AR_OPERATOR = OperatorModel(
    tremor_sd=0.5, tremor_rot_sd=0.1,
    bias_lat=1.2, bias_depth=1.5, bias_ang=0.6,
    drift_lat=5.0, drift_ang=2.5,
)

METRIC_LABELS = {"e_t": "E_T (mm)", "e_o": "E_O (deg)", "t_total": "Time (s)"}


@dataclass(frozen=True)
class NoiseConfig:
    tracker_pos_sd: float = 0.25  # mm, per axis
    tracker_rot_sd: float = 0.05  # deg, per axis
    probe_sd: float = 0.25  # mm, per axis
    hologram_drift_sd: float = 1.0  # mm, per axis
    operator_tremor_sd: float = REFERENCE_TREMOR_SD  # mm
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                continue
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError(f"{f.name} must be finite and >= 0")

    @property
    def operator_scale(self) -> float:
        return self.operator_tremor_sd / REFERENCE_TREMOR_SD

    def noiseless(self) -> "NoiseConfig":
        return replace(self, tracker_pos_sd=0.0, tracker_rot_sd=0.0, probe_sd=0.0, hologram_drift_sd=0.0,
                       operator_tremor_sd=0.0)


@dataclass(frozen=True, eq=False)
class WorldTruth:
    """Ground truth of one synthetic scene.

    ``base_from_tracker`` is the hand-eye unknown, ``base_from_phantom`` the
    robot-to-phantom registration and ``hologram_from_phantom`` the pose of
    the QR-defined phantom frame in hologram coordinates. ``tool_offset``
    (flange <- reference tool) is the nuisance eliminated by the hand-eye
    solve. Point sets are in the phantom frame except ``e2h_markers``
    (robot base frame).
    """

    base_from_tracker: RigidTransform
    base_from_phantom: RigidTransform
    hologram_from_phantom: RigidTransform
    tool_offset: RigidTransform
    fiducials: FiducialSet
    qr_markers: FiducialSet
    vertices: FiducialSet
    e2h_markers: FiducialSet
    plan: PathSpec
    seed: int = 0


def _r2_sequence(n: int, shift) -> np.ndarray:
    """Additive-recurrence low-discrepancy points in the unit square."""
    g = 1.32471795724474602596  # plastic number
    alpha = np.array([1.0 / g, 1.0 / (g * g)])
    i = np.arange(1, n + 1)[:, None]
    return np.mod(shift + i * alpha, 1.0)


def phantom_box() -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box of the half-cylinder phantom (phantom frame)."""
    return (np.array([-0.5 * PHANTOM_LENGTH, -PHANTOM_RADIUS, 0.0]),
            np.array([0.5 * PHANTOM_LENGTH, PHANTOM_RADIUS, PHANTOM_RADIUS]))


def gen_world(cfg: NoiseConfig, plan: PathSpec | None = None) -> WorldTruth:
    """Synthesize a scene; deterministic for a fixed ``cfg.seed``.

    The phantom is a half cylinder along x (flat face on z = 0). Its ten
    fiducials are spread over the curved surface by a low-discrepancy
    sequence, the target sits inside, and the planned entry lies on the
    surface above it.
    """
    rng = np.random.default_rng([int(cfg.seed), 0])
    uv = _r2_sequence(N_PHANTOM_FIDUCIALS, rng.uniform(size=2))
    xs = (uv[:, 0] - 0.5) * 0.9 * PHANTOM_LENGTH
    th = (0.08 + 0.84 * uv[:, 1]) * math.pi
    fid = np.column_stack([xs, PHANTOM_RADIUS * np.cos(th), PHANTOM_RADIUS * np.sin(th)])
    fiducials = FiducialSet("phantom", tuple(f"F{i + 1:02d}" for i in range(len(fid))), fid)

    # three QR markers on the base plate, spread around the phantom so the
    # 3-point fit is not dominated by lever-arm error
    qr = np.array([
        [-0.5 * PHANTOM_LENGTH - 20.0, -PHANTOM_RADIUS - 20.0, 0.0],
        [0.5 * PHANTOM_LENGTH + 20.0, -PHANTOM_RADIUS - 20.0, 0.0],
        [0.0, PHANTOM_RADIUS + 20.0, 0.0],
    ]) + rng.uniform(-10.0, 10.0, (3, 3)) * [1.0, 1.0, 0.0]
    qr_markers = FiducialSet("phantom", ("Q1", "Q2", "Q3"), qr)

    # ureter as a gently curved tube through the phantom interior
    s = np.linspace(-1.0, 1.0, N_VERTICES)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    ver = np.column_stack([
        70.0 * s,
        12.0 * np.sin(2.0 * s + phase),
        30.0 + 8.0 * s * s,
    ]) + rng.normal(0.0, 1.0, (N_VERTICES, 3))
    vertices = FiducialSet("phantom", tuple(f"V{i + 1:02d}" for i in range(N_VERTICES)), ver)

    if plan is None:
        target = np.array([rng.uniform(-30.0, 30.0), rng.uniform(-10.0, 10.0), rng.uniform(12.0, 25.0)])
        ang = math.radians(90.0 + rng.uniform(-20.0, 20.0))
        entry = np.array([target[0] + rng.uniform(-10.0, 10.0), PHANTOM_RADIUS * math.cos(ang),
                          PHANTOM_RADIUS * math.sin(ang)])
        plan = PathSpec.from_points(entry, target)
    lo, hi = phantom_box()
    if not (np.all(plan.target >= lo) and np.all(plan.target <= hi)):
        raise ConfigError("plan target lies outside the phantom bounding box")

    base_from_phantom = RigidTransform(rot_z(rng.uniform(-math.pi, math.pi)),
                                       [rng.uniform(450.0, 650.0), rng.uniform(-150.0, 150.0), rng.uniform(-50.0, 50.0)])
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    base_from_tracker = RigidTransform(random_rotation(rng), 1500.0 * direction + [600.0, 0.0, 0.0])
    hologram_from_phantom = RigidTransform(random_rotation(rng), rng.uniform(-500.0, 500.0, 3))
    tool_offset = RigidTransform(rotvec_to_matrix(rng.normal(0.0, 0.3, 3)), [25.0, -10.0, 60.0] + rng.normal(0.0, 5.0, 3))
    e2h = np.column_stack([rng.uniform(350.0, 650.0, N_E2H_MARKERS), rng.uniform(-250.0, 250.0, N_E2H_MARKERS),
                           rng.uniform(0.0, 250.0, N_E2H_MARKERS)])
    e2h_markers = FiducialSet("base", tuple(f"E{i + 1}" for i in range(N_E2H_MARKERS)), e2h)
    return WorldTruth(base_from_tracker, base_from_phantom, hologram_from_phantom, tool_offset, fiducials,
                      qr_markers, vertices, e2h_markers, plan, int(cfg.seed))


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    x_hat: RigidTransform
    base_from_phantom_hat: RigidTransform
    hologram_from_phantom_hat: RigidTransform
    rmse_e2h: float
    rmse_r2p: float
    rmse_h2p: float
    r2p_errors: np.ndarray
    h2p_errors: np.ndarray
    handeye_rotation_residual_deg: float
    handeye_translation_residual_mm: float
    seed: int = 0

    def text(self, digits: int = 2) -> str:
        def stat(e):
            return f"median {lower_median(e):.{digits}f} ± {sample_sd(e):.{digits}f} mm"

        return (
            f"RMSE_E2H = {self.rmse_e2h:.{digits}f} mm\n"
            f"RMSE_R2P = {self.rmse_r2p:.{digits}f} mm ({stat(self.r2p_errors)})\n"
            f"RMSE_H2P = {self.rmse_h2p:.{digits}f} mm ({stat(self.h2p_errors)})\n"
        )

    def rows(self) -> list[tuple[str, float, float, float]]:
        """(name, rmse, median, sd) per stage; E2H has no per-point spread."""
        return [
            ("E2H", self.rmse_e2h, float("nan"), float("nan")),
            ("R2P", self.rmse_r2p, lower_median(self.r2p_errors), sample_sd(self.r2p_errors)),
            ("H2P", self.rmse_h2p, lower_median(self.h2p_errors), sample_sd(self.h2p_errors)),
        ]


def probe_blocks(rng, points: FiducialSet, to_tracker: RigidTransform, sd: float, n: int = PROBE_SAMPLES):
    """Simulated 20 Hz probe readings (tracker frame) resting on each point."""
    blocks = []
    t0 = 0
    step = int(round(1e6 / PROBE_RATE_HZ))
    for name, p in zip(points.names, points.points):
        true = to_tracker.apply(p)
        samples = true + rng.normal(0.0, sd, (n, 3))
        ts = t0 + step * np.arange(n, dtype=np.int64)
        blocks.append(ProbeSampleBlock(name, samples, ts))
        t0 = int(ts[-1]) + 10 * step
    return blocks


def synth_pose_pairs(world: WorldTruth, cfg: NoiseConfig, rng, n: int = N_CONFIGS, chain=None) -> list[PosePair]:
    """Robot/tracker pose pairs from ``n`` random configurations of the arm."""
    chain = default_chain() if chain is None else chain
    x_inv = invert(world.base_from_tracker)
    pairs = []
    for _ in range(n):
        t = forward_kinematics(chain, chain.random_q(rng))
        m = compose(compose(x_inv, t), world.tool_offset)
        noise = small_perturbation(rng, math.radians(cfg.tracker_rot_sd), cfg.tracker_pos_sd)
        pairs.append(PosePair(t, compose(noise, m)))
    return pairs


def run_pipeline(world: WorldTruth, cfg: NoiseConfig, *, n_configs: int = N_CONFIGS, probe_samples: int = PROBE_SAMPLES,
                 all_pairs: bool = False) -> CalibrationReport:
    """Hand-eye calibration, robot-to-phantom and hologram-to-phantom
    registration on simulated measurements, graded against ``world``."""
    rng = np.random.default_rng([int(cfg.seed), 1])
    pairs = synth_pose_pairs(world, cfg, rng, n_configs)
    sol = solve_axxb(make_motion_pairs(pairs, all_pairs=all_pairs))
    x_hat = sol.x
    tracker_from_base = invert(world.base_from_tracker)

    # eye-to-hand check markers: probed by the tracker, known in the base frame
    e2h_blocks = probe_blocks(rng, world.e2h_markers, tracker_from_base, cfg.probe_sd, probe_samples)
    e2h_tracker = average_blocks(e2h_blocks, "tracker")
    e2h = rmse_e2h(e2h_tracker, world.e2h_markers, x_hat)

    # robot-to-phantom: probe fiducials, map by X^, fit, grade against truth
    tracker_from_phantom = compose(tracker_from_base, world.base_from_phantom)
    fid_blocks = probe_blocks(rng, world.fiducials, tracker_from_phantom, cfg.probe_sd, probe_samples)
    fid_base = average_blocks(fid_blocks, "tracker").transformed(x_hat, "base")
    t_bp_hat = svd_rigid_fit(world.fiducials, fid_base)
    fid_true = world.fiducials.transformed(world.base_from_phantom, "base")
    r2p_err = fiducial_errors(fid_true, world.fiducials, t_bp_hat)

    # hologram-to-phantom: three QR points seen by the headset
    qr_holo = world.qr_markers.transformed(world.hologram_from_phantom, "hologram")
    qr_holo = FiducialSet("hologram", qr_holo.names,
                          qr_holo.points + rng.normal(0.0, cfg.hologram_drift_sd, qr_holo.points.shape))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)  # 3 points by design
        t_hp_hat = svd_rigid_fit(world.qr_markers, qr_holo)
    # rendered vertex (hologram frame, via the fit) vs the true vertex, both
    # carried into the tracker frame through the true transforms
    tracker_from_holo = compose(tracker_from_phantom, invert(world.hologram_from_phantom))
    ver_tracker = world.vertices.transformed(tracker_from_phantom, "tracker")
    h2p_err = fiducial_errors(ver_tracker, world.vertices, compose(tracker_from_holo, t_hp_hat))

    return CalibrationReport(
        x_hat, t_bp_hat, t_hp_hat, e2h, rmse(r2p_err), rmse(h2p_err), r2p_err, h2p_err,
        sol.rotation_residual_deg, sol.translation_residual_mm, int(cfg.seed),
    )


@dataclass(frozen=True)
class PairwiseTest:
    metric: str
    group_a: str
    group_b: str
    u: float
    p: float

    @property
    def stars(self) -> str:
        return significance_stars(self.p)


@dataclass
class ExperimentResult:
    trials: list
    stats: list
    tests: list
    presets: dict = field(default_factory=dict)

    def table(self, digits: int = 2) -> list[list[str]]:
        """Table-I layout: one row per metric, one ``median ± sd`` cell per modality."""
        mods = [m for m in (x.value for x in MODALITY_ORDER) if any(s.modality == m for s in self.stats)]
        by = {(s.modality, s.metric): s for s in self.stats}
        rows = [["metric", *mods]]
        for metric in METRICS:
            rows.append([metric, *(by[(m, metric)].formatted(digits) for m in mods)])
        return rows

    def assumptions(self) -> str:
        lines = ["Operator presets (modelling assumptions, not measured values):"]
        for name, op in self.presets.items():
            vals = ", ".join(f"{f.name}={getattr(op, f.name):g}" for f in fields(op))
            lines.append(f"  {name}: {vals}")
        return "\n".join(lines) + "\n"


def operator_presets(cfg: NoiseConfig, screen: OperatorModel = SCREEN_OPERATOR,
                     ar: OperatorModel = AR_OPERATOR) -> dict:
    """Operator model per modality, scaled by the configured tremor level."""
    s, a = screen.scaled(cfg.operator_scale), ar.scaled(cfg.operator_scale)
    return {Modality.SM: s, Modality.SG: s, Modality.AM: a, Modality.AG: a}


def task_from_world(world: WorldTruth) -> InsertionTask:
    """Insertion line in the robot base frame."""
    plan = world.plan
    entry = world.base_from_phantom.apply(plan.entry)
    axis = world.base_from_phantom.apply_vector(plan.direction)
    return InsertionTask(entry, axis / np.linalg.norm(axis), plan.length)


def pairwise_tests(trials, modalities, metrics=METRICS) -> list[PairwiseTest]:
    groups = {}
    for t in trials:
        groups.setdefault(t.modality.value, []).append(t)
    out = []
    for metric in metrics:
        for a, b in combinations(modalities, 2):
            r = wilcoxon_ranksum([t.value(metric) for t in groups[a]], [t.value(metric) for t in groups[b]])
            out.append(PairwiseTest(metric, a, b, r.u, r.p))
    return out


def run_experiment(world: WorldTruth, modalities=None, trials_per_modality: int = 50, cfg: NoiseConfig | None = None,
                   sim: SimConfig | None = None, presets: dict | None = None) -> ExperimentResult:
    """Simulate every modality, aggregate per Table I and test all pairs."""
    cfg = NoiseConfig() if cfg is None else cfg
    sim = SimConfig() if sim is None else sim
    if trials_per_modality < 1:
        raise ConfigError("trials_per_modality must be >= 1")
    try:
        wanted = set(MODALITY_ORDER) if modalities is None else {Modality(m) for m in modalities}
    except ValueError as exc:
        raise ConfigError(f"unknown modality in {modalities!r}") from exc
    if not wanted:
        raise ConfigError("no modalities selected")
    mods = [m for m in MODALITY_ORDER if m in wanted]
    ops = operator_presets(cfg) if presets is None else presets
    task = task_from_world(world)
    trials: list[TrialResult] = []
    for m in mods:
        for i in range(trials_per_modality):
            out = simulate_insertion(m, task, ops[m], cfg.seed, sim, trial=i, record_every=0)
            trials.append(out.result)
    names = [m.value for m in mods]
    stats: list[GroupStats] = aggregate(trials, names)
    tests = pairwise_tests(trials, names) if len(names) > 1 else []
    return ExperimentResult(trials, stats, tests, {m.value: ops[m] for m in mods})


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario config file can set."""

    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    screen: OperatorModel = SCREEN_OPERATOR
    ar: OperatorModel = AR_OPERATOR
    n_configs: int = N_CONFIGS
    probe_samples: int = PROBE_SAMPLES
    all_pairs: bool = False
    trials: int = 50
    modalities: tuple = tuple(m.value for m in MODALITY_ORDER)
    plan_entry: tuple | None = None
    plan_target: tuple | None = None

    def plan(self) -> PathSpec | None:
        if self.plan_entry is None and self.plan_target is None:
            return None
        if self.plan_entry is None or self.plan_target is None:
            raise ConfigError("plan.entry and plan.target must be given together")
        return PathSpec.from_points(self.plan_entry, self.plan_target)

    def presets(self) -> dict:
        return operator_presets(self.noise, self.screen, self.ar)

    @classmethod
    def from_mapping(cls, kv: dict) -> "ScenarioConfig":
        """Build from flat ``key -> text`` pairs (see ``config_keys``)."""
        groups = {"noise": {}, "sim": {}, "screen": {}, "ar": {}}
        top = {}
        simple = {f.name: "noise" for f in fields(NoiseConfig)}
        simple.update({f.name: "sim" for f in fields(SimConfig)})
        for key, raw in kv.items():
            key = key.strip()
            try:
                if "." in key and key.split(".", 1)[0] in ("screen", "ar"):
                    grp, name = key.split(".", 1)
                    if name not in {f.name for f in fields(OperatorModel)}:
                        raise ConfigError(f"unknown config key {key!r}")
                    groups[grp][name] = float(raw)
                elif key in ("plan.entry", "plan.target"):
                    vals = tuple(float(v) for v in raw.replace(",", " ").split())
                    if len(vals) != 3:
                        raise ConfigError(f"{key} needs three numbers")
                    top["plan_" + key.split(".")[1]] = vals
                elif key in simple:
                    grp = simple[key]
                    if key == "seed":
                        groups[grp][key] = int(raw)
                    elif key == "anchor":
                        groups[grp][key] = raw.strip()
                    else:
                        groups[grp][key] = float(raw)
                elif key in ("n_configs", "probe_samples", "trials"):
                    top[key] = int(raw)
                elif key == "all_pairs":
                    top[key] = _parse_bool(raw)
                elif key == "modalities":
                    top[key] = tuple(Modality(m.strip()).value for m in raw.replace(",", " ").split())
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        cfg = cls(
            noise=NoiseConfig(**groups["noise"]),
            sim=SimConfig(**groups["sim"]),
            screen=replace(SCREEN_OPERATOR, **groups["screen"]),
            ar=replace(AR_OPERATOR, **groups["ar"]),
            **top,
        )
        if cfg.n_configs < 3 or cfg.probe_samples < 1 or cfg.trials < 1:
            raise ConfigError("n_configs >= 3, probe_samples >= 1 and trials >= 1 required")
        return cfg

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(NoiseConfig):
            out[f.name] = getattr(self.noise, f.name)
        for f in fields(SimConfig):
            out[f.name] = getattr(self.sim, f.name)
        for grp, op in (("screen", self.screen), ("ar", self.ar)):
            for f in fields(OperatorModel):
                out[f"{grp}.{f.name}"] = getattr(op, f.name)
        out["n_configs"] = self.n_configs
        out["probe_samples"] = self.probe_samples
        out["all_pairs"] = self.all_pairs
        out["trials"] = self.trials
        out["modalities"] = " ".join(self.modalities)
        if self.plan_entry is not None:
            out["plan.entry"] = " ".join(repr(float(v)) for v in self.plan_entry)
            out["plan.target"] = " ".join(repr(float(v)) for v in self.plan_target)
        return out


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")
