"""CSV and config-file formats.

Column orders (fixed; every file starts with this header row):

    transforms   name,qw,qx,qy,qz,tx,ty,tz
    fiducials    name,x,y,z
    pose pairs   name,robot_qw,robot_qx,robot_qy,robot_qz,robot_tx,robot_ty,robot_tz,
                 tracker_qw,tracker_qx,tracker_qy,tracker_qz,tracker_tx,tracker_ty,tracker_tz
    probe        target_name,timestamp_us,x,y,z
    trials       modality,seed,e_t,e_o,t_total
    stats        modality,metric,n,median,sd
    table1       metric,SM,SG,AM,AG            (cells "median ± sd")
    wilcoxon     metric,group_a,group_b,u,p,stars
    calibration  stage,rmse,median,sd
    trajectory   t,x,y,z,rx,ry,rz,vx,vy,vz,wx,wy,wz,phase
    scores       modality,score                (NASA-TLX ingest)
    frames       seq,timestamp_us,body_id,qw,qx,qy,qz,x,y,z   (replayed pose stream)

Floats are written with 17 significant digits so that re-parsing gives
back the exact binary value. Lengths are mm, angles deg unless noted,
rotations in transform files are unit quaternions with w >= 0.

Files that cannot be parsed raise :class:`CorruptFile`; files that parse
but hold invalid values raise a :class:`PnavError` subclass.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFile, PnavError
from .geom import RigidTransform, UnitQuaternion
from .handeye import PosePair
from .metrics import GroupStats, TrialResult
from .register import FiducialSet, ProbeSampleBlock

QUAT_NORM_TOL = 1e-6

TRANSFORM_COLUMNS = ("qw", "qx", "qy", "qz", "tx", "ty", "tz")
HEADERS = {
    "transforms": ("name",) + TRANSFORM_COLUMNS,
    "fiducials": ("name", "x", "y", "z"),
    "pose_pairs": ("name",) + tuple(f"robot_{c}" for c in TRANSFORM_COLUMNS)
    + tuple(f"tracker_{c}" for c in TRANSFORM_COLUMNS),
    "probe": ("target_name", "timestamp_us", "x", "y", "z"),
    "trials": ("modality", "seed", "e_t", "e_o", "t_total"),
    "stats": ("modality", "metric", "n", "median", "sd"),
    "table1": ("metric", "SM", "SG", "AM", "AG"),
    "wilcoxon": ("metric", "group_a", "group_b", "u", "p", "stars"),
    "calibration": ("stage", "rmse", "median", "sd"),
    "trajectory": ("t", "x", "y", "z", "rx", "ry", "rz", "vx", "vy", "vz", "wx", "wy", "wz", "phase"),
    "scores": ("modality", "score"),
    "frames": ("seq", "timestamp_us", "body_id") + TRANSFORM_COLUMNS[:4] + ("x", "y", "z"),
}
PM = " ± "


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _write(path, header, rows) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _read(path, header) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except (UnicodeDecodeError, csv.Error) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not rows:
        raise CorruptFile(f"{path}: empty file, expected header {','.join(header)}")
    got = tuple(c.strip() for c in rows[0])
    if got != tuple(header):
        raise CorruptFile(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise CorruptFile(f"{path}:{i}: expected {len(header)} columns, got {len(r)}")
    return [[c.strip() for c in r] for r in rows[1:]]


def _floats(path, cells) -> list[float]:
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def _transform_cells(t: RigidTransform) -> list[str]:
    q = t.quaternion
    return [fmt(v) for v in (q.w, q.x, q.y, q.z, *t.translation)]


def _transform_from(vals) -> RigidTransform:
    q = np.asarray(vals[:4], dtype=float)
    n = float(np.linalg.norm(q))
    if not math.isfinite(n) or abs(n - 1.0) > QUAT_NORM_TOL:
        raise PnavError(f"quaternion norm {n} is not 1")
    quat = UnitQuaternion.from_components(*q)
    return RigidTransform(quat.to_matrix(), vals[4:7])


def write_transforms(path, items) -> None:
    """``items``: iterable of (name, RigidTransform)."""
    _write(path, HEADERS["transforms"], ([name, *_transform_cells(t)] for name, t in items))


def read_transforms(path) -> list[tuple[str, RigidTransform]]:
    return [(r[0], _transform_from(_floats(path, r[1:]))) for r in _read(path, HEADERS["transforms"])]


def write_fiducials(path, fs: FiducialSet) -> None:
    _write(path, HEADERS["fiducials"], ([n, *(fmt(v) for v in p)] for n, p in zip(fs.names, fs.points)))


def read_fiducials(path, frame: str = "file") -> FiducialSet:
    rows = _read(path, HEADERS["fiducials"])
    if not rows:
        raise PnavError(f"{path}: no fiducials")
    return FiducialSet(frame, tuple(r[0] for r in rows), np.array([_floats(path, r[1:]) for r in rows]))


def write_pose_pairs(path, pairs) -> None:
    rows = (
        [f"P{i + 1:03d}", *_transform_cells(p.robot_tcp), *_transform_cells(p.tracker_ref)]
        for i, p in enumerate(pairs)
    )
    _write(path, HEADERS["pose_pairs"], rows)


def read_pose_pairs(path) -> list[PosePair]:
    out = []
    for r in _read(path, HEADERS["pose_pairs"]):
        v = _floats(path, r[1:])
        out.append(PosePair(_transform_from(v[:7]), _transform_from(v[7:])))
    return out


def write_probe_samples(path, blocks) -> None:
    rows = []
    for b in blocks:
        for ts, p in zip(b.timestamps, b.samples):
            rows.append([b.target_name, str(int(ts)), *(fmt(v) for v in p)])
    _write(path, HEADERS["probe"], rows)


def read_probe_samples(path) -> list[ProbeSampleBlock]:
    """Samples grouped by target name, in order of first appearance."""
    groups: dict[str, tuple[list, list]] = {}
    for r in _read(path, HEADERS["probe"]):
        try:
            ts = int(r[1])
        except ValueError as exc:
            raise CorruptFile(f"{path}: bad timestamp {r[1]!r}") from exc
        s, t = groups.setdefault(r[0], ([], []))
        s.append(_floats(path, r[2:]))
        t.append(ts)
    return [ProbeSampleBlock(name, np.array(s), np.array(t)) for name, (s, t) in groups.items()]


def write_trials(path, trials) -> None:
    rows = ([t.modality.value, fmt(int(t.seed)), fmt(t.e_t), fmt(t.e_o), fmt(t.t_total)] for t in trials)
    _write(path, HEADERS["trials"], rows)


def read_trials(path) -> list[TrialResult]:
    out = []
    for r in _read(path, HEADERS["trials"]):
        e_t, e_o, t_total = _floats(path, r[2:])
        try:
            seed = int(r[1])
        except ValueError as exc:
            raise CorruptFile(f"{path}: bad seed {r[1]!r}") from exc
        try:
            out.append(TrialResult(r[0], e_t, e_o, t_total, seed))
        except ValueError as exc:
            raise PnavError(f"{path}: {exc}") from exc
    return out


def write_stats(path, stats) -> None:
    rows = ([s.modality, s.metric, fmt(int(s.n)), fmt(s.median), fmt(s.sd)] for s in stats)
    _write(path, HEADERS["stats"], rows)


def read_stats(path) -> list[GroupStats]:
    out = []
    for r in _read(path, HEADERS["stats"]):
        median, sd = _floats(path, r[3:])
        out.append(GroupStats(r[0], r[1], int(_floats(path, [r[2]])[0]), median, sd))
    return out


def write_table1(path, stats) -> None:
    """Table-I layout at full precision; one row per metric, blank cells
    for modalities that were not run."""
    by = {(s.modality, s.metric): s for s in stats}
    metrics = list(dict.fromkeys(s.metric for s in stats))
    rows = []
    for metric in metrics:
        cells = []
        for m in HEADERS["table1"][1:]:
            s = by.get((m, metric))
            cells.append("" if s is None else f"{fmt(s.median)}{PM}{fmt(s.sd)}")
        rows.append([metric, *cells])
    _write(path, HEADERS["table1"], rows)


def read_table1(path) -> dict:
    """``{(modality, metric): (median, sd)}`` for every non-empty cell."""
    out = {}
    mods = HEADERS["table1"][1:]
    for r in _read(path, HEADERS["table1"]):
        for m, cell in zip(mods, r[1:]):
            if not cell:
                continue
            parts = cell.split("±")
            if len(parts) != 2:
                raise CorruptFile(f"{path}: bad cell {cell!r}")
            out[(m, r[0])] = tuple(_floats(path, parts))
    return out


def write_wilcoxon(path, tests) -> None:
    rows = ([t.metric, t.group_a, t.group_b, fmt(t.u), fmt(t.p), t.stars] for t in tests)
    _write(path, HEADERS["wilcoxon"], rows)


def read_wilcoxon(path) -> list[tuple[str, str, str, float, float, str]]:
    return [(r[0], r[1], r[2], *_floats(path, r[3:5]), r[5]) for r in _read(path, HEADERS["wilcoxon"])]


def write_calibration(path, report) -> None:
    _write(path, HEADERS["calibration"], ([name, fmt(a), fmt(b), fmt(c)] for name, a, b, c in report.rows()))


def read_calibration(path) -> list[tuple[str, float, float, float]]:
    return [(r[0], *_floats(path, r[1:])) for r in _read(path, HEADERS["calibration"])]


def write_trajectory(path, traj) -> None:
    traj = np.asarray(traj, dtype=float).reshape(-1, len(HEADERS["trajectory"]))
    _write(path, HEADERS["trajectory"], ([fmt(v) for v in row] for row in traj))


def read_trajectory(path) -> np.ndarray:
    rows = _read(path, HEADERS["trajectory"])
    return np.array([_floats(path, r) for r in rows], dtype=float).reshape(-1, len(HEADERS["trajectory"]))


def write_scores(path, groups: dict) -> None:
    _write(path, HEADERS["scores"], ([name, fmt(v)] for name, vals in groups.items() for v in vals))


def read_scores(path) -> dict:
    """Free-form scores (e.g. NASA-TLX) grouped by their first column."""
    out: dict[str, list[float]] = {}
    for r in _read(path, HEADERS["scores"]):
        out.setdefault(r[0], []).append(_floats(path, [r[1]])[0])
    return out


def write_frames(path, frames) -> None:
    rows = ([str(f.seq), str(f.timestamp_us), str(f.body_id), *(fmt(v) for v in f.quaternion.as_tuple()),
             *(fmt(v) for v in f.position)] for f in frames)
    _write(path, HEADERS["frames"], rows)


def read_frames(path) -> list[tuple[int, int, int, UnitQuaternion, tuple]]:
    out = []
    for r in _read(path, HEADERS["frames"]):
        try:
            ids = [int(v) for v in r[:3]]
        except ValueError as exc:
            raise CorruptFile(f"{path}: non-integer id field in {r[:3]!r}") from exc
        vals = _floats(path, r[3:])
        out.append((*ids, UnitQuaternion(*vals[:4]), tuple(vals[4:])))
    return out


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{i}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{i}: duplicate key {key!r}")
        out[key] = value
    return out


def write_config(path, mapping: dict) -> None:
    lines = []
    for k, v in mapping.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (int, float, np.floating)):
            v = fmt(v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
