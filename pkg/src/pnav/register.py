"""Fiducial-based rigid registration and its RMS error evaluation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningWarning, DegenerateGeometry, EmptyBlock, InvalidValue, MismatchedSets
from .geom import RigidTransform

COLLINEAR_RATIO = 1e-9


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float)
    return math.sqrt(float(np.mean(e * e)))


@dataclass(frozen=True, eq=False)
class FiducialSet:
    """Named 3D points (mm) expressed in ``frame``.

    Correspondence between two sets is always by name, never by order
    or proximity.
    """

    frame: str
    names: tuple
    points: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not names:
            raise InvalidValue("fiducial set needs at least one point")
        if len(set(names)) != len(names):
            raise InvalidValue("fiducial names must be unique")
        if len(names) != len(pts):
            raise InvalidValue(f"{len(names)} names for {len(pts)} points")
        if not np.all(np.isfinite(pts)):
            raise InvalidValue("fiducial coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_dict(cls, frame: str, points: dict) -> "FiducialSet":
        return cls(frame, tuple(points), np.array(list(points.values())))

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.points[self.names.index(name)]

    def as_dict(self) -> dict:
        return {n: p.copy() for n, p in zip(self.names, self.points)}

    def matched(self, other: "FiducialSet") -> tuple[np.ndarray, np.ndarray]:
        """Point arrays of ``self`` and ``other`` aligned by name (self's order)."""
        if set(self.names) != set(other.names):
            missing = sorted(set(self.names) ^ set(other.names))
            raise MismatchedSets(f"fiducial names differ: {missing}")
        idx = {n: i for i, n in enumerate(other.names)}
        return self.points, other.points[[idx[n] for n in self.names]]

    def subset(self, names) -> "FiducialSet":
        return FiducialSet(self.frame, tuple(names), np.array([self[n] for n in names]))

    def transformed(self, t: RigidTransform, frame: str) -> "FiducialSet":
        return FiducialSet(frame, self.names, t.apply(self.points))


@dataclass(frozen=True, eq=False)
class ProbeSampleBlock:
    """Repeated tracker readings of the probe tip resting on one fiducial."""

    target_name: str
    samples: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).reshape(-1, 3)
        ts = np.array(self.timestamps, dtype=np.int64).reshape(-1)
        if len(s) == 0:
            raise EmptyBlock(f"no samples for {self.target_name!r}")
        if len(ts) != len(s):
            raise InvalidValue("one timestamp per sample required")
        if np.any(np.diff(ts) < 0):
            raise InvalidValue("timestamps must be nondecreasing")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "timestamps", ts)


def average_samples(block: ProbeSampleBlock) -> tuple[np.ndarray, np.ndarray]:
    """Mean probe position and its per-axis sample SD (0 for one sample)."""
    if len(block.samples) == 0:
        raise EmptyBlock(block.target_name)
    mean = block.samples.mean(axis=0)
    if len(block.samples) == 1:
        return mean, np.zeros(3)
    return mean, block.samples.std(axis=0, ddof=1)


def average_blocks(blocks, frame: str) -> FiducialSet:
    names, pts = [], []
    for b in blocks:
        names.append(b.target_name)
        pts.append(average_samples(b)[0])
    return FiducialSet(frame, tuple(names), np.array(pts))


def svd_rigid_fit(src: FiducialSet, dst: FiducialSet) -> RigidTransform:
    """Least-squares rigid transform ``T`` with ``dst ~ T(src)``.

    Centroids are removed, the cross-covariance ``H = sum (s - s0)(d - d0)^T``
    is decomposed as ``U S V^T`` and ``R = V diag(1, 1, sign det(V U^T)) U^T``,
    which rules out reflections. Three points fit exactly but leave no
    redundancy, so a :class:`ConditioningWarning` is issued for N = 3.
    """
    s, d = src.matched(dst)
    if len(s) < 3:
        raise DegenerateGeometry(f"need at least 3 points, got {len(s)}")
    cs, cd = s.mean(axis=0), d.mean(axis=0)
    h = (s - cs).T @ (d - cd)
    u, sv, vt = np.linalg.svd(h)
    if sv[0] <= 0.0 or sv[1] / sv[0] < COLLINEAR_RATIO:
        raise DegenerateGeometry("fiducials are collinear or coincident")
    if len(s) == 3:
        warnings.warn("rigid fit from 3 points has zero redundancy", ConditioningWarning, stacklevel=2)
    v = vt.T
    sign = 1.0 if np.linalg.det(v @ u.T) > 0.0 else -1.0
    r = v @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def fiducial_errors(reference: FiducialSet, measured: FiducialSet, t: RigidTransform) -> np.ndarray:
    """Per-point distances ``|ref_n - T(meas_n)|`` in reference order."""
    ref, meas = reference.matched(measured)
    return np.linalg.norm(ref - t.apply(meas), axis=1)


def rmse_fiducials(reference: FiducialSet, measured: FiducialSet, t: RigidTransform) -> float:
    return rmse(fiducial_errors(reference, measured, t))
