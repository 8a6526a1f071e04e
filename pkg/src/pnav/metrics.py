"""Needle-path errors, per-modality aggregation and the Wilcoxon rank-sum test."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .errors import EmptyGroup, EmptySample, InvalidValue, ZeroVector

MIN_NORM = 1e-6  # mm
EXACT_LIMIT = 20  # n_a + n_b at or below which the exact null is used
EXACT_MAX = 60  # int64 subset counts stay exact up to C(60, 30)


class Modality(str, enum.Enum):
    """Visualization x control condition of a trial."""

    SM = "SM"  # 2D screen, manual insertion
    SG = "SG"  # 2D screen, robot guidance
    AM = "AM"  # AR headset, manual insertion
    AG = "AG"  # AR headset, robot guidance

    @property
    def guided(self) -> bool:
        return self in (Modality.SG, Modality.AG)

    @property
    def augmented(self) -> bool:
        return self in (Modality.AM, Modality.AG)


MODALITY_ORDER = (Modality.SM, Modality.SG, Modality.AM, Modality.AG)
METRICS = ("e_t", "e_o", "t_total")


def _vec(v, what) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise InvalidValue(f"{what} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class PathSpec:
    """Planned needle path: ``entry`` and the entry->target vector ``v_p`` (mm)."""

    entry: np.ndarray
    v_p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entry", _vec(self.entry, "entry"))
        object.__setattr__(self, "v_p", _vec(self.v_p, "v_p"))
        if np.linalg.norm(self.v_p) <= MIN_NORM:
            raise ZeroVector("planned needle vector is (near) zero")

    @classmethod
    def from_points(cls, entry, target) -> "PathSpec":
        entry = np.asarray(entry, dtype=float)
        return cls(entry, np.asarray(target, dtype=float) - entry)

    @property
    def target(self) -> np.ndarray:
        return self.entry + self.v_p

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.v_p))

    @property
    def direction(self) -> np.ndarray:
        return self.v_p / self.length


@dataclass(frozen=True, eq=False)
class NeedleObservation:
    """Real needle: end-effector point ``base`` and base->tip vector ``v_r`` (mm)."""

    base: np.ndarray
    v_r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", _vec(self.base, "base"))
        object.__setattr__(self, "v_r", _vec(self.v_r, "v_r"))
        if np.linalg.norm(self.v_r) <= MIN_NORM:
            raise ZeroVector("real needle vector is (near) zero")


@dataclass(frozen=True)
class TrialResult:
    modality: Modality
    e_t: float  # mm
    e_o: float  # deg
    t_total: float  # s
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if not self.e_t >= 0.0:
            raise InvalidValue("e_t must be >= 0")
        if not 0.0 <= self.e_o <= 180.0:
            raise InvalidValue("e_o must lie in [0, 180]")
        if not self.t_total >= 0.0:
            raise InvalidValue("t_total must be >= 0")

    def value(self, metric: str) -> float:
        return float(getattr(self, metric))


def path_errors(plan: PathSpec, obs: NeedleObservation, anchor: str = "base") -> tuple[float, float]:
    """Translation error (mm) and orientation error (deg) of a needle path.

    The orientation error is the angle between ``v_p`` and ``v_r``. The tip
    is projected onto the real needle, ``P = origin + |v_p| cos(E_O) v_r/|v_r|``,
    and ``E_T = |P - T|`` with ``T`` the planned target. ``anchor`` selects
    the origin of the projection: the observed end-effector point
    (``"base"``) or the planned entry (``"entry"``); the two coincide when
    the needle starts where the plan does.
    """
    vp, vr = plan.v_p, obs.v_r
    np_, nr = np.linalg.norm(vp), np.linalg.norm(vr)
    if np_ <= MIN_NORM or nr <= MIN_NORM:
        raise ZeroVector("needle vectors must be nonzero")
    dot = float(vp @ vr)
    # atan2 keeps full precision at small angles, where acos does not
    e_o = math.degrees(math.atan2(float(np.linalg.norm(np.cross(vp, vr))), dot))
    if anchor == "base":
        origin = obs.base
    elif anchor == "entry":
        origin = plan.entry
    else:
        raise InvalidValue(f"unknown anchor {anchor!r}")
    p = origin + (dot / (np_ * nr)) * np_ * (vr / nr)
    return float(np.linalg.norm(p - plan.target)), e_o


@dataclass(frozen=True)
class GroupStats:
    modality: str
    metric: str
    n: int
    median: float
    sd: float

    def formatted(self, digits: int = 2) -> str:
        return f"{self.median:.{digits}f} ± {self.sd:.{digits}f}"


def lower_median(values) -> float:
    v = sorted(float(x) for x in values)
    if not v:
        raise EmptyGroup("median of an empty group")
    return v[(len(v) - 1) // 2]


def sample_sd(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) < 2:
        return 0.0
    return float(np.std(v, ddof=1))


def aggregate(trials, modalities=None, metrics=METRICS) -> list[GroupStats]:
    """Lower median and sample SD per modality and metric.

    Rows come out modality-major in canonical order, so the result does
    not depend on the order of ``trials``.
    """
    trials = list(trials)
    if not trials:
        raise EmptyGroup("no trials to aggregate")
    groups: dict[str, list] = {}
    for t in trials:
        groups.setdefault(Modality(t.modality).value, []).append(t)
    if modalities is None:
        wanted = [m.value for m in MODALITY_ORDER if m.value in groups]
    else:
        wanted = [Modality(m).value for m in modalities]
    rows = []
    for m in wanted:
        group = groups.get(m)
        if not group:
            raise EmptyGroup(f"no trials for modality {m}")
        for metric in metrics:
            vals = [t.value(metric) for t in group]
            rows.append(GroupStats(m, metric, len(vals), lower_median(vals), sample_sd(vals)))
    return rows


def aggregate_scores(groups: dict) -> list[GroupStats]:
    """Same statistics for free-form scores (e.g. ingested NASA-TLX data)."""
    rows = []
    for name, vals in groups.items():
        if len(vals) == 0:
            raise EmptyGroup(f"no scores for {name}")
        rows.append(GroupStats(str(name), "score", len(vals), lower_median(vals), sample_sd(vals)))
    return rows


@dataclass(frozen=True)
class RankSumResult:
    u: float  # Mann-Whitney U of the first sample
    p: float  # two-sided
    method: str  # "exact" or "asymptotic"


def _doubled_midranks(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mid-ranks times two (always integers) and tie-group sizes."""
    order = np.argsort(pooled, kind="mergesort")
    sorted_vals = pooled[order]
    ranks2 = np.empty(len(pooled), dtype=np.int64)
    ties = []
    i = 0
    n = len(pooled)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # positions i..j (0-based) share mid-rank ((i+1) + (j+1)) / 2
        ranks2[order[i : j + 1]] = i + j + 2
        ties.append(j - i + 1)
        i = j + 1
    return ranks2, np.array(ties)


def ranksum_null_counts(ranks2, n_a: int) -> np.ndarray:
    """Number of size-``n_a`` subsets of ``ranks2`` with each possible sum.

    Entry ``s`` of the result counts subsets whose doubled-rank sum is ``s``.
    Dynamic programming over items; equivalent to full enumeration.
    """
    ranks2 = [int(r) for r in ranks2]
    total = sum(ranks2)
    counts = np.zeros((n_a + 1, total + 1), dtype=np.int64)
    counts[0, 0] = 1
    for r in ranks2:
        # descending k so each item is used at most once
        for k in range(n_a, 0, -1):
            counts[k, r:] += counts[k - 1, : total + 1 - r]
    return counts[n_a]


def wilcoxon_ranksum(a, b, method: str = "auto") -> RankSumResult:
    """Two-sided Wilcoxon rank-sum (Mann-Whitney) test.

    Ties get mid-ranks. ``method="auto"`` uses the exact permutation null,
    conditional on the observed ties, when ``len(a) + len(b) <= 20`` and the
    normal approximation with tie and continuity corrections otherwise.
    The exact two-sided p-value is ``P(|W - E W| >= |w - E W|)``.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise EmptySample("both samples need at least one value")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidValue("samples must be finite")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    ranks2, ties = _doubled_midranks(np.concatenate([a, b]))
    w2 = int(ranks2[:n_a].sum())
    u = w2 / 2.0 - n_a * (n_a + 1) / 2.0

    if method == "auto":
        method = "exact" if n <= EXACT_LIMIT else "asymptotic"
    if method == "exact":
        if n > EXACT_MAX:
            raise InvalidValue(f"exact null limited to n_a + n_b <= {EXACT_MAX}")
        counts = ranksum_null_counts(ranks2, n_a)
        centre = n_a * (n + 1)  # mean of the doubled-rank sum
        dev = abs(w2 - centre)
        sums = np.arange(len(counts))
        extreme = int(counts[np.abs(sums - centre) >= dev].sum())
        p = float(Fraction(extreme, comb(n, n_a)))
        return RankSumResult(u, min(p, 1.0), "exact")
    if method != "asymptotic":
        raise InvalidValue(f"unknown method {method!r}")

    mu = n_a * n_b / 2.0
    tie_term = float(np.sum(ties**3 - ties)) / (n * (n - 1)) if n > 1 else 0.0
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        return RankSumResult(u, 1.0, "asymptotic")
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return RankSumResult(u, min(math.erfc(z / math.sqrt(2.0)), 1.0), "asymptotic")


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"
