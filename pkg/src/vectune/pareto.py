"""Two-objective Pareto machinery (both objectives maximized).

Points are ``(speed, recall)`` pairs. Functions accept :class:`ObjectiveVector`
instances, plain tuples, or ``(n, 2)`` arrays interchangeably.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ObjectiveVector(NamedTuple):
    speed: float
    recall: float
    memory: float | None = None


class NormalizedObjective(NamedTuple):
    speed: float
    recall: float


class BaselineAnchor(NamedTuple):
    speed: float
    recall: float


class ReferencePoint(NamedTuple):
    speed: float
    recall: float


def as_points(points) -> np.ndarray:
    """Coerce a collection of 2-D points to a float array of shape ``(n, 2)``."""
    if isinstance(points, np.ndarray):
        arr = points.astype(float, copy=False)
        return arr.reshape(-1, arr.shape[-1])[:, :2] if arr.size else np.empty((0, 2))
    pts = [(float(p[0]), float(p[1])) for p in points]
    return np.array(pts, dtype=float).reshape(-1, 2)


def dominates(a, b) -> bool:
    return (a[0] >= b[0] and a[1] >= b[1]) and (a[0] > b[0] or a[1] > b[1])


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of non-dominated points; among exact duplicates only the first survives.

    O(n log n): sort by speed (desc), recall (desc), position (asc) and keep a
    point iff its recall beats the running maximum of everything before it.
    """
    P = as_points(points)
    n = len(P)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    order = np.lexsort((np.arange(n), -P[:, 1], -P[:, 0]))
    rec = P[order, 1]
    best_before = np.concatenate(([-np.inf], np.maximum.accumulate(rec)[:-1]))
    mask[order] = rec > best_before
    return mask


def nondominated_front(points: Sequence) -> list:
    """The non-dominated subset of ``points`` in input order."""
    if isinstance(points, np.ndarray):
        return list(points[nondominated_mask(points)])
    points = list(points)
    mask = nondominated_mask(points)
    return [p for p, keep in zip(points, mask) if keep]


def hypervolume_2d(front, ref) -> float:
    """Area dominated by ``front`` and bounded below by ``ref`` (sort-and-sweep)."""
    P = as_points(front)
    rx, ry = float(ref[0]), float(ref[1])
    P = P[(P[:, 0] > rx) & (P[:, 1] > ry)]
    if len(P) == 0:
        return 0.0
    P = P[np.lexsort((-P[:, 1], -P[:, 0]))]
    hv, level = 0.0, ry
    for s, r in P:
        if r > level:
            hv += (s - rx) * (r - level)
            level = r
    return float(hv)


def hv_improvement(front, ref, z) -> np.ndarray:
    """Hypervolume gained by adding each row of ``z`` (shape ``(m, 2)``) to ``front`` alone.

    Vectorized over ``z``: the front's attained region is a staircase, so the
    gain is a sum over the staircase's vertical strips of
    ``width * max(0, z_recall - strip_height)``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    rx, ry = float(ref[0]), float(ref[1])
    P = as_points(front)
    P = P[(P[:, 0] > rx) & (P[:, 1] > ry)]
    P = P[nondominated_mask(P)]
    P = P[np.argsort(P[:, 0], kind="stable")]
    # Strip j spans (left_j, right_j] at staircase height h_j; heights fall with j
    # and the last strip (height ry) is open-ended. A sample (zx, zy) gains
    # (right_j - left_j) * (zy - h_j) on every full strip with h_j < zy and
    # left_j < zx, plus a partial share of the strip containing zx.
    left = np.concatenate(([rx], P[:, 0]))
    height = np.concatenate((P[:, 1], [ry]))
    width = np.diff(left)
    cw = np.concatenate(([0.0], np.cumsum(width)))
    cwh = np.concatenate(([0.0], np.cumsum(width * height[:-1])))
    zx, zy = z[:, 0], z[:, 1]
    last = np.searchsorted(left, zx, side="left") - 1      # last strip with left_j < zx
    first = np.searchsorted(-height, -zy, side="right")   # first strip with h_j < zy
    ok = (last >= first) & (last >= 0)
    lo = np.minimum(first, last.clip(0))
    hi = last.clip(0)
    full = zy * (cw[hi] - cw[lo]) - (cwh[hi] - cwh[lo])
    part = (zx - left[hi]) * (zy - height[hi])
    return np.where(ok, full + part, 0.0)


def balanced_gaps(front_objs) -> np.ndarray:
    """``|speed/max_speed - recall/max_recall|`` for every point."""
    P = as_points(front_objs)
    return np.abs(P[:, 0] / P[:, 0].max() - P[:, 1] / P[:, 1].max())


def balanced_anchor(front_objs) -> BaselineAnchor:
    """The most balanced point of a front.

    Picks the point whose speed and recall, each relative to the front's
    maximum, are closest to each other. A zero gap wins outright; ties go to
    the larger relative sum, then to the first occurrence.
    """
    P = as_points(front_objs)
    if len(P) == 0:
        raise ValueError("balanced_anchor of an empty front")
    smax, rmax = P[:, 0].max(), P[:, 1].max()
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = P[:, 0] / smax if smax != 0 else np.zeros(len(P))
        rr = P[:, 1] / rmax if rmax != 0 else np.zeros(len(P))
    gaps = np.abs(rs - rr)
    sums = rs + rr
    best = 0
    for i in range(1, len(P)):
        if gaps[i] < gaps[best] or (gaps[i] == gaps[best] and sums[i] > sums[best]):
            best = i
    return BaselineAnchor(float(P[best, 0]), float(P[best, 1]))


def normalize_npi(y, anchor) -> NormalizedObjective:
    if anchor[0] <= 0 or anchor[1] <= 0:
        raise ValueError(f"degenerate anchor {tuple(anchor)}")
    return NormalizedObjective(float(y[0]) / anchor[0], float(y[1]) / anchor[1])


def normalize_many(Y, anchor) -> np.ndarray:
    if anchor[0] <= 0 or anchor[1] <= 0:
        raise ValueError(f"degenerate anchor {tuple(anchor)}")
    return as_points(Y) / np.array([anchor[0], anchor[1]], dtype=float)


@dataclass
class Entry:
    config: Any
    objective: ObjectiveVector
    index_type: str


@dataclass
class ParetoArchive:
    """Per-index-type and global non-dominated sets, maintained incrementally."""

    per_type: dict[str, list[Entry]] = field(default_factory=dict)
    global_front: list[Entry] = field(default_factory=list)

    @staticmethod
    def _insert(front: list[Entry], entry: Entry) -> bool:
        y = entry.objective
        for e in front:
            if dominates(e.objective, y) or (e.objective[0] == y[0] and e.objective[1] == y[1]):
                return False
        front[:] = [e for e in front if not dominates(y, e.objective)]
        front.append(entry)
        return True

    def add(self, config, objective: ObjectiveVector, index_type: str) -> None:
        entry = Entry(config, objective, index_type)
        self._insert(self.per_type.setdefault(index_type, []), entry)
        self._insert(self.global_front, entry)

    def type_front(self, index_type: str) -> list[Entry]:
        return self.per_type.get(index_type, [])

    def type_points(self, index_type: str) -> np.ndarray:
        return as_points([e.objective for e in self.type_front(index_type)])

    def global_points(self) -> np.ndarray:
        return as_points([e.objective for e in self.global_front])

    @classmethod
    def from_observations(cls, observations: Iterable[tuple[Any, ObjectiveVector, str]]) -> "ParetoArchive":
        archive = cls()
        for config, y, t in observations:
            archive.add(config, y, t)
        return archive
