"""Candidate scoring and next-configuration recommendation.

Two modes:

* ``ehvi`` -- Monte Carlo expected hypervolume improvement against the polled
  index type's own front, with everything expressed in that type's normalized
  (ratio-to-anchor) units.
* ``constrained_ei`` -- expected improvement in speed times the probability of
  the recall constraint holding.

Candidates are random draws from the polled type's region; the argmax wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

from . import space as sp
from .pareto import (BaselineAnchor, ParetoArchive, ReferencePoint, as_points, balanced_anchor,
                     hv_improvement, hypervolume_2d, nondominated_front)
from .surrogate import SurrogateModel

log = logging.getLogger(__name__)

EHVI = "ehvi"
CONSTRAINED_EI = "constrained_ei"

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcquisitionContext:
    mode: str = EHVI
    mc_samples: int = 128
    candidate_count: int = 1024
    seed: int = 0
    ref_scale: float = 0.5

    def __post_init__(self):
        if self.mode not in (EHVI, CONSTRAINED_EI):
            raise ValueError(f"unknown acquisition mode {self.mode!r}")
        if self.mc_samples < 1 or self.candidate_count < 1:
            raise ValueError("mc_samples and candidate_count must be >= 1")
        if not 0.0 < self.ref_scale < 1.0:
            raise ValueError("ref_scale must lie in (0, 1)")


@dataclass(frozen=True)
class ConstraintSpec:
    rlim: float
    best_feasible: float | None = None  # raw incumbent speed, filled by the tuner

    def __post_init__(self):
        if not 0.0 < self.rlim < 1.0:
            raise ValueError("rlim must lie strictly inside (0, 1)")


def reference_point(anchor: BaselineAnchor, ref_scale: float, normalized: bool = True) -> ReferencePoint:
    """``ref_scale`` times the anchor; in normalized units the anchor is (1, 1)."""
    if normalized:
        return ReferencePoint(ref_scale, ref_scale)
    return ReferencePoint(ref_scale * anchor[0], ref_scale * anchor[1])


# -- EHVI ---------------------------------------------------------------------------


def ehvi_mc_batch(means, variances, front, ref, mc_samples: int, seed: int) -> np.ndarray:
    """Monte Carlo EHVI for many candidates sharing one set of standard-normal draws."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    sds = np.sqrt(np.maximum(np.atleast_2d(np.asarray(variances, dtype=float)), 0.0))
    eps = np.random.default_rng(seed).standard_normal((mc_samples, 2))
    m = len(means)
    out = np.empty(m)
    chunk = max(1, 262144 // mc_samples)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        z = means[lo:hi, None, :] + sds[lo:hi, None, :] * eps[None, :, :]
        gain = hv_improvement(front, ref, z.reshape(-1, 2))
        out[lo:hi] = gain.reshape(hi - lo, mc_samples).mean(axis=1)
    return out


def ehvi_mc(mean, variance, front, ref, mc_samples: int, seed: int) -> float:
    mean = np.asarray(mean, dtype=float).ravel()
    variance = np.asarray(variance, dtype=float).ravel()
    if np.all(variance == 0.0):
        # Every draw equals the mean.
        P = as_points(front)
        merged = nondominated_front(np.vstack([P, mean[None, :2]]))
        return max(hypervolume_2d(merged, ref) - hypervolume_2d(P, ref), 0.0)
    return float(ehvi_mc_batch(mean[None, :2], variance[None, :2], front, ref, mc_samples, seed)[0])


# -- constrained EI -------------------------------------------------------------------


def _log_h(z: np.ndarray) -> np.ndarray:
    """log(z * Phi(z) + phi(z)), stable for very negative z."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    big = z > -1.0
    zb = z[big]
    out[big] = np.log(zb * ndtr(zb) + _INV_SQRT_2PI * np.exp(-0.5 * zb * zb))
    zs = -z[~big]
    # phi(z) * (1 - |z| * Phi(z)/phi(z)), with Phi(z)/phi(z) = sqrt(pi/2) * erfcx(|z|/sqrt2)
    inner = 1.0 - zs * math.sqrt(math.pi / 2.0) * erfcx(zs / math.sqrt(2.0))
    asym = 1.0 / (zs * zs)  # leading term once cancellation sets in
    inner = np.where(zs > 1e4, asym, np.maximum(inner, 1e-300))
    out[~big] = math.log(_INV_SQRT_2PI) - 0.5 * zs * zs + np.log(inner)
    return out


def log_cei(means, variances, rlim_n: float, best_f: float) -> np.ndarray:
    """Log of :func:`cei` for many candidates; finite wherever the variances are positive."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    mu_s, mu_r = means[:, 0], means[:, 1]
    s = np.sqrt(np.maximum(variances[:, 0], 0.0))
    sr = np.sqrt(np.maximum(variances[:, 1], 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ei = np.where(s > 0, np.log(s) + _log_h((mu_s - best_f) / np.where(s > 0, s, 1.0)),
                          np.log(np.maximum(mu_s - best_f, 0.0)))
        log_pf = np.where(sr > 0, log_ndtr((mu_r - rlim_n) / np.where(sr > 0, sr, 1.0)),
                          np.where(mu_r > rlim_n, 0.0, -np.inf))
    return log_ei + log_pf


def cei(mean, variance, rlim_n: float, best_f: float) -> float:
    """Expected speed improvement over ``best_f`` times Pr(recall > ``rlim_n``)."""
    mean = np.asarray(mean, dtype=float).ravel()
    variance = np.asarray(variance, dtype=float).ravel()
    s = math.sqrt(max(variance[0], 0.0))
    if s > 0:
        g = (mean[0] - best_f) / s
        ei = s * (g * float(ndtr(g)) + _INV_SQRT_2PI * math.exp(-0.5 * g * g))
    else:
        ei = max(mean[0] - best_f, 0.0)
    sr = math.sqrt(max(variance[1], 0.0))
    if sr > 0:
        pf = float(ndtr((mean[1] - rlim_n) / sr))
    else:
        pf = 1.0 if mean[1] > rlim_n else 0.0
    return max(ei, 0.0) * pf


# -- recommendation -----------------------------------------------------------------


def _usable(anchor) -> bool:
    return anchor is not None and anchor[0] > 0 and anchor[1] > 0


def best_feasible_speed(points, rlim: float) -> float | None:
    P = as_points(points)
    feasible = P[P[:, 1] > rlim]
    return float(feasible[:, 0].max()) if len(feasible) else None


@dataclass
class Recommendation:
    config: sp.Configuration
    score: float
    index: int
    fallback: str | None = None


def recommend(
    model: SurrogateModel | None,
    space: sp.ConfigSpace,
    archive: ParetoArchive,
    index_type: str,
    ctx: AcquisitionContext,
    constraint: ConstraintSpec | None = None,
    anchors: Mapping[str, BaselineAnchor] | None = None,
) -> Recommendation:
    """Pick the best of ``ctx.candidate_count`` random candidates for ``index_type``.

    ``anchors`` maps index types to the anchors the model's targets were
    normalized with; missing entries are recomputed from ``archive``.
    """
    X = sp.random_candidate_matrix(space, index_type, ctx.candidate_count, ctx.seed)

    anchor = (anchors or {}).get(index_type)
    if anchor is None and archive.type_front(index_type):
        anchor = balanced_anchor(archive.type_points(index_type))
    fallback = None
    if not _usable(anchor):
        anchor = balanced_anchor(archive.global_points()) if archive.global_front else None
        fallback = "global-anchor"
    if model is None or not _usable(anchor):
        log.info("no usable model/anchor for %s; returning a random candidate", index_type)
        return Recommendation(sp.decode(space, X[0]), 0.0, 0, "random")

    means, variances = model.predict(X)
    if ctx.mode == EHVI:
        front = archive.type_points(index_type) / np.array(anchor)
        ref = reference_point(anchor, ctx.ref_scale)
        scores = ehvi_mc_batch(means, variances, front, ref, ctx.mc_samples, ctx.seed + 1)
    else:
        if constraint is None:
            raise ValueError("constrained_ei mode needs a ConstraintSpec")
        incumbent = constraint.best_feasible
        if incumbent is None:
            incumbent = best_feasible_speed(archive.global_points(), constraint.rlim)
        if incumbent is None:
            incumbent = float(archive.global_points()[:, 0].max())
        scores = log_cei(means, variances, constraint.rlim / anchor[1], incumbent / anchor[0])

    best = int(np.argmax(scores))  # first index on ties
    if np.all(scores == scores[0]):
        log.info("all %d candidates for %s tie at %g; taking the first", len(scores), index_type, scores[0])
    return Recommendation(sp.decode(space, X[best]), float(scores[best]), best, fallback)
