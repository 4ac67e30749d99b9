"""Budget allocation across index types: round-robin polling with successive abandonment.

Each iteration every remaining index type is scored by how much hypervolume the
global front loses without that type's points. A type that ranks uniquely
worst for ``window`` consecutive iterations is dropped from the rotation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .pareto import ParetoArchive, as_points, balanced_anchor, hypervolume_2d, nondominated_front

log = logging.getLogger(__name__)


class IndexScore(NamedTuple):
    index_type: str
    score: float


def hv_without(archive: ParetoArchive, index_type: str, ref) -> float:
    """HV of the global front after deleting the points contributed by ``index_type``."""
    rest = [e.objective for e in archive.global_front if e.index_type != index_type]
    return hypervolume_2d(nondominated_front(rest), ref)


def score_index_types(archive: ParetoArchive, remaining: Sequence[str]) -> list[IndexScore]:
    """Score(t) = max_t' HV(Y \\ Y_t') - HV(Y \\ Y_t); larger means a bigger contribution.

    The reference point is half of the global front's most balanced point. Only
    the global front matters: per-type points it doesn't contain never change
    the union's hypervolume.
    """
    if not archive.global_front:
        raise ValueError("cannot score index types with an empty global front")
    anchor = balanced_anchor(archive.global_points())
    ref = (0.5 * anchor[0], 0.5 * anchor[1])
    without = {t: hv_without(archive, t, ref) for t in remaining}
    top = max(without.values())
    return [IndexScore(t, top - without[t]) for t in remaining]


@dataclass
class AllocatorState:
    all_types: list[str]
    window: int = 10
    remaining: list[str] = field(default=None)
    poll_cursor: int = 0
    worst_streak: dict[str, int] = field(default_factory=dict)
    score_log: list[dict] = field(default_factory=list)
    abandoned: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.all_types:
            raise ValueError("allocator needs at least one index type")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.remaining is None:
            self.remaining = list(self.all_types)
        self.worst_streak = {t: self.worst_streak.get(t, 0) for t in self.remaining}


def observe_and_maybe_abandon(state: AllocatorState, scores: Sequence[IndexScore], iteration: int | None = None) -> str | None:
    """Update worst-rank streaks from one round of scores; abandon at most one type.

    Only a *unique* minimum counts as worst. A tie for worst resets every
    streak. Abandonment also resets every streak.
    """
    scores = [s for s in scores if s.index_type in state.remaining]
    state.score_log.append({"iteration": iteration, "scores": {s.index_type: s.score for s in scores}})
    if len(state.remaining) <= 1 or not scores:
        return None
    low = min(s.score for s in scores)
    worst = [s.index_type for s in scores if s.score == low]
    if len(worst) != 1:
        for t in state.worst_streak:
            state.worst_streak[t] = 0
        return None
    (w,) = worst
    for t in state.worst_streak:
        state.worst_streak[t] = state.worst_streak[t] + 1 if t == w else 0
    if state.worst_streak[w] >= state.window:
        _remove(state, w)
        state.abandoned.append((w, iteration))
        log.info("abandoning index type %s at iteration %s", w, iteration)
        return w
    return None


def _remove(state: AllocatorState, index_type: str) -> None:
    # Keep the cursor pointing at the type that would have been polled next.
    upcoming = state.remaining[state.poll_cursor % len(state.remaining)]
    state.remaining.remove(index_type)
    if upcoming == index_type:
        pos = state.all_types.index(index_type)
        later = [t for t in state.all_types[pos + 1:] if t in state.remaining]
        upcoming = later[0] if later else state.remaining[0]
    state.poll_cursor = state.remaining.index(upcoming)
    state.worst_streak = {t: 0 for t in state.remaining}


def next_poll(state: AllocatorState) -> str:
    t = state.remaining[state.poll_cursor % len(state.remaining)]
    state.poll_cursor = (state.poll_cursor + 1) % len(state.remaining)
    return t

