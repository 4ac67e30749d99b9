"""The polling multi-objective tuning loop.

One iteration: score index types and maybe abandon one, normalize every
type's observations by that type's anchor, fit one surrogate over all types,
poll the next remaining type, recommend a configuration for it, evaluate, and
record the result.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from . import space as sp
from .acquisition import (CONSTRAINED_EI, AcquisitionContext, ConstraintSpec, Recommendation,
                          best_feasible_speed, recommend)
from .allocator import AllocatorState, next_poll, observe_and_maybe_abandon, score_index_types
from .backends import CRASH, OK, TIMEOUT, EvaluationResult
from .pareto import BaselineAnchor, ObjectiveVector, ParetoArchive, as_points, balanced_anchor
from .surrogate import SurrogateError, SurrogateModel, TrainingSet, fit

log = logging.getLogger(__name__)

QPS = "qps"
COST_EFFECTIVENESS = "cost_effectiveness"

LIVE = "live"
BOOTSTRAP = "bootstrap"

COMPONENTWISE_MAX = "componentwise_max"
MAX_SPEED = "max_speed"


class TunerError(RuntimeError):
    pass


class Backend(Protocol):
    def evaluate(self, config: sp.Configuration, timeout: float | None = None) -> EvaluationResult: ...


@dataclass(frozen=True)
class ObjectiveSpec:
    speed_objective: str = QPS
    eta: float = 1.0

    def __post_init__(self):
        if self.speed_objective not in (QPS, COST_EFFECTIVENESS):
            raise ValueError(f"unknown speed objective {self.speed_objective!r}")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")


def transform_objectives(raw: ObjectiveVector, spec: ObjectiveSpec) -> ObjectiveVector:
    """Identity for QPS; for cost-effectiveness, speed becomes speed / (eta * memory)."""
    if spec.speed_objective == QPS:
        return ObjectiveVector(raw[0], raw[1], raw[2] if len(raw) > 2 else None)
    memory = raw[2] if len(raw) > 2 else None
    if memory is None or not memory > 0:
        raise ValueError("cost-effectiveness needs a positive memory measurement")
    return ObjectiveVector(raw[0] / (spec.eta * memory), raw[1], memory)


@dataclass(frozen=True)
class TunerConfig:
    max_iterations: int = 200
    eval_timeout: float = 900.0
    window: int = 10
    acquisition: AcquisitionContext = field(default_factory=AcquisitionContext)
    constraint: ConstraintSpec | None = None
    bootstrap_history: str | None = None
    rng_seed: int = 0
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    gp_restarts: int = 5
    gp_maxiter: int = 200
    wall_clock_budget: float | None = None
    constraint_anchor: str = COMPONENTWISE_MAX

    def __post_init__(self):
        if self.constraint is not None and self.acquisition.mode != CONSTRAINED_EI:
            object.__setattr__(self, "acquisition", replace(self.acquisition, mode=CONSTRAINED_EI))
        if self.acquisition.mode == CONSTRAINED_EI and self.constraint is None:
            raise ValueError("constrained_ei acquisition needs a constraint")
        if self.constraint_anchor not in (COMPONENTWISE_MAX, MAX_SPEED):
            raise ValueError(f"unknown constraint_anchor {self.constraint_anchor!r}")
        if self.window < 1 or self.eval_timeout <= 0:
            raise ValueError("window must be >= 1 and eval_timeout > 0")


@dataclass
class ObservationRecord:
    iteration: int  # 1-based evaluation ordinal; defaults occupy 1..T
    config: sp.Configuration
    raw: ObjectiveVector | None
    transformed: ObjectiveVector
    status: str
    eval_duration: float = 0.0
    imputed: bool = False
    source: str = LIVE

    @property
    def ok(self) -> bool:
        return self.status == OK and not self.imputed


@dataclass
class TunerState:
    space: sp.ConfigSpace
    history: list[ObservationRecord] = field(default_factory=list)
    archive: ParetoArchive = field(default_factory=ParetoArchive)
    allocator: AllocatorState | None = None
    model: SurrogateModel | None = None
    worst_seen: ObjectiveVector | None = None
    anchors: dict[str, BaselineAnchor] = field(default_factory=dict)
    last_recommendation: Recommendation | None = None
    encoded: list[np.ndarray] = field(default_factory=list)

    @property
    def live_count(self) -> int:
        return sum(1 for r in self.history if r.source == LIVE)


class HistorySink(Protocol):
    def record(self, rec: ObservationRecord) -> None: ...
    def scores(self, iteration: int, scores: dict[str, float]) -> None: ...
    def abandon(self, iteration: int, index_type: str) -> None: ...


def impute_failure(state: TunerState) -> ObjectiveVector:
    """Componentwise worst successful transformed values so far, or (0, 0)."""
    if state.worst_seen is None:
        return ObjectiveVector(0.0, 0.0, None)
    return ObjectiveVector(state.worst_seen[0], state.worst_seen[1], None)


def compute_anchors(archive: ParetoArchive, index_types: Sequence[str], constrained: bool = False,
                    constraint_anchor: str = COMPONENTWISE_MAX) -> dict[str, BaselineAnchor]:
    """Per-type normalization anchors; types without a usable anchor borrow the global one."""

    def anchor_of(P: np.ndarray) -> BaselineAnchor:
        if not constrained:
            return balanced_anchor(P)
        if constraint_anchor == COMPONENTWISE_MAX:
            return BaselineAnchor(float(P[:, 0].max()), float(P[:, 1].max()))
        return BaselineAnchor(float(P[:, 0].max()), balanced_anchor(P).recall)

    def usable(a) -> bool:
        return a is not None and a[0] > 0 and a[1] > 0

    glob = anchor_of(archive.global_points()) if archive.global_front else None
    out = {}
    for t in index_types:
        a = anchor_of(archive.type_points(t)) if archive.type_front(t) else None
        if not usable(a):
            a = glob
        if usable(a):
            out[t] = a
    return out


def _derive_seeds(base: int, iteration: int, n: int = 3) -> list[int]:
    return [int(s) for s in np.random.SeedSequence([base, iteration]).generate_state(n)]


class PollingTuner:
    def __init__(self, space: sp.ConfigSpace, backend: Backend, cfg: TunerConfig,
                 bootstrap: Iterable[ObservationRecord] | None = None, sink: HistorySink | None = None):
        if cfg.max_iterations < len(space.index_types):
            raise ValueError("max_iterations must cover one default evaluation per index type")
        self.space = space
        self.backend = backend
        self.cfg = cfg
        self.sink = sink
        self._bootstrap = list(bootstrap or [])
        self.state = TunerState(space=space, allocator=AllocatorState(space.type_names, window=cfg.window))
        self._started: float | None = None

    # -- bookkeeping -----------------------------------------------------------------

    def _append(self, rec: ObservationRecord) -> None:
        st = self.state
        st.history.append(rec)
        st.encoded.append(sp.encode(self.space, rec.config))
        st.archive.add(rec.config, rec.transformed, rec.config.index_type)
        if rec.ok:
            y = rec.transformed
            w = st.worst_seen
            st.worst_seen = ObjectiveVector(y[0], y[1], None) if w is None else \
                ObjectiveVector(min(w[0], y[0]), min(w[1], y[1]), None)
        if self.sink is not None:
            self.sink.record(rec)

    def _evaluate(self, config: sp.Configuration) -> ObservationRecord:
        iteration = len(self.state.history) + 1
        start = time.perf_counter()
        try:
            res = self.backend.evaluate(config, self.cfg.eval_timeout)
        except Exception as exc:  # backend failures never stop the loop
            log.warning("evaluation %d raised %r; recording a crash", iteration, exc)
            res = EvaluationResult(CRASH)
        duration = time.perf_counter() - start
        status = res.status
        if status == OK and duration > self.cfg.eval_timeout:
            status = TIMEOUT
        raw = transformed = None
        if status == OK:
            raw = ObjectiveVector(float(res.speed), float(res.recall), res.memory)
            try:
                transformed = transform_objectives(raw, self.cfg.objective)
            except ValueError as exc:
                log.warning("evaluation %d: %s; recording a crash", iteration, exc)
                status = CRASH
        if status != OK:
            transformed = impute_failure(self.state)
            return ObservationRecord(iteration, config, raw, transformed, status, duration, imputed=True)
        return ObservationRecord(iteration, config, raw, transformed, status, duration)

    # -- loop ------------------------------------------------------------------------

    def initialize(self) -> TunerState:
        self._started = time.perf_counter()
        for t in self.space.type_names:
            self._append(self._evaluate(sp.default_config(self.space, t)))
        bootstrap = self._bootstrap
        if not bootstrap and self.cfg.bootstrap_history:
            from .history import load_history
            bootstrap = load_history(self.cfg.bootstrap_history, self.space)
        for rec in bootstrap:
            problems = sp.validate(self.space, rec.config)
            if problems:
                raise TunerError("bootstrap record does not fit the space: " + "; ".join(problems))
            rec = replace(rec, iteration=len(self.state.history) + 1, source=BOOTSTRAP)
            if rec.ok and rec.raw is not None:
                # The earlier run may have optimized a different speed objective.
                rec = replace(rec, transformed=transform_objectives(rec.raw, self.cfg.objective))
            self._append(rec)
        if not any(r.ok for r in self.state.history):
            raise TunerError("every initial evaluation failed; check the backend")
        return self.state

    def _fit(self, seed: int) -> SurrogateModel | None:
        st = self.state
        if len(st.anchors) != len(self.space.index_types) or len(st.history) < 2:
            return None
        X = np.vstack(st.encoded)
        Y = np.empty((len(st.history), 2))
        for i, rec in enumerate(st.history):
            a = st.anchors[rec.config.index_type]
            Y[i] = (rec.transformed[0] / a[0], rec.transformed[1] / a[1])
        try:
            return fit(TrainingSet.from_arrays(X, Y), restarts=self.cfg.gp_restarts, seed=seed,
                       maxiter=self.cfg.gp_maxiter)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); falling back to random search this iteration", exc)
            return None

    def step(self) -> ObservationRecord:
        st, cfg = self.state, self.cfg
        alloc = st.allocator
        iteration = len(st.history) + 1  # ordinal of the evaluation this step issues
        cand_seed, _, gp_seed = _derive_seeds(cfg.rng_seed, iteration)

        if len(alloc.remaining) > 1:
            scores = score_index_types(st.archive, alloc.remaining)
            dropped = observe_and_maybe_abandon(alloc, scores, iteration)
            if self.sink is not None:
                self.sink.scores(iteration, {s.index_type: s.score for s in scores})
                if dropped is not None:
                    self.sink.abandon(iteration, dropped)

        constrained = cfg.constraint is not None
        st.anchors = compute_anchors(st.archive, self.space.type_names, constrained, cfg.constraint_anchor)
        st.model = self._fit(gp_seed)

        t_poll = next_poll(alloc)
        ctx = replace(cfg.acquisition, seed=cand_seed)
        constraint = None
        if constrained:
            ok_points = [r.transformed for r in st.history if r.ok]
            constraint = replace(cfg.constraint, best_feasible=best_feasible_speed(ok_points, cfg.constraint.rlim)
                                 if ok_points else None)
        rec = recommend(st.model, self.space, st.archive, t_poll, ctx, constraint, st.anchors)
        st.last_recommendation = rec
        record = self._evaluate(rec.config)
        self._append(record)
        return record

    def done(self) -> bool:
        if self.state.live_count >= self.cfg.max_iterations:
            return True
        budget = self.cfg.wall_clock_budget
        return budget is not None and self._started is not None and time.perf_counter() - self._started >= budget

    def run(self) -> TunerState:
        self.initialize()
        while not self.done():
            self.step()
        return self.state

    # -- reporting ---------------------------------------------------------------------

    def report(self) -> dict:
        return final_report(self.state, self.cfg)


def final_report(state: TunerState, cfg: TunerConfig) -> dict:
    front = [
        {"index_type": e.index_type, "config": e.config.to_dict(), "speed": e.objective[0], "recall": e.objective[1]}
        for e in sorted(state.archive.global_front, key=lambda e: -e.objective[0])
    ]
    out: dict[str, Any] = {"evaluations": state.live_count, "pareto_front": front}
    if state.archive.global_front:
        a = balanced_anchor(state.archive.global_points())
        entry = next(e for e in state.archive.global_front if (e.objective[0], e.objective[1]) == tuple(a))
        out["best_balanced"] = {"index_type": entry.index_type, "config": entry.config.to_dict(),
                                "speed": a[0], "recall": a[1]}
    if cfg.constraint is not None:
        feasible = [r for r in state.history if r.ok and r.transformed[1] > cfg.constraint.rlim]
        if feasible:
            best = max(feasible, key=lambda r: r.transformed[0])
            out["best_feasible"] = {"iteration": best.iteration, "config": best.config.to_dict(),
                                    "speed": best.transformed[0], "recall": best.transformed[1]}
        else:
            out["best_feasible"] = "no feasible configuration found"
    out["remaining_index_types"] = list(state.allocator.remaining)
    out["abandoned"] = [{"index_type": t, "iteration": i} for t, i in state.allocator.abandoned]
    out["score_timeline"] = state.allocator.score_log
    return out


# -- functional surface -----------------------------------------------------------------


def initialize(space: sp.ConfigSpace, backend: Backend, cfg: TunerConfig, **kwargs) -> PollingTuner:
    tuner = PollingTuner(space, backend, cfg, **kwargs)
    tuner.initialize()
    return tuner


def run(space: sp.ConfigSpace, backend: Backend, cfg: TunerConfig, **kwargs) -> TunerState:
    return PollingTuner(space, backend, cfg, **kwargs).run()


def random_search(space: sp.ConfigSpace, backend: Backend, budget: int, seed: int,
                  objective: ObjectiveSpec | None = None) -> list[ObservationRecord]:
    """Uniform-random baseline: a random index type, then a uniform configuration of it."""
    objective = objective or ObjectiveSpec()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(budget):
        t = space.type_names[int(rng.integers(len(space.index_types)))]
        config = sp.random_candidates(space, t, 1, int(rng.integers(2**63 - 1)))[0]
        res = backend.evaluate(config)
        if res.ok:
            raw = res.objectives()
            out.append(ObservationRecord(i + 1, config, raw, transform_objectives(raw, objective), OK, res.duration))
        else:
            out.append(ObservationRecord(i + 1, config, None, ObjectiveVector(0.0, 0.0), res.status, res.duration, True))
    return out
