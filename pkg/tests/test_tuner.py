import numpy as np
import pytest

from vectune import space as sp
from vectune.acquisition import ConstraintSpec
from vectune.backends import CRASH, OK, TIMEOUT, EvaluationResult, SimulatedBackend
from vectune.history import record_to_doc
from vectune.pareto import ObjectiveVector, ParetoArchive, hypervolume_2d, nondominated_front
from vectune.tuner import (BOOTSTRAP, COST_EFFECTIVENESS, LIVE, ObjectiveSpec, ObservationRecord, PollingTuner,
                           TunerConfig, TunerError, TunerState, impute_failure, random_search, run,
                           transform_objectives)

DEMO = sp.demo_space()
FAST = dict(gp_restarts=1, gp_maxiter=50)


class Scripted:
    """Simulated backend that counts calls and fails on chosen call numbers (1-based)."""

    def __init__(self, fail=(), status=CRASH, fail_defaults=False, raise_on=()):
        self.inner = SimulatedBackend(DEMO)
        self.fail, self.status, self.raise_on = set(fail), status, set(raise_on)
        self.fail_defaults = fail_defaults
        self.calls = []

    def evaluate(self, config, timeout=None):
        self.calls.append(config)
        n = len(self.calls)
        if n in self.raise_on:
            raise RuntimeError("backend exploded")
        if n in self.fail or (self.fail_defaults and n <= len(DEMO.index_types)):
            return EvaluationResult(self.status)
        return self.inner.evaluate(config, timeout)


class TestTransform:
    def test_qps_identity(self):
        v = ObjectiveVector(1000.0, 0.9, 4.0)
        assert transform_objectives(v, ObjectiveSpec()) == v

    def test_cost_effectiveness(self):
        assert transform_objectives((1000.0, 0.9, 4.0), ObjectiveSpec(COST_EFFECTIVENESS))[:2] == (250.0, 0.9)
        assert transform_objectives((1000.0, 0.9, 4.0), ObjectiveSpec(COST_EFFECTIVENESS, eta=2))[0] == 125.0

    @pytest.mark.parametrize("raw", [(1000.0, 0.9, None), (1000.0, 0.9, 0.0), (1000.0, 0.9)])
    def test_cost_needs_memory(self, raw):
        with pytest.raises(ValueError):
            transform_objectives(raw, ObjectiveSpec(COST_EFFECTIVENESS))

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            ObjectiveSpec(eta=0)
        with pytest.raises(ValueError):
            ObjectiveSpec("latency")


class TestImpute:
    def test_componentwise_min(self):
        st = TunerState(DEMO, worst_seen=ObjectiveVector(80.0, 0.5))
        assert impute_failure(st)[:2] == (80.0, 0.5)

    def test_floor(self):
        assert impute_failure(TunerState(DEMO))[:2] == (0.0, 0.0)

    def test_worst_seen_tracks_successes(self):
        backend = Scripted(fail=range(4, 40, 3))
        tuner = PollingTuner(DEMO, backend, TunerConfig(max_iterations=25, rng_seed=1, **FAST))
        tuner.initialize()
        while not tuner.done():
            prev = tuner.state.worst_seen
            rec = tuner.step()
            w = tuner.state.worst_seen
            ok = [r.transformed for r in tuner.state.history if r.ok]
            assert w[:2] == (min(p[0] for p in ok), min(p[1] for p in ok))
            assert w[0] <= prev[0] and w[1] <= prev[1]
            if not rec.ok:
                assert rec.imputed and rec.transformed[:2] == prev[:2]


class TestInitialize:
    def test_one_default_per_type(self):
        tuner = PollingTuner(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=10))
        st = tuner.initialize()
        assert len(st.history) == 3
        assert [r.config for r in st.history] == [sp.default_config(DEMO, t) for t in DEMO.type_names]
        assert [r.iteration for r in st.history] == [1, 2, 3]

    def test_default_timeout_imputed(self):
        backend = Scripted(fail={1}, status=TIMEOUT)
        st = PollingTuner(DEMO, backend, TunerConfig(max_iterations=10)).initialize()
        first = st.history[0]
        assert first.status == TIMEOUT and first.imputed and first.transformed[:2] == (0.0, 0.0)
        assert all(r.ok for r in st.history[1:])

    def test_all_defaults_fail(self):
        with pytest.raises(TunerError, match="every initial evaluation failed"):
            PollingTuner(DEMO, Scripted(fail_defaults=True), TunerConfig(max_iterations=10)).initialize()

    def test_budget_must_cover_defaults(self):
        with pytest.raises(ValueError):
            PollingTuner(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=2))

    def test_bootstrap_appended(self):
        earlier = run(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=40, rng_seed=3, **FAST))
        backend = Scripted()
        tuner = PollingTuner(DEMO, backend, TunerConfig(max_iterations=10, rng_seed=4, **FAST),
                             bootstrap=earlier.history)
        st = tuner.initialize()
        assert len(st.history) == 43 and len(backend.calls) == 3
        assert [r.source for r in st.history] == [LIVE] * 3 + [BOOTSTRAP] * 40
        assert [r.iteration for r in st.history] == list(range(1, 44))
        # the first fitted surrogate sees every bootstrap row
        tuner.step()
        X = st.model.train.inputs
        boot = np.vstack([sp.encode(DEMO, r.config) for r in earlier.history])
        assert X.shape[0] == 43
        assert all(any(np.array_equal(b, x) for x in X) for b in boot)
        # the budget counts live evaluations only
        while not tuner.done():
            tuner.step()
        assert st.live_count == 10 and len(backend.calls) == 10

    def test_bootstrap_retransformed(self):
        earlier = run(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=5, rng_seed=3, **FAST))
        cfg = TunerConfig(max_iterations=5, objective=ObjectiveSpec(COST_EFFECTIVENESS), **FAST)
        st = PollingTuner(DEMO, SimulatedBackend(DEMO), cfg, bootstrap=earlier.history).initialize()
        for r in st.history[3:]:
            assert r.transformed[0] == pytest.approx(r.raw[0] / r.raw[2])

    def test_bootstrap_from_other_space(self):
        alien = ObservationRecord(1, sp.Configuration("FLAT", {}), None, ObjectiveVector(0, 0), CRASH)
        with pytest.raises(TunerError):
            PollingTuner(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=5), bootstrap=[alien]).initialize()


@pytest.fixture(scope="module")
def fifty():
    backend = Scripted(fail={9, 17}, raise_on={23})
    tuner = PollingTuner(DEMO, backend, TunerConfig(max_iterations=50, rng_seed=2, window=3, **FAST))
    tuner.initialize()
    hv = [hypervolume_2d(tuner.state.archive.global_points(), (0, 0))]
    polled = []
    while not tuner.done():
        before = len(tuner.state.history)
        rec = tuner.step()
        assert len(tuner.state.history) == before + 1 == rec.iteration
        polled.append((rec.iteration, rec.config.index_type))
        hv.append(hypervolume_2d(tuner.state.archive.global_points(), (0, 0)))
    return tuner, backend, hv, polled


class TestRun:
    def test_budget(self, fifty):
        tuner, backend, _, _ = fifty
        assert len(tuner.state.history) == len(backend.calls) == 50
        assert [r.iteration for r in tuner.state.history] == list(range(1, 51))

    def test_failures_recorded(self, fifty):
        tuner, _, _, _ = fifty
        h = tuner.state.history
        assert h[8].status == CRASH and h[16].status == CRASH and h[22].status == CRASH
        assert all(h[i].imputed for i in (8, 16, 22))

    def test_archive_matches_history(self, fifty):
        st = fifty[0].state
        pts = [(r.transformed[0], r.transformed[1]) for r in st.history]
        assert sorted(st.archive.global_points().tolist()) == sorted(map(list, nondominated_front(pts)))
        fresh = ParetoArchive.from_observations((r.config, r.transformed, r.config.index_type) for r in st.history)
        for t in DEMO.type_names:
            assert sorted(st.archive.type_points(t).tolist()) == sorted(fresh.type_points(t).tolist())

    def test_hypervolume_non_decreasing(self, fifty):
        hv = fifty[2]
        assert all(b >= a for a, b in zip(hv, hv[1:]))

    def test_front_matches_reevaluation(self, fifty):
        tuner = fifty[0]
        backend = SimulatedBackend(DEMO)
        for e in tuner.state.archive.global_front:
            again = backend.evaluate(e.config)
            assert (again.speed, again.recall) == tuple(e.objective[:2])

    def test_abandoned_never_polled(self, fifty):
        tuner, _, _, polled = fifty
        assert tuner.state.allocator.abandoned, "window 3 should abandon something in 50 evaluations"
        for t, it in tuner.state.allocator.abandoned:
            assert all(pt != t for i, pt in polled if i >= it)

    def test_deterministic(self):
        def once():
            st = run(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=12, rng_seed=8, **FAST))
            return [{k: v for k, v in record_to_doc(r).items() if k != "volatile"} for r in st.history]
        assert once() == once()

    def test_report(self, fifty):
        rep = fifty[0].report()
        assert rep["evaluations"] == 50
        speeds = [p["speed"] for p in rep["pareto_front"]]
        assert speeds == sorted(speeds, reverse=True)
        assert "best_feasible" not in rep

    @pytest.mark.parametrize("rlim,feasible", [(0.9, True), (0.99999, False)])
    def test_constraint_report(self, rlim, feasible):
        st_cfg = TunerConfig(max_iterations=6, constraint=ConstraintSpec(rlim), **FAST)
        tuner = PollingTuner(DEMO, SimulatedBackend(DEMO), st_cfg)
        tuner.run()
        best = tuner.report()["best_feasible"]
        if feasible:
            assert best["recall"] > rlim
        else:
            assert best == "no feasible configuration found"

    def test_wall_clock_budget(self):
        tuner = PollingTuner(DEMO, SimulatedBackend(DEMO), TunerConfig(max_iterations=500, wall_clock_budget=0.0))
        st = tuner.run()
        assert st.live_count == 3


def test_random_search():
    recs = random_search(DEMO, SimulatedBackend(DEMO), 20, seed=0)
    again = random_search(DEMO, SimulatedBackend(DEMO), 20, seed=0)
    assert [r.config for r in recs] == [r.config for r in again]
    assert [r.iteration for r in recs] == list(range(1, 21)) and all(r.ok for r in recs)
