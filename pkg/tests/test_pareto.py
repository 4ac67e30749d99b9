import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vectune.pareto import (ObjectiveVector, ParetoArchive, as_points, balanced_anchor, dominates,
                            hv_improvement, hypervolume_2d, nondominated_front, nondominated_mask,
                            normalize_many, normalize_npi)

import oracles

coords = st.floats(0.0, 100.0, allow_nan=False, allow_infinity=False)
point_lists = st.lists(st.tuples(coords, coords), min_size=0, max_size=25)


def test_dominates():
    assert dominates((10, 0.9), (5, 0.8))
    assert not dominates((10, 0.9), (10, 0.9))
    assert not dominates((10, 0.7), (5, 0.9))
    assert dominates((10, 0.9), (10, 0.8))


class TestFront:
    def test_examples(self):
        assert nondominated_front([(1, 3), (2, 2), (3, 1)]) == [(1, 3), (2, 2), (3, 1)]
        assert nondominated_front([(1, 1), (2, 2)]) == [(2, 2)]
        assert nondominated_front([]) == []

    def test_first_duplicate_survives(self):
        a, b = ObjectiveVector(1, 2, 5.0), ObjectiveVector(1, 2, 9.0)
        front = nondominated_front([a, (0, 1), b])
        assert front == [a] and front[0].memory == 5.0

    def test_matches_pairwise_oracle_200(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            P = np.round(rng.random((200, 2)) * 20) / 20  # coarse grid forces ties
            assert list(np.flatnonzero(nondominated_mask(P))) == oracles.pairwise_front(P)

    @settings(max_examples=200, deadline=None)
    @given(point_lists)
    def test_property_matches_oracle(self, pts):
        assert list(np.flatnonzero(nondominated_mask(pts))) == oracles.pairwise_front(pts)


class TestHypervolume:
    def test_staircase(self):
        assert hypervolume_2d([(1, 3), (2, 2), (3, 1)], (0, 0)) == 6.0

    def test_empty_and_non_dominating(self):
        assert hypervolume_2d([], (0, 0)) == 0.0
        assert hypervolume_2d([(1, 5)], (2, 0)) == 0.0
        assert hypervolume_2d([(1, 5)], (1, 0)) == 0.0

    def test_random_fronts_vs_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = np.sort(rng.random(10))
            front = np.column_stack([x, np.sort(rng.random(10))[::-1]])
            assert hypervolume_2d(front, (0, 0)) == pytest.approx(oracles.grid_hv(front, (0, 0)), rel=0.01)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(coords, coords), min_size=0, max_size=7), coords, coords)
    def test_inclusion_exclusion(self, pts, rx, ry):
        front = nondominated_front(pts)
        exact = oracles.inclusion_exclusion_hv(front, (rx, ry))
        assert hypervolume_2d(front, (rx, ry)) == pytest.approx(exact, rel=1e-9, abs=1e-7)

    @settings(max_examples=150, deadline=None)
    @given(point_lists, st.tuples(coords, coords))
    def test_monotone(self, pts, extra):
        front = nondominated_front(pts)
        bigger = nondominated_front(front + [extra])
        assert hypervolume_2d(bigger, (0, 0)) >= hypervolume_2d(front, (0, 0)) - 1e-9

    @settings(max_examples=100, deadline=None)
    @given(point_lists, coords, coords)
    def test_translation(self, pts, dx, dy):
        front = nondominated_front(pts)
        moved = [(p[0] + dx, p[1] + dy) for p in front]
        assert hypervolume_2d(moved, (dx, dy)) == pytest.approx(hypervolume_2d(front, (0, 0)), rel=1e-9, abs=1e-6)


class TestImprovement:
    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(coords, coords), min_size=0, max_size=6), st.tuples(coords, coords),
           st.tuples(st.floats(0, 20), st.floats(0, 20)))
    def test_matches_bruteforce(self, pts, z, ref):
        front = nondominated_front(pts)
        got = hv_improvement(front, ref, np.array([z]))[0]
        assert got == pytest.approx(oracles.hvi_bruteforce(front, ref, z), rel=1e-9, abs=1e-6)

    def test_dominated_point_gains_nothing(self):
        assert hv_improvement([(2, 2)], (0, 0), [[1, 1], [2, 2]]).tolist() == [0.0, 0.0]

    def test_empty_front(self):
        assert hv_improvement([], (1, 1), [[3, 4]])[0] == 6.0


class TestBalancedAnchor:
    def test_example(self):
        assert balanced_anchor([(100, 0.5), (80, 0.8), (60, 0.9)]) == (80, 0.8)

    def test_single_and_duplicate(self):
        assert balanced_anchor([(50, 0.9)]) == (50, 0.9)
        assert balanced_anchor([(100, 1.0), (100, 1.0)]) == (100, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            balanced_anchor([])

    def test_tie_goes_to_larger_sum(self):
        # gaps: |1 - 0.5| = 0.5 and |0.5 - 1| = 0.5 tie; sums 1.5 and 1.5 tie -> first
        assert balanced_anchor([(10, 1.0), (5, 2.0)]) == (10, 1.0)
        # (6, .625) and (12, .5) both have gap exactly 0.25; sums 1.0 vs 1.25
        assert balanced_anchor([(16, 0.25), (6, 0.625), (12, 0.5), (2, 1.0)]) == (12, 0.5)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.01, 1)), min_size=1, max_size=12),
           st.floats(0.1, 50))
    def test_scale_equivariant(self, pts, c):
        front = nondominated_front(pts)
        a = balanced_anchor(front)
        b = balanced_anchor([(p[0] * c, p[1]) for p in front])
        i = [tuple(p) for p in front].index(tuple(a))
        assert b[1] == front[i][1]

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.01, 1)), min_size=1, max_size=12))
    def test_matches_brute_force(self, pts):
        front = nondominated_front(pts)
        assert tuple(balanced_anchor(front)) == oracles.brute_balanced(front)


class TestNormalize:
    def test_examples(self):
        assert normalize_npi((50, 0.4), (100, 0.8)) == (0.5, 0.5)
        assert normalize_npi((100, 0.8), (100, 0.8)) == (1.0, 1.0)
        assert normalize_npi((120, 0.72), (100, 0.8)) == pytest.approx((1.2, 0.9))
        assert normalize_many([(50, 0.4), (120, 0.72)], (100, 0.8)) == pytest.approx(np.array([[0.5, 0.5], [1.2, 0.9]]))

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate anchor"):
            normalize_npi((1, 1), (0, 1))
        with pytest.raises(ValueError, match="degenerate anchor"):
            normalize_many([(1, 1)], (1, 0))


class TestArchive:
    def test_fronts(self):
        a = ParetoArchive()
        a.add("c1", ObjectiveVector(1, 3), "A")
        a.add("c2", ObjectiveVector(2, 2), "B")
        a.add("c3", ObjectiveVector(1.5, 1.5), "A")   # dominated globally, not within A
        a.add("c4", ObjectiveVector(0.5, 0.5), "A")   # dominated everywhere
        assert {e.config for e in a.type_front("A")} == {"c1", "c3"}
        assert {e.config for e in a.global_front} == {"c1", "c2"}
        assert a.type_front("C") == []

    def test_duplicate_kept_once(self):
        a = ParetoArchive()
        a.add("x", ObjectiveVector(1, 1), "A")
        a.add("y", ObjectiveVector(1, 1), "A")
        assert [e.config for e in a.global_front] == ["x"]

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(coords, coords, st.sampled_from("ABC")), min_size=1, max_size=30), st.randoms())
    def test_order_independent_and_consistent(self, obs, rnd):
        stream = [(i, ObjectiveVector(s, r), t) for i, (s, r, t) in enumerate(obs)]
        a = ParetoArchive.from_observations(stream)
        shuffled = list(stream)
        rnd.shuffle(shuffled)
        b = ParetoArchive.from_observations(shuffled)
        pts = lambda front: sorted((e.objective[0], e.objective[1]) for e in front)
        assert pts(a.global_front) == pts(b.global_front)
        for t in "ABC":
            assert pts(a.type_front(t)) == pts(b.type_front(t))
            raw = [(s, r) for (s, r, tt) in obs if tt == t]
            assert pts(a.type_front(t)) == sorted(nondominated_front(raw))
        assert pts(a.global_front) == sorted(nondominated_front([(s, r) for s, r, _ in obs]))
        for e in a.global_front:
            assert any(e.objective == f.objective for f in a.type_front(e.index_type))
        for front in [a.global_front] + [a.type_front(t) for t in "ABC"]:
            for x in front:
                assert not any(dominates(y.objective, x.objective) for y in front)


def test_as_points_accepts_three_columns():
    assert as_points(np.array([[1.0, 2.0, 3.0]])).shape == (1, 2)
    assert as_points([]).shape == (0, 2)
