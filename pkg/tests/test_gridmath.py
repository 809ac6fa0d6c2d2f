import math

import numpy as np
import pytest

from shapeparse.gridmath import (
    INFEASIBLE,
    AffineBound,
    DtProblem1D,
    cgdt_1d,
    cgdt_brute_force_1d,
    op_counter,
    pairwise_min_2d,
)

INF = math.inf


def assert_matches_brute(problem, rel=1e-9):
    """cgdt_1d must match the exhaustive scan in value; argmins must achieve
    the same value and respect the constraints."""
    fast = cgdt_1d(problem)
    slow = cgdt_brute_force_1d(problem)
    lower, upper = problem.bounds()
    h = problem.h_array()
    for x in range(problem.n):
        gv, bv = fast.gamma[x], slow.gamma[x]
        if bv == INF:
            assert gv == INF, f"x={x}: expected infeasible, got {gv}"
            assert fast.argmin[x] == INFEASIBLE
            continue
        assert gv < INF, f"x={x}: expected {bv}, got infeasible"
        denom = max(1.0, abs(bv))
        assert abs(gv - bv) <= rel * denom, f"x={x}: {gv} vs {bv}"
        z = fast.argmin[x]
        assert lower(x) <= z <= upper(x)
        achieved = (x - h[z]) ** 2 + problem.g[z]
        assert abs(achieved - bv) <= rel * denom
    return fast, slow


def random_problem(rng, n_max=64, allow_general=True):
    n = int(rng.integers(1, n_max + 1))
    g = rng.uniform(0.0, 10.0, n)
    if rng.random() < 0.5:
        g[rng.random(n) < rng.uniform(0.05, 0.4)] = INF
    shift = float(rng.integers(-2, 3)) / 2.0
    kind = rng.integers(0, 3) if allow_general else 0
    if kind == 0:
        # the composition constraint family: 2x - z stays in-grid
        w = int(rng.integers(1, n + 1))
        lower = AffineBound(2, -(w - 1))
        upper = AffineBound(2, 0)
    elif kind == 1:
        lower = None
        upper = None
    else:
        al = int(rng.integers(0, 4))
        au = int(rng.integers(0, 4))
        bl = int(rng.integers(-n, n // 2 + 1))
        bu = int(rng.integers(0, 2 * n))
        lower = AffineBound(al, bl)
        upper = AffineBound(au, bu)
    h = None
    if allow_general and rng.random() < 0.3:
        # non-decreasing h with plateaus: exercises the equal-root path
        steps = rng.integers(0, 2, n).astype(float)
        h = np.cumsum(steps) + shift
        shift = 0.0
    return DtProblem1D(g, h_shift=shift, lower=lower, upper=upper, h=h)


class TestCgdt1d:
    def test_single_point(self):
        # one grid cell, pinned bounds: gamma = (0 - 0)^2 + 5
        p = DtProblem1D(np.array([5.0]), lower=AffineBound(0, 0), upper=AffineBound(0, 0))
        res = cgdt_1d(p)
        assert res.gamma.tolist() == [5.0]
        assert res.argmin.tolist() == [0]

    def test_zero_costs_unconstrained(self):
        p = DtProblem1D(np.zeros(8))
        res = cgdt_1d(p)
        assert res.gamma.tolist() == [0.0] * 8
        assert res.argmin.tolist() == list(range(8))

    def test_two_cells_half_shift(self):
        # per-x arithmetic: min over z of (x - z - 0.5)^2
        p = DtProblem1D(np.zeros(2), h_shift=0.5)
        res = cgdt_1d(p)
        for x in range(2):
            expected = min((x - z - 0.5) ** 2 for z in range(2))
            assert res.gamma[x] == pytest.approx(expected, abs=0)

    def test_all_infinite_is_flagged_not_fatal(self):
        p = DtProblem1D(np.full(5, INF))
        res = cgdt_1d(p)
        assert not res.feasible.any()
        assert (res.gamma == INF).all()

    def test_empty_feasible_range_sentinel_is_local(self):
        # upper(x) < 0 for x = 0 only
        p = DtProblem1D(np.zeros(4), lower=AffineBound(0, 0), upper=AffineBound(2, -1))
        res = cgdt_1d(p)
        assert res.argmin[0] == INFEASIBLE
        assert res.feasible[1:].all()

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(20260810)
        for _ in range(1000):
            assert_matches_brute(random_problem(rng))

    def test_matches_brute_force_negative_costs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = random_problem(rng)
            p.g[np.isfinite(p.g)] -= 12.0
            assert_matches_brute(p)

    def test_linearity_op_budget(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            p = random_problem(rng)
            before_p, before_q = op_counter.pushes, op_counter.pops
            cgdt_1d(p)
            ops = (op_counter.pushes - before_p) + (op_counter.pops - before_q)
            assert ops <= 2 * p.n
        assert op_counter.worst_call_slack <= 0

    def test_validation(self):
        with pytest.raises(ValueError):
            DtProblem1D(np.array([np.nan, 1.0]))
        with pytest.raises(ValueError):
            DtProblem1D(np.array([-INF, 1.0]))
        with pytest.raises(ValueError):
            AffineBound(-1, 0)
        with pytest.raises(ValueError):
            DtProblem1D(np.zeros(3), h=np.array([1.0, 0.0, 2.0]))


class TestBoundaryCases:
    """Constructed instances for each envelope boundary situation; the brute
    scan stays the authority on values."""

    def test_case1_jump_past_top_cap(self):
        g = np.full(8, INF)
        g[0] = 0.0
        g[7] = 0.0
        p = DtProblem1D(g, lower=AffineBound(2, -7), upper=AffineBound(2, 0))
        trace = []
        res = cgdt_1d(p, trace=trace)
        assert any(ev[0] == "case1" for ev in trace)
        slow = cgdt_brute_force_1d(p)
        np.testing.assert_array_equal(res.gamma, slow.gamma)

    def test_case2_interior_intersection(self):
        p = DtProblem1D(np.zeros(8))
        trace = []
        res = cgdt_1d(p, trace=trace)
        assert any(ev[0] == "case2" for ev in trace)
        assert (res.gamma == 0).all()

    def test_case3_eviction(self):
        p = DtProblem1D(np.array([5.0, 5.0, 0.0]))
        trace = []
        res = cgdt_1d(p, trace=trace)
        assert any(ev[0] == "evict" for ev in trace)
        slow = cgdt_brute_force_1d(p)
        np.testing.assert_array_equal(res.gamma, slow.gamma)

    def test_discontinuous_boundary_left_parabola_kept(self):
        # integer breakpoint where the incoming parabola is not yet feasible:
        # the fill rule must fall back to the left parabola
        g = np.full(8, INF)
        g[0] = 0.0
        g[7] = 0.0
        p = DtProblem1D(g, lower=AffineBound(2, -7), upper=AffineBound(2, 0))
        res = cgdt_1d(p)
        slow = cgdt_brute_force_1d(p)
        np.testing.assert_array_equal(res.gamma, slow.gamma)
        assert res.argmin[3] == 0  # left of the seam
        assert res.argmin[4] == 7  # right of the seam

    def test_discontinuous_boundary_drop_onto_new_parabola(self):
        # intersection clamps up to the new parabola's first valid position;
        # at that position the right parabola is strictly lower
        g = np.full(8, INF)
        g[0] = 0.0
        g[6] = -20.0
        p = DtProblem1D(g, lower=AffineBound(1, -4), upper=AffineBound(1, 2))
        trace = []
        res = cgdt_1d(p, trace=trace)
        assert any(ev[0] == "clamp-lo" for ev in trace)
        slow = cgdt_brute_force_1d(p)
        np.testing.assert_array_equal(res.gamma, slow.gamma)
        assert res.argmin[4] == 6

    def test_equal_root_degeneracy(self):
        h = np.array([0.0, 0.0, 1.0])
        for g in ([3.0, 1.0, 5.0], [1.0, 3.0, 5.0], [2.0, 2.0, 0.0]):
            p = DtProblem1D(np.array(g), h=h)
            assert_matches_brute(p)

    def test_equal_root_randomized(self):
        rng = np.random.default_rng(4242)
        for _ in range(300):
            n = int(rng.integers(2, 40))
            h = np.cumsum(rng.integers(0, 2, n)).astype(float)
            g = rng.uniform(0, 10, n)
            g[rng.random(n) < 0.2] = INF
            p = DtProblem1D(g, h=h)
            assert_matches_brute(p)

    def test_first_parabola_empty_interval(self):
        # parabola 0 is never feasible on the grid; positions it would have
        # covered are flagged, the rest still solve
        g = np.array([1.0, 2.0, 3.0, 4.0])
        p = DtProblem1D(g, lower=AffineBound(0, 1), upper=AffineBound(0, 3))
        res = cgdt_1d(p)
        slow = cgdt_brute_force_1d(p)
        np.testing.assert_array_equal(res.gamma, slow.gamma)
        np.testing.assert_array_equal(res.argmin, slow.argmin)


def brute_pairwise(e1, wx, wy, dx, dy):
    h, w = e1.shape
    out = np.full((h, w), INF)
    ax = np.full((h, w), INFEASIBLE, dtype=int)
    ay = np.full((h, w), INFEASIBLE, dtype=int)
    for y in range(h):
        for x in range(w):
            for y1 in range(max(0, 2 * y - (h - 1)), min(h - 1, 2 * y) + 1):
                for x1 in range(max(0, 2 * x - (w - 1)), min(w - 1, 2 * x) + 1):
                    v = (
                        4 * wx * (x - x1 - dx / 2) ** 2
                        + 4 * wy * (y - y1 - dy / 2) ** 2
                        + e1[y1, x1]
                    )
                    if v < out[y, x]:
                        out[y, x] = v
                        ax[y, x] = x1
                        ay[y, x] = y1
    return out, ax, ay


class TestPairwiseMin2d:
    def test_zero_field_identity(self):
        e1 = np.zeros((6, 6))
        vals, ax, ay = pairwise_min_2d(e1, 1.0, 2.0, 0.0, 0.0)
        assert (vals == 0).all()
        xs, ys = np.meshgrid(np.arange(6), np.arange(6))
        np.testing.assert_array_equal(ax, xs)
        np.testing.assert_array_equal(ay, ys)

    def test_matches_joint_scan(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            h, w = rng.integers(2, 9, 2)
            e1 = rng.uniform(0, 10, (h, w))
            if rng.random() < 0.4:
                e1[rng.random((h, w)) < 0.2] = INF
            wx, wy = rng.uniform(0, 3, 2)
            dx, dy = rng.integers(-4, 5, 2) / 2.0
            vals, ax, ay = pairwise_min_2d(e1, wx, wy, dx, dy)
            bvals, _, _ = brute_pairwise(e1, wx, wy, dx, dy)
            finite = bvals < INF
            np.testing.assert_array_equal(vals < INF, finite)
            np.testing.assert_allclose(vals[finite], bvals[finite], rtol=1e-9)
            # returned argmins must achieve the returned value
            for y, x in zip(*np.nonzero(finite)):
                v = (
                    4 * wx * (x - ax[y, x] - dx / 2) ** 2
                    + 4 * wy * (y - ay[y, x] - dy / 2) ** 2
                    + e1[ay[y, x], ax[y, x]]
                )
                assert v == pytest.approx(vals[y, x], rel=1e-12)

    def test_specific_delta_case(self):
        rng = np.random.default_rng(5)
        e1 = rng.uniform(0, 10, (6, 6))
        vals, _, _ = pairwise_min_2d(e1, 1.0, 1.0, 2.0, 0.0)
        bvals, _, _ = brute_pairwise(e1, 1.0, 1.0, 2.0, 0.0)
        np.testing.assert_allclose(vals, bvals, rtol=1e-9)

    def test_zero_weights_propagate_unique_minimum(self):
        rng = np.random.default_rng(11)
        e1 = rng.uniform(1, 10, (7, 7))
        py, px = 3, 2
        e1[py, px] = 0.5
        vals, ax, ay = pairwise_min_2d(e1, 0.0, 0.0, 1.0, -1.0)
        for y in range(7):
            for x in range(7):
                if 0 <= 2 * x - px <= 6 and 0 <= 2 * y - py <= 6:
                    assert vals[y, x] == e1[py, px]
                    assert (ax[y, x], ay[y, x]) == (px, py)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="wx"):
            pairwise_min_2d(np.zeros((3, 3)), -0.1, 1.0, 0.0, 0.0)
        with pytest.raises(ValueError, match="wy"):
            pairwise_min_2d(np.zeros((3, 3)), 1.0, -2.0, 0.0, 0.0)
