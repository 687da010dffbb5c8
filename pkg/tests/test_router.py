import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchroute.gainmap import GainMap
from patchroute.geometry import GridSpec, ImageExtent, PatchSpec
from patchroute.router import (
    KernelShape,
    OverlapKernel,
    QueryBudgetRule,
    RouterConfig,
    Strategy,
    _rigid_suppressor,
    _soft_suppressor,
    greedy_steps,
    issga,
    kernel_eval,
    query_budget,
    read_selection_csv,
    rigid_nms_select,
    select_patches,
    topk_select,
    write_selection_csv,
)


def row_map(values, p_w_grid=2):
    """1 x n map whose patch spans ``p_w_grid`` cells horizontally."""
    n = len(values)
    grid = GridSpec(n, 1, ImageExtent(32 * n, 32))
    return GainMap(grid, np.array([values], dtype=float)), PatchSpec(int(32 * p_w_grid), 32)


class TestKernel:
    def test_center(self):
        assert kernel_eval(OverlapKernel(3, 5), 0, 0) == 1.0

    def test_support_edge(self):
        assert kernel_eval(OverlapKernel(3, 5), 3, 1.7) == 0.0

    def test_quarter(self):
        assert kernel_eval(OverlapKernel(4, 4), 2, 2) == 0.25

    def test_gaussian_center_and_sigma(self):
        k = OverlapKernel(4, 2, KernelShape.GAUSSIAN)
        assert kernel_eval(k, 0, 0) == 1.0
        assert kernel_eval(k, 2, 0) == pytest.approx(np.exp(-0.5))
        assert kernel_eval(k, 0, 1) == pytest.approx(np.exp(-0.5))

    @settings(max_examples=300)
    @given(
        st.floats(0.3, 20), st.floats(0.3, 20), st.floats(-40, 40), st.floats(-40, 40),
        st.sampled_from(list(KernelShape)),
    )
    def test_properties(self, pw, ph, dx, dy, shape):
        k = OverlapKernel(pw, ph, shape)
        v = kernel_eval(k, dx, dy)
        assert 0.0 <= v <= 1.0
        assert v == kernel_eval(k, -dx, dy) == kernel_eval(k, dx, -dy)
        if shape is KernelShape.LINEAR:
            assert v == pytest.approx(kernel_eval(k, dx, 0) * kernel_eval(k, 0, dy), abs=1e-15)
            if abs(dx) >= pw or abs(dy) >= ph:
                assert v == 0.0

    def test_window_matches_eval(self):
        k = OverlapKernel(2.5, 1.0)
        win = k.window()
        assert win.shape == (3, 5)
        assert win[1, 2] == 1.0
        assert win[0, 0] == pytest.approx(kernel_eval(k, -2, -1))


class TestISSGA:
    def test_single_cell(self):
        gm = GainMap(GridSpec(1, 1, ImageExtent(64, 64)), [[5.0]])
        sel = issga(gm, RouterConfig(1, PatchSpec(32, 32)))
        assert [(e.rank, e.center, e.score) for e in sel] == [(1, (0, 0), 5.0)]

    def test_far_cell_untouched(self):
        gm, patch = row_map([4, 0, 3])
        sel = issga(gm, RouterConfig(2, patch))
        assert [(e.center, e.score) for e in sel] == [((0, 0), 4.0), ((2, 0), 3.0)]

    def test_soft_subtraction_allows_neighbour(self):
        gm, patch = row_map([4, 3, 0])
        sel = issga(gm, RouterConfig(2, patch))
        assert [(e.center, e.score) for e in sel] == [((0, 0), 4.0), ((1, 0), 1.0)]

    def test_exhausted_map(self):
        gm = GainMap(GridSpec(3, 1, ImageExtent(96, 32)), np.zeros((1, 3)))
        sel = issga(gm, RouterConfig(3, PatchSpec(64, 32)))
        assert sel.centers == [(0, 0), (1, 0), (2, 0)]
        assert list(sel.scores) == [0.0, 0.0, 0.0]

    def test_exhausted_skips_taken(self):
        gm, patch = row_map([0, 0, 5, 0])
        sel = issga(gm, RouterConfig(4, patch))
        assert sel.centers == [(2, 0), (0, 0), (1, 0), (3, 0)]

    def test_tie_break_row_major(self):
        grid = GridSpec(3, 2, ImageExtent(96, 64))
        gm = GainMap(grid, [[1, 2, 0], [2, 0, 0]])
        sel = issga(gm, RouterConfig(1, PatchSpec(32, 32)))
        assert sel.centers == [(1, 0)]

    def test_budget_too_large(self):
        gm, patch = row_map([1, 2])
        with pytest.raises(ValueError):
            issga(gm, RouterConfig(3, patch))

    def test_input_not_mutated(self):
        gm, patch = row_map([4, 3, 2, 1])
        before = gm.values.copy()
        issga(gm, RouterConfig(4, patch))
        np.testing.assert_array_equal(gm.values, before)

    def test_rects_attached(self):
        grid = GridSpec(16, 16, ImageExtent(8192, 8192))
        v = np.zeros((16, 16))
        v[7, 7] = 3
        sel = issga(GainMap(grid, v), RouterConfig(1))
        assert sel[0].rect.as_tuple() == (3584, 3584, 4096, 4096)

    def test_gaussian_suppresses_more_at_mid_range(self):
        gm, patch = row_map([4, 3.5, 0], p_w_grid=2)
        lin = issga(gm, RouterConfig(2, patch, Strategy.ISSGA_LINEAR))
        gau = issga(gm, RouterConfig(2, patch, Strategy.ISSGA_GAUSSIAN))
        assert lin[1].score == pytest.approx(1.5)
        assert gau[1].score == pytest.approx(3.5 - 4 * np.exp(-0.5))


class TestRigid:
    def test_contrast_with_soft(self):
        gm, patch = row_map([4, 3, 0])
        sel = rigid_nms_select(gm, RouterConfig(2, patch))
        assert sel[0].center == (0, 0) and sel[0].score == 4.0
        assert sel[1].score == 0.0

    def test_single_positive(self):
        v = np.zeros((4, 4))
        v[2, 3] = 1.5
        gm = GainMap(GridSpec(4, 4, ImageExtent(64, 64)), v)
        sel = rigid_nms_select(gm, RouterConfig(1, PatchSpec(16, 16)))
        assert sel.centers == [(3, 2)] and sel[0].score == 1.5

    def test_well_separated_agree_with_issga(self):
        grid = GridSpec(20, 20, ImageExtent(640, 640))
        v = np.zeros((20, 20))
        for (x, y), s in {(1, 1): 5.0, (10, 2): 4.0, (3, 15): 3.0, (16, 16): 2.0}.items():
            v[y, x] = s
        gm = GainMap(grid, v)
        cfg = RouterConfig(4, PatchSpec(96, 96))  # 3 cells
        a, b, c = issga(gm, cfg), rigid_nms_select(gm, cfg), topk_select(gm, cfg)
        assert a.centers == b.centers == c.centers
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_neighbourhood_strict(self):
        # p = 2 cells: offsets with |d| < 2 are zeroed, |d| = 2 survives
        v = np.array([[1.0, 1, 9, 1, 1]])
        G = v.copy()
        _rigid_suppressor(2.0, 1.0)(G, 2, 0, 9.0)
        np.testing.assert_array_equal(G, [[1, 0, 0, 0, 1]])


def random_maps(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        h, w = rng.integers(1, 24, size=2)
        v = rng.gamma(0.7, 3.0, size=(h, w)) * (rng.random((h, w)) < rng.uniform(0.1, 1))
        if rng.random() < 0.3:
            v = np.round(v)  # plenty of ties
        yield v, float(rng.uniform(0.4, 6)), float(rng.uniform(0.4, 6)), int(rng.integers(1, h * w + 1))


@pytest.mark.parametrize("kind", ["linear", "gaussian", "rigid"])
def test_greedy_invariants(kind):
    for v, pw, ph, k in random_maps(300, {"linear": 0, "gaussian": 1, "rigid": 2}[kind]):
        sup = _rigid_suppressor(pw, ph) if kind == "rigid" else _soft_suppressor(OverlapKernel(pw, ph, kind))
        prev, seen = None, set()
        for i, (gx, gy, s, G) in enumerate(greedy_steps(v, k, sup)):
            assert G.min() >= 0
            if i == 0:
                assert s == v.max()
            if prev is not None:
                assert s <= prev
            assert (gx, gy) not in seen
            seen.add((gx, gy))
            prev = s
        assert len(seen) == k


def test_deterministic():
    rng = np.random.default_rng(4)
    grid = GridSpec(40, 30, ImageExtent(2560, 1920))
    gm = GainMap(grid, rng.uniform(0, 10, size=(30, 40)))
    for strat in Strategy:
        cfg = RouterConfig(25, PatchSpec(256, 256), strat)
        a, b = select_patches(gm, cfg), select_patches(gm, cfg)
        assert a.entries == b.entries


def test_select_rejects_oversized_patch():
    gm = GainMap(GridSpec(2, 2, ImageExtent(100, 100)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        select_patches(gm, RouterConfig(1, PatchSpec(512, 512)))


class TestQueryBudget:
    def grid(self):
        # 512 px patch on a 64 px stride: 8 x 8 = 64 cells per patch
        return GridSpec(128, 128, ImageExtent(8192, 8192))

    def test_lower_clamp(self):
        assert query_budget(GainMap.zeros(self.grid())) == 300

    def test_upper_clamp(self):
        v = np.zeros((128, 128))
        v[0, 0] = 1e6 * 64
        assert query_budget(GainMap(self.grid(), v)) == 3000

    def test_in_range(self):
        v = np.zeros((128, 128))
        v[0, 0] = 1234.4 * 64
        assert query_budget(GainMap(self.grid(), v)) == 1234

    def test_scale(self):
        v = np.zeros((128, 128))
        v[0, 0] = 1000 * 64
        assert query_budget(GainMap(self.grid(), v), QueryBudgetRule(scale=1.5)) == 1500

    def test_invalid_rule(self):
        with pytest.raises(ValueError):
            QueryBudgetRule(min_q=10, max_q=5)


def test_selection_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    grid = GridSpec(16, 16, ImageExtent(8192, 8192))
    sel = issga(GainMap(grid, rng.uniform(0, 36, size=(16, 16)) / 7), RouterConfig(10))
    path = tmp_path / "sel.csv"
    write_selection_csv(path, sel)
    assert path.read_text().splitlines()[0] == "rank,gx,gy,score,x1,y1,x2,y2"
    back = read_selection_csv(path)
    assert back.entries == sel.entries
