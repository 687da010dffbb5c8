"""Exact object coverage: evaluation, greedy max-coverage, and a brute-force oracle.

An object counts as covered by a patch when their IoF reaches the threshold
``tau``. Coverage of a set of patches is the number of distinct objects
covered by at least one of them.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import BBox, GridSpec, PatchSpec, PixelRect, boxes_to_array, iof_many, patch_rects
from .router import PatchSelection, SelectedPatch

__all__ = [
    "CoverageCriterion",
    "CoverageReport",
    "CoverageCurve",
    "SmallInstance",
    "coverage_matrix",
    "grid_coverage_matrix",
    "covered_set",
    "greedy_exact_cover",
    "greedy_exact_cover_grid",
    "brute_force_optimal",
    "evaluate_selection",
    "coverage_curve",
    "APPROX_RATIO",
]

APPROX_RATIO = 1.0 - 1.0 / math.e


@dataclass(frozen=True)
class CoverageCriterion:
    iof_threshold: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.iof_threshold <= 1.0):
            raise ValueError("iof_threshold must lie in (0, 1]")


@dataclass
class CoverageReport:
    total_objects: int
    covered_objects: int
    rate: float
    per_rank_marginal: list[int] = field(default_factory=list)
    per_image_rates: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class SmallInstance:
    """Instance small enough for exhaustive search over K-subsets."""

    boxes: tuple[BBox, ...]
    rects: tuple[PixelRect, ...]
    budget: int

    MAX_BOXES = 20
    MAX_RECTS = 16
    MAX_BUDGET = 5

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "rects", tuple(self.rects))
        if len(self.boxes) > self.MAX_BOXES or len(self.rects) > self.MAX_RECTS:
            raise ValueError("instance too large for brute force")
        if not (1 <= self.budget <= min(self.MAX_BUDGET, len(self.rects))):
            raise ValueError(f"budget must be in [1, min({self.MAX_BUDGET}, #rects)]")


def _rects_array(rects) -> np.ndarray:
    if isinstance(rects, np.ndarray):
        return rects.reshape(-1, 4).astype(float)
    return np.array([r.as_tuple() for r in rects], dtype=float).reshape(-1, 4)


def _boxes_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(float)
    return boxes_to_array(boxes)


def coverage_matrix(boxes, rects, c: CoverageCriterion = CoverageCriterion()) -> np.ndarray:
    """Boolean ``(n_rects, n_boxes)``: does rect ``r`` cover box ``b``."""
    b, r = _boxes_array(boxes), _rects_array(rects)
    if len(b) == 0 or len(r) == 0:
        return np.zeros((len(r), len(b)), dtype=bool)
    return (iof_many(b, r) >= c.iof_threshold).T


def grid_coverage_matrix(boxes, grid: GridSpec, patch: PatchSpec, c: CoverageCriterion = CoverageCriterion()) -> np.ndarray:
    """:func:`coverage_matrix` against every grid candidate, row-major.

    Uses the x/y factorization of the intersection, which is much cheaper
    than the generic pairwise path on large grids.
    """
    b = _boxes_array(boxes)
    if len(b) == 0:
        return np.zeros((grid.size, 0), dtype=bool)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    hw, hh = 0.5 * patch.patch_w_px, 0.5 * patch.patch_h_px
    cx, cy = grid.centers_x(), grid.centers_y()
    W, H = float(grid.extent.width_px), float(grid.extent.height_px)
    ox = np.clip(
        np.minimum(b[:, 2, None], np.minimum(cx + hw, W)[None, :]) - np.maximum(b[:, 0, None], np.maximum(cx - hw, 0.0)[None, :]),
        0.0,
        None,
    )
    oy = np.clip(
        np.minimum(b[:, 3, None], np.minimum(cy + hh, H)[None, :]) - np.maximum(b[:, 1, None], np.maximum(cy - hh, 0.0)[None, :]),
        0.0,
        None,
    )
    # (n_boxes, grid_h, grid_w)
    inter = ox[:, None, :] * oy[:, :, None]
    covered = np.minimum(1.0, inter / area[:, None, None]) >= c.iof_threshold
    return covered.reshape(len(b), -1).T


def covered_set(boxes: Sequence[BBox], rects, c: CoverageCriterion = CoverageCriterion()) -> set[int]:
    if len(boxes) == 0:
        return set()
    hit = coverage_matrix(boxes, rects, c).any(axis=0)
    return {b.instance_id for b, h in zip(boxes, hit) if h}


def _greedy_on_matrix(cov: np.ndarray, budget: int) -> tuple[list[int], list[int]]:
    n_cand = cov.shape[0]
    if budget > n_cand:
        raise ValueError(f"budget {budget} exceeds the {n_cand} candidates")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    uncovered = np.ones(cov.shape[1], dtype=bool)
    available = np.ones(n_cand, dtype=bool)
    picks, gains = [], []
    for _ in range(budget):
        gain = cov[:, uncovered].sum(axis=1) if uncovered.any() else np.zeros(n_cand, dtype=np.int64)
        gain = np.where(available, gain, -1)
        i = int(np.argmax(gain))
        picks.append(i)
        gains.append(int(gain[i]))
        available[i] = False
        uncovered &= ~cov[i]
    return picks, gains


def _selection_from_picks(picks, gains, rects: np.ndarray, grid_w: int | None) -> PatchSelection:
    entries = []
    for rank, (i, g) in enumerate(zip(picks, gains), start=1):
        gy, gx = divmod(i, grid_w) if grid_w else (0, i)
        entries.append(SelectedPatch(rank, gx, gy, float(g), PixelRect(*rects[i])))
    return PatchSelection(entries)


def greedy_exact_cover(
    boxes,
    candidate_rects,
    budget: int,
    c: CoverageCriterion = CoverageCriterion(),
    grid_w: int | None = None,
) -> PatchSelection:
    """Classic max-coverage greedy on true marginal gains.

    Each step takes the candidate covering the most still-uncovered objects,
    ties to the lowest candidate index. Scores are those marginal counts.
    Without ``grid_w`` the candidate index is reported as ``gx`` with
    ``gy = 0``; with it, the index is unpacked row-major.
    """
    rects = _rects_array(candidate_rects)
    picks, gains = _greedy_on_matrix(coverage_matrix(boxes, rects, c), budget)
    return _selection_from_picks(picks, gains, rects, grid_w)


def greedy_exact_cover_grid(
    boxes, grid: GridSpec, patch: PatchSpec, budget: int, c: CoverageCriterion = CoverageCriterion()
) -> PatchSelection:
    """:func:`greedy_exact_cover` with every grid cell's patch as a candidate."""
    rects = patch_rects(grid, patch)
    picks, gains = _greedy_on_matrix(grid_coverage_matrix(boxes, grid, patch, c), budget)
    return _selection_from_picks(picks, gains, rects, grid.grid_w)


def brute_force_optimal(inst: SmallInstance, c: CoverageCriterion = CoverageCriterion()) -> tuple[int, tuple[int, ...]]:
    """Best coverage over all K-subsets of candidates, by enumeration.

    Returns ``(coverage, subset)``; among optimal subsets the
    lexicographically smallest tuple of candidate indices is reported.
    """
    cov = coverage_matrix(list(inst.boxes), list(inst.rects), c)
    masks = [sum(1 << j for j in np.flatnonzero(row)) for row in cov]
    best, best_subset = -1, ()
    for subset in itertools.combinations(range(len(masks)), inst.budget):
        u = 0
        for i in subset:
            u |= masks[i]
        n = u.bit_count()
        if n > best:
            best, best_subset = n, subset
    return best, best_subset


def _marginals(boxes, sel: PatchSelection, c: CoverageCriterion) -> tuple[int, np.ndarray]:
    n = len(boxes)
    if len(sel) == 0 or n == 0:
        return n, np.zeros(len(sel), dtype=np.int64)
    cov = coverage_matrix(boxes, sel.rects_array(), c)
    hit = cov.any(axis=0)
    first = np.argmax(cov, axis=0)[hit]
    return n, np.bincount(first, minlength=len(sel)).astype(np.int64)


def evaluate_selection(boxes, sel: PatchSelection, c: CoverageCriterion = CoverageCriterion()) -> CoverageReport:
    """Coverage of a selection, with each object credited to its earliest covering rank."""
    n, marg = _marginals(boxes, sel, c)
    covered = int(marg.sum())
    rate = covered / n if n else 1.0
    return CoverageReport(n, covered, rate, marg.tolist(), [rate])


@dataclass
class CoverageCurve:
    """Coverage statistics over a dataset for budgets ``1..k_max``.

    ``rates[i, k-1]`` is image ``i``'s coverage rate with the first ``k``
    picks; ``marginals[i, k-1]`` the objects first covered at rank ``k``.
    """

    rates: np.ndarray
    marginals: np.ndarray
    totals: np.ndarray

    @property
    def k_max(self) -> int:
        return self.rates.shape[1]

    @property
    def avg_rate(self) -> np.ndarray:
        return self.rates.mean(axis=0)

    @property
    def avg_marginal(self) -> np.ndarray:
        return self.marginals.mean(axis=0)

    def per_image_rates(self, k: int | None = None) -> np.ndarray:
        return self.rates[:, (k or self.k_max) - 1]

    def object_rate(self, k: int | None = None) -> float:
        """Pooled rate: covered objects over all objects, at budget ``k``."""
        k = k or self.k_max
        total = self.totals.sum()
        return float(self.marginals[:, :k].sum() / total) if total else 1.0


Selector = Callable[[object, int], PatchSelection]


def _scene_marginals(args) -> tuple[int, np.ndarray]:
    scene, selector, k_max, c = args
    sel = selector(scene, k_max)
    n, marg = _marginals(scene.boxes, sel, c)
    out = np.zeros(k_max, dtype=np.int64)
    out[: len(marg)] = marg[:k_max]
    return n, out


def coverage_curve(
    scenes: Sequence,
    selector: Selector,
    k_max: int,
    c: CoverageCriterion = CoverageCriterion(),
    jobs: int = 1,
) -> CoverageCurve:
    """Average coverage versus budget for a prefix-nested greedy selector.

    ``selector(scene, k)`` must return ``k`` ranked picks whose first ``j``
    entries equal the selection at budget ``j``; every greedy strategy here
    has that property, so one run at ``k_max`` yields the whole curve.
    Scenes need a ``boxes`` attribute. With ``jobs > 1`` scenes are spread
    over worker processes; results do not depend on the schedule.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    work = [(s, selector, k_max, c) for s in scenes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_scene_marginals, work))
    else:
        results = [_scene_marginals(w) for w in work]
    totals = np.array([n for n, _ in results], dtype=np.int64)
    marginals = np.array([m for _, m in results], dtype=np.int64).reshape(len(results), k_max)
    cum = np.cumsum(marginals, axis=1)
    safe = np.where(totals > 0, totals, 1)[:, None]
    rates = np.where(totals[:, None] > 0, cum / safe, 1.0)
    return CoverageCurve(rates, marginals, totals)
