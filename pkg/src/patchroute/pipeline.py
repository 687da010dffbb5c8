"""Run a named selection strategy on an annotated scene."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

from .coverage import CoverageCriterion, Selector, greedy_exact_cover_grid
from .dataset import Scene
from .gainmap import BinConfig, GainMap, build_gt_gainmap_fast
from .geometry import GridSpec, PatchSpec
from .router import PatchSelection, RouterConfig, Strategy, select_patches

EXACT_GREEDY = "exact-greedy"
STRATEGIES = (Strategy.ISSGA_LINEAR.value, Strategy.ISSGA_GAUSSIAN.value, Strategy.RIGID_NMS.value, EXACT_GREEDY)


@dataclass(frozen=True)
class RoutingSetup:
    grid_stride: float = 64.0
    patch: PatchSpec = PatchSpec()
    bins: BinConfig = BinConfig()
    criterion: CoverageCriterion = CoverageCriterion()

    def grid_for(self, scene: Scene) -> GridSpec:
        return GridSpec.from_stride(scene.extent, self.grid_stride)


def scene_gainmap(scene: Scene, setup: RoutingSetup = RoutingSetup()) -> GainMap:
    return build_gt_gainmap_fast(scene.boxes, setup.grid_for(scene), setup.patch, setup.bins)


def select_for_scene(scene: Scene, budget: int, strategy: str, setup: RoutingSetup = RoutingSetup()) -> PatchSelection:
    """Select ``budget`` patches on ``scene`` with the named strategy.

    Gain-map strategies run on the ground-truth map built from the scene's
    boxes; ``exact-greedy`` works on the true coverage sets instead.
    """
    grid = setup.grid_for(scene)
    if strategy == EXACT_GREEDY:
        return greedy_exact_cover_grid(scene.boxes, grid, setup.patch, budget, setup.criterion)
    gm = build_gt_gainmap_fast(scene.boxes, grid, setup.patch, setup.bins)
    return select_patches(gm, RouterConfig(budget, setup.patch, Strategy(strategy)))


def selector(strategy: str, setup: RoutingSetup = RoutingSetup()) -> Selector:
    """Picklable ``(scene, k) -> PatchSelection`` for :func:`coverage_curve`."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    return partial(_select, strategy=strategy, setup=setup)


def _select(scene: Scene, k: int, *, strategy: str, setup: RoutingSetup) -> PatchSelection:
    return select_for_scene(scene, k, strategy, setup)
