"""
Soft subtraction versus rigid suppression
=========================================

Both pick the highest cell first. Rigid suppression then zeroes every cell
whose patch would overlap the pick; soft subtraction only lowers neighbours
in proportion to the overlap, so a dense cluster can receive several patches.
"""

import numpy as np

from patchroute import (
    ClusterParams,
    GainMap,
    GridSpec,
    ImageExtent,
    PatchSpec,
    RouterConfig,
    Strategy,
    clustered_scene,
    evaluate_selection,
    select_patches,
)
from patchroute.pipeline import RoutingSetup, scene_gainmap, select_for_scene

# the smallest case: values [4, 3, 0] with a two-cell patch
row = GainMap(GridSpec(3, 1, ImageExtent(96, 64)), [[4.0, 3.0, 0.0]])
for strat in (Strategy.ISSGA_LINEAR, Strategy.RIGID_NMS):
    sel = select_patches(row, RouterConfig(2, PatchSpec(64, 64), strat))
    print(f"{strat.value:>14s}:", [(e.gx, e.score) for e in sel])

# a clustered 8192 px scene with the default 512 px patch and K = 40
scene = clustered_scene(np.random.default_rng(3), ClusterParams())
setup = RoutingSetup()
print(f"\nscene: {len(scene.boxes)} objects, gain-map total {scene_gainmap(scene, setup).total():.0f}")
for name in ("issga-linear", "issga-gaussian", "rigid-nms", "exact-greedy"):
    rep = evaluate_selection(scene.boxes, select_for_scene(scene, 40, name, setup))
    print(f"{name:>14s}: {rep.covered_objects}/{rep.total_objects} covered ({rep.rate:.3f})")
