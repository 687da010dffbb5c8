"""
Gain maps from box annotations
==============================

Each grid cell scores the patch centred on it: the sum over objects of the
fraction of each object's area the patch contains, capped at M^2.
"""

import numpy as np

from patchroute import BBox, GridSpec, ImageExtent, PatchSpec
from patchroute.gainmap import build_gt_gainmap, build_gt_gainmap_fast, decode_expectation, dfl_target_weights, extract_peaks

# a 1024 px image with a 64 px grid, so a 256 px patch spans 4 x 4 cells
extent = ImageExtent(1024, 1024)
grid = GridSpec.from_stride(extent, 64)
patch = PatchSpec(256, 256)

rng = np.random.default_rng(0)
centres = np.concatenate([rng.normal(300, 30, (12, 2)), rng.normal([760, 640], 20, (5, 2))])
boxes = [BBox(x - 6, y - 6, x + 6, y + 6, 0, i) for i, (x, y) in enumerate(centres)]

gm = build_gt_gainmap_fast(boxes, grid, patch)
print("grid", grid.shape, "max cell", gm.values.max(), "total", round(gm.total(), 2))

# the separable builder agrees with the per-box reference loop
ref = build_gt_gainmap(boxes, grid, patch)
print("max |fast - naive| =", np.abs(ref.values - gm.values).max())

# local maxima are what the peak-margin loss sharpens
peaks = sorted(extract_peaks(gm.values), key=lambda p: -gm.at(*p))
print("strongest peaks (gx, gy):", peaks[:3])

# a predictor outputs logits over bins b = 0..M and decodes sum b^2 p_b
print("uniform logits decode to", decode_expectation(np.zeros(7)))
print("target 2.25 splits over bins", dfl_target_weights(2.25))
