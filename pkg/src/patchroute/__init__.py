"""Coverage-maximizing sparse patch routing for ultra-high-resolution detection.

Gain-map targets from annotations, greedy soft-subtraction patch selection
and its baselines, exact coverage analytics, and patch-local anchor
projection.
"""

from .coverage import (
    CoverageCriterion,
    CoverageReport,
    SmallInstance,
    brute_force_optimal,
    coverage_curve,
    covered_set,
    evaluate_selection,
    greedy_exact_cover,
    greedy_exact_cover_grid,
)
from .dataset import Scene, SceneDataset, load_annotations, save_annotations, tile_dataset, tile_scene
from .gainmap import (
    BinConfig,
    GainMap,
    build_gt_gainmap,
    build_gt_gainmap_fast,
    decode_expectation,
    dfl_target_weights,
    extract_peaks,
    lpm_loss,
    lpm_subgradient,
    read_gainmap,
    write_gainmap,
)
from .geometry import (
    AnchorBox,
    BBox,
    GridSpec,
    ImageExtent,
    PatchSpec,
    PixelRect,
    grid_to_pixel_center,
    iof,
    patch_rect_at,
    project_anchor_to_global,
    project_anchor_to_patch,
)
from .router import (
    OverlapKernel,
    PatchSelection,
    QueryBudgetRule,
    RouterConfig,
    Strategy,
    issga,
    kernel_eval,
    query_budget,
    rigid_nms_select,
    select_patches,
)
from .synthetic import ClusterParams, clustered_dataset, clustered_scene

__version__ = "0.1.0"
