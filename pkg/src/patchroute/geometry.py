"""Pixel-space and grid-space primitives.

Boxes are axis-aligned ``(x_min, y_min, x_max, y_max)`` in pixels. The
candidate-patch grid places one cell center at ``((gx + 0.5) * s_x,
(gy + 0.5) * s_y)`` where ``s_x = width / grid_w`` and ``s_y = height /
grid_h``. Grid coordinates are always written ``(gx, gy)``, i.e. (column,
row); arrays indexed by the grid are shaped ``(grid_h, grid_w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ImageExtent",
    "BBox",
    "GridSpec",
    "PatchSpec",
    "PixelRect",
    "AnchorBox",
    "grid_to_pixel_center",
    "pixel_to_grid",
    "patch_rect_at",
    "patch_rects",
    "iof",
    "iof_many",
    "boxes_to_array",
    "clip_box",
    "project_anchor_to_patch",
    "project_anchor_to_global",
]


@dataclass(frozen=True)
class ImageExtent:
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"image extent must be positive, got {self.width_px}x{self.height_px}")


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    category_id: int = 0
    instance_id: int = 0

    def __post_init__(self):
        # the area test also catches widths so small that w * h underflows
        if not (self.x_min < self.x_max and self.y_min < self.y_max) or self.area <= 0.0:
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class GridSpec:
    grid_w: int
    grid_h: int
    extent: ImageExtent

    def __post_init__(self):
        if self.grid_w <= 0 or self.grid_h <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.grid_w > self.extent.width_px or self.grid_h > self.extent.height_px:
            raise ValueError("grid cannot be finer than one cell per pixel")

    @classmethod
    def from_stride(cls, extent: ImageExtent, stride: float) -> "GridSpec":
        """Grid whose cells are (at most) ``stride`` pixels on a side."""
        if stride <= 0:
            raise ValueError("stride must be positive")
        gw = max(1, math.ceil(extent.width_px / stride))
        gh = max(1, math.ceil(extent.height_px / stride))
        return cls(gw, gh, extent)

    @property
    def stride_x(self) -> float:
        return self.extent.width_px / self.grid_w

    @property
    def stride_y(self) -> float:
        return self.extent.height_px / self.grid_h

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    @property
    def size(self) -> int:
        return self.grid_w * self.grid_h

    def check_index(self, gx: int, gy: int) -> None:
        if not (0 <= gx < self.grid_w and 0 <= gy < self.grid_h):
            raise IndexError(f"grid index ({gx}, {gy}) outside {self.grid_w}x{self.grid_h} grid")

    def centers_x(self) -> np.ndarray:
        return (np.arange(self.grid_w) + 0.5) * self.stride_x

    def centers_y(self) -> np.ndarray:
        return (np.arange(self.grid_h) + 0.5) * self.stride_y


@dataclass(frozen=True)
class PatchSpec:
    patch_w_px: int = 512
    patch_h_px: int = 512

    def __post_init__(self):
        if self.patch_w_px <= 0 or self.patch_h_px <= 0:
            raise ValueError("patch dimensions must be positive")

    def check_fits(self, extent: ImageExtent) -> None:
        if self.patch_w_px > extent.width_px or self.patch_h_px > extent.height_px:
            raise ValueError(
                f"patch {self.patch_w_px}x{self.patch_h_px} larger than image "
                f"{extent.width_px}x{extent.height_px}"
            )

    def in_grid_units(self, grid: GridSpec) -> tuple[float, float]:
        """Patch size measured in grid cells (real-valued, not rounded)."""
        return self.patch_w_px / grid.stride_x, self.patch_h_px / grid.stride_y


@dataclass(frozen=True)
class PixelRect:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate rect ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class AnchorBox:
    """Normalized ``(cx, cy, w, h)`` box.

    Global anchors live in ``[0, 1]^4``. Patch-local anchors produced by
    :func:`project_anchor_to_patch` may leave that range, so the constructor
    does not range-check; use :meth:`in_unit_cube` where it matters.
    """

    cx: float
    cy: float
    w: float
    h: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def in_unit_cube(self) -> bool:
        return all(0.0 <= v <= 1.0 for v in self.as_tuple())


def grid_to_pixel_center(g: GridSpec, gx: int, gy: int) -> tuple[float, float]:
    g.check_index(gx, gy)
    return (gx + 0.5) * g.stride_x, (gy + 0.5) * g.stride_y


def pixel_to_grid(g: GridSpec, px: float, py: float) -> tuple[int, int]:
    """Index of the cell containing pixel ``(px, py)``."""
    if not (0 <= px < g.extent.width_px and 0 <= py < g.extent.height_px):
        raise IndexError(f"pixel ({px}, {py}) outside image")
    gx = min(int(px // g.stride_x), g.grid_w - 1)
    gy = min(int(py // g.stride_y), g.grid_h - 1)
    return gx, gy


def patch_rect_at(g: GridSpec, p: PatchSpec, gx: int, gy: int) -> PixelRect:
    """Patch rectangle centered on cell ``(gx, gy)``, clamped to the image."""
    cx, cy = grid_to_pixel_center(g, gx, gy)
    hw, hh = 0.5 * p.patch_w_px, 0.5 * p.patch_h_px
    return PixelRect(
        max(0.0, cx - hw),
        max(0.0, cy - hh),
        min(float(g.extent.width_px), cx + hw),
        min(float(g.extent.height_px), cy + hh),
    )


def patch_rects(g: GridSpec, p: PatchSpec) -> np.ndarray:
    """All candidate rects as an ``(grid_h * grid_w, 4)`` array, row-major."""
    hw, hh = 0.5 * p.patch_w_px, 0.5 * p.patch_h_px
    cx = g.centers_x()
    cy = g.centers_y()
    x1 = np.maximum(0.0, cx - hw)
    x2 = np.minimum(float(g.extent.width_px), cx + hw)
    y1 = np.maximum(0.0, cy - hh)
    y2 = np.minimum(float(g.extent.height_px), cy + hh)
    out = np.empty((g.grid_h, g.grid_w, 4))
    out[..., 0] = x1[None, :]
    out[..., 1] = y1[:, None]
    out[..., 2] = x2[None, :]
    out[..., 3] = y2[:, None]
    return out.reshape(-1, 4)


def iof(box: BBox, rect: PixelRect) -> float:
    """Intersection area over the box's own area."""
    area = (box.x_max - box.x_min) * (box.y_max - box.y_min)
    if not area > 0:
        raise ValueError("iof of a zero-area box is undefined")
    iw = min(box.x_max, rect.x2) - max(box.x_min, rect.x1)
    ih = min(box.y_max, rect.y2) - max(box.y_min, rect.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return min(1.0, (iw * ih) / area)


def iof_many(boxes: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Pairwise IoF matrix of shape ``(len(boxes), len(rects))``.

    Both inputs are ``(n, 4)`` arrays in xyxy order.
    """
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    rects = np.asarray(rects, dtype=float).reshape(-1, 4)
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    if np.any(area <= 0):
        raise ValueError("iof of a zero-area box is undefined")
    iw = np.minimum(boxes[:, None, 2], rects[None, :, 2]) - np.maximum(boxes[:, None, 0], rects[None, :, 0])
    ih = np.minimum(boxes[:, None, 3], rects[None, :, 3]) - np.maximum(boxes[:, None, 1], rects[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    return np.minimum(1.0, inter / area[:, None])


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=float)
    return arr.reshape(-1, 4)


def clip_box(box: BBox, extent: ImageExtent) -> BBox | None:
    """Clip to the image; ``None`` when nothing of positive area remains."""
    x1 = min(max(box.x_min, 0.0), extent.width_px)
    y1 = min(max(box.y_min, 0.0), extent.height_px)
    x2 = min(max(box.x_max, 0.0), extent.width_px)
    y2 = min(max(box.y_max, 0.0), extent.height_px)
    if x2 <= x1 or y2 <= y1 or (x2 - x1) * (y2 - y1) <= 0.0:
        return None
    return BBox(x1, y1, x2, y2, box.category_id, box.instance_id)


def _check_rect(rect: PixelRect | Sequence[float]) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = rect.as_tuple() if isinstance(rect, PixelRect) else tuple(rect)
    if not (x2 > x1 and y2 > y1):
        raise ValueError("projection onto a degenerate rect")
    return x1, y1, x2, y2


def project_anchor_to_patch(a: AnchorBox, rect: PixelRect, extent: ImageExtent) -> AnchorBox:
    """Re-express a global normalized anchor in the frame of ``rect``.

    Anchors outside the patch map outside ``[0, 1]``; no clamping is done.
    """
    x1, y1, x2, y2 = _check_rect(rect)
    W, H = extent.width_px, extent.height_px
    pw, ph = x2 - x1, y2 - y1
    return AnchorBox(
        (a.cx * W - x1) / pw,
        (a.cy * H - y1) / ph,
        a.w * W / pw,
        a.h * H / ph,
    )


def project_anchor_to_global(a_local: AnchorBox, rect: PixelRect, extent: ImageExtent) -> AnchorBox:
    x1, y1, x2, y2 = _check_rect(rect)
    W, H = extent.width_px, extent.height_px
    pw, ph = x2 - x1, y2 - y1
    return AnchorBox(
        (a_local.cx * pw + x1) / W,
        (a_local.cy * ph + y1) / H,
        a_local.w * pw / W,
        a_local.h * ph / H,
    )
