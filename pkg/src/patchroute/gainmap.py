"""Gain maps: ground-truth construction, bin decoding, and the peak-margin loss.

A gain map assigns every grid cell the (capped) sum of IoF values between the
annotated boxes and the patch centered on that cell, i.e. the number of
objects a patch there would capture, counting partial objects fractionally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .geometry import (
    BBox,
    GridSpec,
    ImageExtent,
    PatchSpec,
    boxes_to_array,
    iof_many,
    patch_rects,
)

__all__ = [
    "BinConfig",
    "GainMap",
    "PeakSet",
    "build_gt_gainmap",
    "build_gt_gainmap_fast",
    "decode_expectation",
    "dfl_target_weights",
    "extract_peaks",
    "lpm_loss",
    "lpm_subgradient",
    "read_gainmap",
    "write_gainmap",
]

# 4-neighborhood as (dx, dy)
NEIGHBOR_SHIFTS = ((1, 0), (-1, 0), (0, 1), (0, -1))

PeakSet = frozenset  # of (gx, gy) tuples


@dataclass(frozen=True)
class BinConfig:
    M: int = 6

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("bin limit M must be >= 1")

    @property
    def cap(self) -> float:
        return float(self.M * self.M)


@dataclass(frozen=True)
class GainMap:
    """Non-negative scores on a grid; ``values`` has shape ``(grid_h, grid_w)``.

    The stored array is a read-only copy, so a map can be shared freely.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("gain values must be finite and non-negative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "GainMap":
        return cls(grid, np.zeros(grid.shape))

    def at(self, gx: int, gy: int) -> float:
        self.grid.check_index(gx, gy)
        return float(self.values[gy, gx])

    def total(self) -> float:
        return float(self.values.sum())


ArrayLike = Union[GainMap, np.ndarray, Sequence]


def _as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, GainMap):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _prepare_boxes(boxes, extent: ImageExtent) -> np.ndarray:
    arr = boxes if isinstance(boxes, np.ndarray) else boxes_to_array(boxes)
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    if len(arr) and np.any((arr[:, 2] <= arr[:, 0]) | (arr[:, 3] <= arr[:, 1])):
        raise ValueError("zero-area box in gain-map input")
    out = arr.copy()
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, extent.width_px)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, extent.height_px)
    if len(out) and np.any((out[:, 2] <= out[:, 0]) | (out[:, 3] <= out[:, 1])):
        raise ValueError("box lies outside the image extent")
    return out


def build_gt_gainmap(
    boxes: Iterable[BBox] | np.ndarray,
    grid: GridSpec,
    patch: PatchSpec,
    bins: BinConfig = BinConfig(),
) -> GainMap:
    """Reference builder: direct IoF against every clamped candidate rect.

    Boxes are clipped to the image first, so a box hanging over the border
    contributes relative to its visible area.
    """
    arr = _prepare_boxes(boxes, grid.extent)
    rects = patch_rects(grid, patch)
    raw = np.zeros(grid.size)
    for box in arr:
        raw += iof_many(box[None, :], rects)[0]
    return GainMap(grid, np.minimum(raw, bins.cap).reshape(grid.shape))


def _axis_overlap(lo: np.ndarray, hi: np.ndarray, centers: np.ndarray, half: float, limit: float) -> np.ndarray:
    # overlap length of [lo, hi] with [c - half, c + half] ∩ [0, limit]
    left = np.maximum(np.maximum(centers - half, 0.0)[None, :], lo[:, None])
    right = np.minimum(np.minimum(centers + half, limit)[None, :], hi[:, None])
    return np.clip(right - left, 0.0, None)


def build_gt_gainmap_fast(
    boxes: Iterable[BBox] | np.ndarray,
    grid: GridSpec,
    patch: PatchSpec,
    bins: BinConfig = BinConfig(),
) -> GainMap:
    """Same map as :func:`build_gt_gainmap`, via separable overlap profiles.

    Intersection of a box with an axis-aligned rect factorizes into an
    x-overlap times a y-overlap, so each box contributes the rank-one tile
    ``oy ⊗ ox / area``. The tiles of all boxes are summed with one matrix
    product, ``O(N * (h + w))`` profile work plus a BLAS ``(h, N) @ (N, w)``.
    """
    arr = _prepare_boxes(boxes, grid.extent)
    if len(arr) == 0:
        return GainMap.zeros(grid)
    ox = _axis_overlap(arr[:, 0], arr[:, 2], grid.centers_x(), 0.5 * patch.patch_w_px, grid.extent.width_px)
    oy = _axis_overlap(arr[:, 1], arr[:, 3], grid.centers_y(), 0.5 * patch.patch_h_px, grid.extent.height_px)
    area = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    raw = (oy / area[:, None]).T @ ox
    return GainMap(grid, np.clip(raw, 0.0, bins.cap))


def decode_expectation(z: np.ndarray | Sequence[float]) -> float | np.ndarray:
    """Expected squared bin index under ``softmax(z)`` along the last axis.

    ``z`` holds logits for bins ``0..M``; the result lies in ``[0, M**2]``.
    Accepts a single logit vector or a stack such as ``(h, w, M + 1)``.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    b2 = np.arange(z.shape[-1], dtype=np.float64) ** 2
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    out = (e @ b2) / e.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def dfl_target_weights(g: float, bins: BinConfig = BinConfig()) -> tuple[int, int, float, float]:
    """Split a continuous target onto its two neighbouring bins.

    Bins are indexed on the square-root scale ``t = sqrt(g)`` to match the
    ``b**2`` decoding. Returns ``(b_lo, b_hi, w_lo, w_hi)``.
    """
    if not (0.0 <= g <= bins.cap) or math.isnan(g):
        raise ValueError(f"target {g} outside [0, {bins.cap}]")
    t = math.sqrt(g)
    b_lo = min(int(math.floor(t)), bins.M)
    b_hi = min(b_lo + 1, bins.M)
    w_hi = t - b_lo
    return b_lo, b_hi, 1.0 - w_hi, w_hi


def extract_peaks(gt: ArrayLike) -> PeakSet:
    """Cells that are positive and no smaller than any in-bounds 4-neighbour.

    Plateaus are kept whole, so a uniform dense cluster yields all its cells.
    """
    v = _as_array(gt)
    h, w = v.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    mask = v > 0
    for dx, dy in NEIGHBOR_SHIFTS:
        mask &= v >= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    gy, gx = np.nonzero(mask)
    return frozenset(zip(gx.tolist(), gy.tolist()))


def _peak_terms(v: np.ndarray, peaks: Iterable[tuple[int, int]]):
    pts = np.array(sorted(peaks), dtype=np.int64).reshape(-1, 2)
    h, w = v.shape
    px, py = pts[:, 0], pts[:, 1]
    if len(pts) and (px.min() < 0 or py.min() < 0 or px.max() >= w or py.max() >= h):
        raise IndexError("peak location outside the map")
    qx = px[:, None] + np.array([d[0] for d in NEIGHBOR_SHIFTS])[None, :]
    qy = py[:, None] + np.array([d[1] for d in NEIGHBOR_SHIFTS])[None, :]
    valid = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
    deg = valid.sum(axis=1)
    return px, py, np.clip(qx, 0, w - 1), np.clip(qy, 0, h - 1), valid, deg


def lpm_loss(pred: ArrayLike, peaks: Iterable[tuple[int, int]], margin: float = 0.05) -> float:
    """Hinge loss pushing each peak at least ``margin`` above its neighbours.

    Per peak, the hinge is averaged over its in-bounds 4-neighbours; the
    result is then averaged over peaks. Zero for an empty peak set.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    v = _as_array(pred)
    px, py, qx, qy, valid, deg = _peak_terms(v, peaks)
    if len(px) == 0:
        return 0.0
    hinge = np.maximum(0.0, v[qy, qx] + margin - v[py, px][:, None]) * valid
    per_peak = np.divide(hinge.sum(axis=1), deg, out=np.zeros(len(px)), where=deg > 0)
    return float(per_peak.mean())


def lpm_subgradient(pred: ArrayLike, peaks: Iterable[tuple[int, int]], margin: float = 0.05) -> np.ndarray:
    """Subgradient of :func:`lpm_loss` with respect to every cell of ``pred``.

    A hinge exactly at zero counts as inactive.
    """
    v = _as_array(pred)
    grad = np.zeros_like(v)
    px, py, qx, qy, valid, deg = _peak_terms(v, peaks)
    n = len(px)
    if n == 0:
        return grad
    active = valid & (v[qy, qx] + margin - v[py, px][:, None] > 0)
    weight = np.divide(1.0, n * deg, out=np.zeros(n), where=deg > 0)
    w_terms = active * weight[:, None]
    np.add.at(grad, (qy[active], qx[active]), w_terms[active])
    np.add.at(grad, (py, px), -w_terms.sum(axis=1))
    return grad


def write_gainmap(path: str | Path, gm: GainMap) -> None:
    """Text format: header ``grid_w grid_h image_w image_h``, then one row per line."""
    g = gm.grid
    lines = [f"{g.grid_w} {g.grid_h} {g.extent.width_px} {g.extent.height_px}"]
    for row in gm.values:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_gainmap(path: str | Path) -> GainMap:
    text = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in text if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise ValueError(f"{path}: malformed gain-map header")
    gw, gh, iw, ih = (int(t) for t in rows[0])
    grid = GridSpec(gw, gh, ImageExtent(iw, ih))
    body = rows[1:]
    if len(body) != gh or any(len(r) != gw for r in body):
        raise ValueError(f"{path}: expected {gh} rows of {gw} values")
    return GainMap(grid, np.array(body, dtype=np.float64))
