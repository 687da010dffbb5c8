"""Seeded synthetic scenes.

Clustered scenes follow a Matérn-style cluster process: parent centers are
uniform over the image, each parent spawns a Poisson number of boxes with
Gaussian scatter around it, and an optional uniform background is added on
top (off by default).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .coverage import SmallInstance
from .dataset import Scene, SceneDataset
from .geometry import BBox, ImageExtent, PixelRect

__all__ = ["ClusterParams", "clustered_scene", "clustered_dataset", "random_small_instance"]


@dataclass(frozen=True)
class ClusterParams:
    image_size: int = 8192
    clusters_mean: float = 6.0
    boxes_per_cluster_mean: float = 100.0
    scatter_px: float = 100.0
    background_mean: float = 0.0
    box_min_px: float = 8.0
    box_max_px: float = 48.0

    @classmethod
    def from_mapping(cls, m: dict) -> "ClusterParams":
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in m.items():
            if k in names:
                kw[k] = int(v) if k == "image_size" else float(v)
        return cls(**kw)


def _boxes_at(rng: np.random.Generator, centers: np.ndarray, p: ClusterParams) -> np.ndarray:
    n = len(centers)
    wh = rng.uniform(p.box_min_px, p.box_max_px, size=(n, 2))
    xy = centers - wh / 2
    out = np.concatenate([xy, xy + wh], axis=1)
    np.clip(out, 0.0, p.image_size, out=out)
    return out


def clustered_scene(rng: np.random.Generator, p: ClusterParams = ClusterParams(), image_id=0) -> Scene:
    S = p.image_size
    n_clusters = rng.poisson(p.clusters_mean)
    parents = rng.uniform(0, S, size=(n_clusters, 2))
    counts = rng.poisson(p.boxes_per_cluster_mean, size=n_clusters)
    pts = [rng.normal(parents[i], p.scatter_px, size=(counts[i], 2)) for i in range(n_clusters)]
    pts.append(rng.uniform(0, S, size=(rng.poisson(p.background_mean), 2)))
    centers = np.concatenate(pts, axis=0) if pts else np.zeros((0, 2))
    centers = centers[(centers >= 0).all(axis=1) & (centers < S).all(axis=1)]
    arr = _boxes_at(rng, centers, p)
    keep = (arr[:, 2] > arr[:, 0]) & (arr[:, 3] > arr[:, 1])
    boxes = [BBox(*map(float, row), category_id=0, instance_id=i) for i, row in enumerate(arr[keep])]
    return Scene(image_id, ImageExtent(S, S), boxes)


def clustered_dataset(seed: int, n_scenes: int, p: ClusterParams = ClusterParams()) -> SceneDataset:
    rng = np.random.default_rng(seed)
    return SceneDataset([clustered_scene(rng, p, i) for i in range(n_scenes)], {0: "object"})


def random_small_instance(rng: np.random.Generator, canvas: float = 256.0) -> SmallInstance:
    """A random instance within the brute-force size limits."""
    n_boxes = int(rng.integers(1, SmallInstance.MAX_BOXES + 1))
    n_rects = int(rng.integers(1, SmallInstance.MAX_RECTS + 1))
    k = int(rng.integers(1, min(SmallInstance.MAX_BUDGET, n_rects) + 1))
    boxes = []
    for i in range(n_boxes):
        w, h = rng.uniform(4, 40, size=2)
        x, y = rng.uniform(0, canvas - w), rng.uniform(0, canvas - h)
        boxes.append(BBox(x, y, x + w, y + h, 0, i))
    rects = []
    for _ in range(n_rects):
        w, h = rng.uniform(32, 128, size=2)
        x, y = rng.uniform(0, canvas - w), rng.uniform(0, canvas - h)
        rects.append(PixelRect(x, y, x + w, y + h))
    return SmallInstance(tuple(boxes), tuple(rects), k)
