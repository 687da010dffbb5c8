"""Scene datasets: COCO-style annotation IO and sliding-window tiling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .geometry import BBox, ImageExtent, clip_box

log = logging.getLogger(__name__)

ImageId = Union[int, str]


class AnnotationError(ValueError):
    """Annotation file missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class Scene:
    image_id: ImageId
    extent: ImageExtent
    boxes: tuple[BBox, ...] = ()
    # pixel offset of this scene inside its source image (tiles only)
    origin: tuple[int, int] = (0, 0)
    source_id: ImageId | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [b.instance_id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise AnnotationError(f"image {self.image_id}: duplicate instance ids")


@dataclass
class SceneDataset:
    scenes: list[Scene] = field(default_factory=list)
    categories: dict[int, str] = field(default_factory=dict)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    @property
    def n_boxes(self) -> int:
        return sum(len(s.boxes) for s in self.scenes)


def _where(path, what: str) -> str:
    return f"{path}: {what}"


def load_annotations(path: str | Path) -> SceneDataset:
    """Read COCO-style JSON into clipped, validated scenes.

    ``bbox`` entries are ``[x, y, w, h]``. Boxes are clipped to their image;
    any that end up with no area are dropped and counted in ``dropped``.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise AnnotationError(_where(path, "file not found")) from None
    except json.JSONDecodeError as e:
        raise AnnotationError(_where(path, f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise AnnotationError(_where(path, "expected an object with an 'images' list"))

    extents: dict[ImageId, ImageExtent] = {}
    order: list[ImageId] = []
    for i, img in enumerate(doc["images"]):
        try:
            iid = img["id"]
            extents[iid] = ImageExtent(int(img["width"]), int(img["height"]))
        except (KeyError, TypeError, ValueError) as e:
            raise AnnotationError(_where(path, f"images[{i}]: {e!r}")) from None
        order.append(iid)

    per_image: dict[ImageId, list[BBox]] = {iid: [] for iid in order}
    dropped = 0
    for i, ann in enumerate(doc.get("annotations") or []):
        try:
            iid = ann["image_id"]
            x, y, w, h = (float(v) for v in ann["bbox"])
            cat = int(ann.get("category_id", 0))
            inst = int(ann.get("id", i))
        except (KeyError, TypeError, ValueError) as e:
            raise AnnotationError(_where(path, f"annotations[{i}]: {e!r}")) from None
        if iid not in extents:
            raise AnnotationError(_where(path, f"annotations[{i}]: unknown image_id {iid!r}"))
        ext = extents[iid]
        x1, y1 = max(x, 0.0), max(y, 0.0)
        x2, y2 = min(x + w, float(ext.width_px)), min(y + h, float(ext.height_px))
        if x2 <= x1 or y2 <= y1 or (x2 - x1) * (y2 - y1) <= 0.0:
            dropped += 1
            continue
        per_image[iid].append(BBox(x1, y1, x2, y2, cat, inst))
    if dropped:
        log.warning("%s: dropped %d degenerate boxes", path, dropped)

    cats = {}
    for c in doc.get("categories") or []:
        if "id" in c:
            cats[int(c["id"])] = str(c.get("name", c["id"]))
    try:
        scenes = [Scene(iid, extents[iid], per_image[iid]) for iid in order]
    except AnnotationError as e:
        raise AnnotationError(_where(path, str(e))) from None
    return SceneDataset(scenes, cats, dropped)


def save_annotations(ds: SceneDataset, path: str | Path) -> None:
    images, anns = [], []
    for s in ds.scenes:
        img = {"id": s.image_id, "width": s.extent.width_px, "height": s.extent.height_px}
        if s.source_id is not None:
            img["source_id"] = s.source_id
            img["origin"] = list(s.origin)
        images.append(img)
        for b in s.boxes:
            anns.append(
                {
                    "id": b.instance_id,
                    "image_id": s.image_id,
                    "category_id": b.category_id,
                    "bbox": [b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min],
                }
            )
    doc = {
        "images": images,
        "annotations": anns,
        "categories": [{"id": k, "name": v} for k, v in sorted(ds.categories.items())],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def tile_scene(scene: Scene, target: int = 8192) -> list[Scene]:
    """Split into non-overlapping ``target``-sized tiles, zero-padded.

    Every tile reports a ``target x target`` extent. A box goes to the tile
    holding its center and is clipped to that tile, so the boxes of the
    source are partitioned among the tiles. Empty tiles are kept.
    """
    if target <= 0:
        raise ValueError("tile target must be positive")
    W, H = scene.extent.width_px, scene.extent.height_px
    nx, ny = max(1, math.ceil(W / target)), max(1, math.ceil(H / target))
    buckets: dict[tuple[int, int], list[BBox]] = {(c, r): [] for r in range(ny) for c in range(nx)}
    for b in scene.boxes:
        cx, cy = b.center
        col = min(int(cx // target), nx - 1)
        row = min(int(cy // target), ny - 1)
        buckets[(col, row)].append(b)

    tile_extent = ImageExtent(target, target)
    single = nx == 1 and ny == 1
    tiles = []
    for r in range(ny):
        for c in range(nx):
            ox, oy = c * target, r * target
            boxes = []
            for b in buckets[(c, r)]:
                shifted = BBox(b.x_min - ox, b.y_min - oy, b.x_max - ox, b.y_max - oy, b.category_id, b.instance_id)
                clipped = clip_box(shifted, tile_extent)
                # center lies inside the tile, so some area always survives
                assert clipped is not None
                boxes.append(clipped)
            tid = scene.image_id if single else f"{scene.image_id}_r{r}_c{c}"
            tiles.append(Scene(tid, tile_extent, boxes, (ox, oy), scene.image_id))
    return tiles


def tile_dataset(ds: SceneDataset, target: int = 8192) -> SceneDataset:
    scenes = [t for s in ds.scenes for t in tile_scene(s, target)]
    return SceneDataset(scenes, dict(ds.categories), ds.dropped)
