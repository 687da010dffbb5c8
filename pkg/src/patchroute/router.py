"""Patch selection on a gain map.

Three greedy strategies share one loop: pick the highest remaining cell,
record its value, then discount the neighbourhood.

* ``issga-linear``: subtract ``v * K`` with the separable linear-decay
  (tent) kernel and clamp at zero.
* ``issga-gaussian``: same, with a Gaussian kernel of per-axis sigma equal
  to half the projected patch size.
* ``rigid-nms``: hard-zero every cell whose patch would overlap the chosen one.

Argmax ties go to the smallest row-major index. Once the map is exhausted,
the remaining picks are the lowest-index cells not yet taken, with score 0,
so a run always returns exactly ``budget`` distinct centers.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .gainmap import GainMap
from .geometry import GridSpec, PatchSpec, PixelRect, patch_rect_at

__all__ = [
    "KernelShape",
    "Strategy",
    "OverlapKernel",
    "SelectedPatch",
    "PatchSelection",
    "RouterConfig",
    "QueryBudgetRule",
    "kernel_eval",
    "greedy_steps",
    "issga",
    "rigid_nms_select",
    "select_patches",
    "topk_select",
    "query_budget",
    "write_selection_csv",
    "read_selection_csv",
]


class KernelShape(str, enum.Enum):
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


class Strategy(str, enum.Enum):
    ISSGA_LINEAR = "issga-linear"
    ISSGA_GAUSSIAN = "issga-gaussian"
    RIGID_NMS = "rigid-nms"


@dataclass(frozen=True)
class OverlapKernel:
    p_w_grid: float
    p_h_grid: float
    shape: KernelShape = KernelShape.LINEAR

    def __post_init__(self):
        if not (self.p_w_grid > 0 and self.p_h_grid > 0):
            raise ValueError("kernel extent must be positive")
        object.__setattr__(self, "shape", KernelShape(self.shape))

    @property
    def sigma_x(self) -> float:
        return 0.5 * self.p_w_grid

    @property
    def sigma_y(self) -> float:
        return 0.5 * self.p_h_grid

    def window(self) -> np.ndarray:
        """Kernel sampled on integer offsets ``|dx| <= p_w``, ``|dy| <= p_h``.

        Shape ``(2 * ry + 1, 2 * rx + 1)`` with the center at ``[ry, rx]``.
        """
        rx, ry = int(math.floor(self.p_w_grid)), int(math.floor(self.p_h_grid))
        dx = np.arange(-rx, rx + 1, dtype=float)
        dy = np.arange(-ry, ry + 1, dtype=float)
        return kernel_eval(self, dx[None, :], dy[:, None])


def kernel_eval(k: OverlapKernel, dx, dy):
    dx = np.abs(np.asarray(dx, dtype=float))
    dy = np.abs(np.asarray(dy, dtype=float))
    if k.shape is KernelShape.LINEAR:
        out = np.maximum(0.0, 1.0 - dx / k.p_w_grid) * np.maximum(0.0, 1.0 - dy / k.p_h_grid)
    else:
        out = np.exp(-(dx**2) / (2 * k.sigma_x**2) - dy**2 / (2 * k.sigma_y**2))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SelectedPatch:
    rank: int
    gx: int
    gy: int
    score: float
    rect: PixelRect | None = None

    @property
    def center(self) -> tuple[int, int]:
        return (self.gx, self.gy)


@dataclass
class PatchSelection:
    """Ranked picks; rank 1 is the first (highest-scoring) patch."""

    entries: list[SelectedPatch] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[SelectedPatch]:
        return iter(self.entries)

    def __getitem__(self, i) -> SelectedPatch:
        return self.entries[i]

    @property
    def centers(self) -> list[tuple[int, int]]:
        return [e.center for e in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries], dtype=float)

    def rects_array(self) -> np.ndarray:
        return np.array([e.rect.as_tuple() for e in self.entries], dtype=float).reshape(-1, 4)

    def prefix(self, k: int) -> "PatchSelection":
        return PatchSelection(self.entries[:k])


@dataclass(frozen=True)
class RouterConfig:
    budget: int = 40
    patch: PatchSpec = PatchSpec()
    strategy: Strategy = Strategy.ISSGA_LINEAR

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    def kernel_for(self, grid: GridSpec) -> OverlapKernel:
        pw, ph = self.patch.in_grid_units(grid)
        shape = KernelShape.GAUSSIAN if self.strategy is Strategy.ISSGA_GAUSSIAN else KernelShape.LINEAR
        return OverlapKernel(pw, ph, shape)


@dataclass(frozen=True)
class QueryBudgetRule:
    scale: float = 1.0
    min_q: int = 300
    max_q: int = 3000
    patch: PatchSpec = PatchSpec()

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.min_q > self.max_q:
            raise ValueError("min_q must not exceed max_q")


Suppressor = Callable[[np.ndarray, int, int, float], None]


def _soft_suppressor(kernel: OverlapKernel) -> Suppressor:
    win = kernel.window()
    ry, rx = win.shape[0] // 2, win.shape[1] // 2

    def suppress(G: np.ndarray, gx: int, gy: int, v: float) -> None:
        h, w = G.shape
        y0, y1 = max(0, gy - ry), min(h, gy + ry + 1)
        x0, x1 = max(0, gx - rx), min(w, gx + rx + 1)
        k = win[y0 - gy + ry : y1 - gy + ry, x0 - gx + rx : x1 - gx + rx]
        np.maximum(G[y0:y1, x0:x1] - v * k, 0.0, out=G[y0:y1, x0:x1])

    return suppress


def _rigid_suppressor(p_w: float, p_h: float) -> Suppressor:
    # |d| < p on an integer lattice
    rx, ry = int(math.ceil(p_w)) - 1, int(math.ceil(p_h)) - 1

    def suppress(G: np.ndarray, gx: int, gy: int, v: float) -> None:
        G[max(0, gy - ry) : gy + ry + 1, max(0, gx - rx) : gx + rx + 1] = 0.0

    return suppress


def greedy_steps(values: np.ndarray, budget: int, suppress: Suppressor | None) -> Iterator[tuple[int, int, float, np.ndarray]]:
    """Run the greedy loop on a private copy of ``values``.

    Yields ``(gx, gy, score, working_map)`` after each pick; the working map
    is live state, so copy it if you keep it. ``suppress=None`` gives plain
    top-K.
    """
    G = np.array(values, dtype=np.float64, copy=True)
    if G.ndim != 2:
        raise ValueError("gain values must be 2-D")
    if budget > G.size:
        raise ValueError(f"budget {budget} exceeds the {G.size} candidate cells")
    if np.any(G < 0) or not np.all(np.isfinite(G)):
        raise ValueError("gain values must be finite and non-negative")
    w = G.shape[1]
    flat = G.reshape(-1)
    taken = np.zeros(flat.shape, dtype=bool)
    for _ in range(budget):
        idx = int(np.argmax(flat))
        v = float(flat[idx])
        if v <= 0.0:
            idx = int(np.argmin(taken))
            v = 0.0
        gy, gx = divmod(idx, w)
        if v > 0.0 and suppress is not None:
            suppress(G, gx, gy, v)
        flat[idx] = 0.0
        taken[idx] = True
        yield gx, gy, v, G


def _to_selection(g: GainMap, patch: PatchSpec, steps) -> PatchSelection:
    entries = [
        SelectedPatch(rank, gx, gy, v, patch_rect_at(g.grid, patch, gx, gy))
        for rank, (gx, gy, v, _) in enumerate(steps, start=1)
    ]
    return PatchSelection(entries)


def issga(g: GainMap, cfg: RouterConfig = RouterConfig()) -> PatchSelection:
    """Greedy selection with soft subtraction of the overlap kernel.

    Uses the Gaussian kernel when ``cfg.strategy`` is ``issga-gaussian`` and
    the linear kernel otherwise. The input map is left untouched.
    """
    kernel = cfg.kernel_for(g.grid)
    return _to_selection(g, cfg.patch, greedy_steps(g.values, cfg.budget, _soft_suppressor(kernel)))


def rigid_nms_select(g: GainMap, cfg: RouterConfig = RouterConfig()) -> PatchSelection:
    pw, ph = cfg.patch.in_grid_units(g.grid)
    return _to_selection(g, cfg.patch, greedy_steps(g.values, cfg.budget, _rigid_suppressor(pw, ph)))


def topk_select(g: GainMap, cfg: RouterConfig = RouterConfig()) -> PatchSelection:
    """Plain top-K by value, no suppression."""
    return _to_selection(g, cfg.patch, greedy_steps(g.values, cfg.budget, None))


def select_patches(g: GainMap, cfg: RouterConfig = RouterConfig()) -> PatchSelection:
    cfg.patch.check_fits(g.grid.extent)
    if cfg.strategy is Strategy.RIGID_NMS:
        return rigid_nms_select(g, cfg)
    return issga(g, cfg)


def query_budget(g: GainMap, rule: QueryBudgetRule = QueryBudgetRule()) -> int:
    """Number of decoder queries for a map: its mass in patch units, clamped.

    Rounds half up before clamping to ``[min_q, max_q]``.
    """
    pw, ph = rule.patch.in_grid_units(g.grid)
    n = math.floor(rule.scale * g.total() / (pw * ph) + 0.5)
    return int(min(max(n, rule.min_q), rule.max_q))


SELECTION_HEADER = ["rank", "gx", "gy", "score", "x1", "y1", "x2", "y2"]


def write_selection_csv(path: str | Path, sel: PatchSelection) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SELECTION_HEADER)
        for e in sel:
            r = e.rect.as_tuple() if e.rect is not None else (math.nan,) * 4
            writer.writerow([e.rank, e.gx, e.gy, f"{e.score:.17g}", *(f"{x:.17g}" for x in r)])


def read_selection_csv(path: str | Path) -> PatchSelection:
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SELECTION_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            coords = [float(row[k]) for k in ("x1", "y1", "x2", "y2")]
            rect = None if any(math.isnan(c) for c in coords) else PixelRect(*coords)
            entries.append(SelectedPatch(int(row["rank"]), int(row["gx"]), int(row["gy"]), float(row["score"]), rect))
    return PatchSelection(entries)
