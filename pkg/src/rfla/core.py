"""Domain types and geometry shared by every assigner.

Boxes live in center form ``(cx, cy, w, h)``; corner form is a derived view.
Bulk work goes through the columnar containers (:class:`PointSet`) so the
assigners can stay vectorised, while the scalar dataclasses remain the
public vocabulary.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in image pixels, center form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"BBox.{name} must be finite, got {getattr(self, name)!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs w > 0 and h > 0, got w={self.w!r}, h={self.h!r}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Gaussian2D:
    """Axis-aligned 2-D Gaussian: mean and diagonal covariance."""

    mu_x: float
    mu_y: float
    var_x: float
    var_y: float

    def __post_init__(self):
        if not (self.var_x > 0 and self.var_y > 0):
            raise ValueError(f"Gaussian2D variances must be > 0, got ({self.var_x!r}, {self.var_y!r})")


@dataclass(frozen=True)
class FeaturePoint:
    """A pyramid location: level, image-space center and ERF radius."""

    level: int
    px: float
    py: float
    er: float
    flat_id: int

    def __post_init__(self):
        if not self.er > 0:
            raise ValueError(f"FeaturePoint.er must be > 0, got {self.er!r}")


@dataclass(frozen=True)
class Background:
    pass


BACKGROUND = Background()


@dataclass(frozen=True)
class Positive:
    gt_index: int
    stage: int
    score: float


Label = Union[Background, Positive]


def bbox_area(b: BBox) -> float:
    return b.w * b.h


def iou(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    # corner round-off can push the overlap past the smaller area
    inter = min(iw * ih, a.area, b.area)
    return inter / (a.area + b.area - inter)


def boxes_to_array(gts: Iterable[BBox] | np.ndarray) -> np.ndarray:
    """Stack boxes into a ``(G, 4)`` float64 array of ``cx, cy, w, h``."""
    if isinstance(gts, np.ndarray):
        arr = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
        if np.any(arr[:, 2:] <= 0):
            raise ValueError("box widths and heights must be > 0")
        return arr
    rows = [(g.cx, g.cy, g.w, g.h) for g in gts]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between every row of ``a`` (N,4) and ``b`` (G,4), center form."""
    a = a[:, None, :]
    b = b[None, :, :]
    iw = np.minimum(a[..., 0] + a[..., 2] / 2, b[..., 0] + b[..., 2] / 2) - np.maximum(
        a[..., 0] - a[..., 2] / 2, b[..., 0] - b[..., 2] / 2
    )
    ih = np.minimum(a[..., 1] + a[..., 3] / 2, b[..., 1] + b[..., 3] / 2) - np.maximum(
        a[..., 1] - a[..., 3] / 2, b[..., 1] - b[..., 3] / 2
    )
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    inter = np.minimum(np.clip(iw, 0, None) * np.clip(ih, 0, None), np.minimum(area_a, area_b))
    union = area_a + area_b - inter
    return inter / union


@dataclass(frozen=True)
class LevelGrid:
    """Layout of one pyramid level inside a :class:`PointSet`."""

    level: int
    stride: float
    offset: float
    nx: int
    ny: int
    start: int
    er: float

    @property
    def size(self) -> int:
        return self.nx * self.ny


def grid_index_range(center: float, reach: float, stride: float, offset: float, n: int) -> tuple[int, int]:
    """Inclusive index range covering every cell with ``|(i + offset)*stride - center| < reach``.

    The range is conservative by one cell on each side; callers filter exactly.
    """
    lo = math.floor((center - reach) / stride - offset)
    hi = math.ceil((center + reach) / stride - offset)
    return max(lo, 0), min(hi, n - 1)


class PointSet(Sequence):
    """Columnar collection of :class:`FeaturePoint`.

    Behaves as a read-only sequence of FeaturePoint. When built by
    ``build_grid`` it also remembers the grid layout, which lets callers pull
    out spatial windows without scanning every point.
    """

    def __init__(self, level, px, py, er, flat_id=None, grid: tuple[LevelGrid, ...] | None = None):
        self.level = np.asarray(level, dtype=np.int64)
        self.px = np.asarray(px, dtype=np.float64)
        self.py = np.asarray(py, dtype=np.float64)
        self.er = np.asarray(er, dtype=np.float64)
        n = self.px.shape[0]
        self.flat_id = np.arange(n, dtype=np.int64) if flat_id is None else np.asarray(flat_id, dtype=np.int64)
        if not (self.level.shape == self.py.shape == self.er.shape == self.flat_id.shape == (n,)):
            raise ValueError("PointSet columns must be 1-D and of equal length")
        if n and not np.all(self.er > 0):
            raise ValueError("every ERF radius must be > 0")
        self.grid = grid

    @classmethod
    def coerce(cls, points: "PointSet | Iterable[FeaturePoint]") -> "PointSet":
        if isinstance(points, PointSet):
            return points
        pts = list(points)
        return cls(
            [p.level for p in pts],
            [p.px for p in pts],
            [p.py for p in pts],
            [p.er for p in pts],
            [p.flat_id for p in pts],
        )

    def __len__(self) -> int:
        return self.px.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return FeaturePoint(int(self.level[i]), float(self.px[i]), float(self.py[i]), float(self.er[i]), int(self.flat_id[i]))

    def subset(self, idx: np.ndarray) -> "PointSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PointSet(self.level[idx], self.px[idx], self.py[idx], self.er[idx], self.flat_id[idx])

    def window(self, cx: float, cy: float, margin: int) -> np.ndarray:
        """Indices of grid points within ``margin`` cells of the cell nearest ``(cx, cy)``, per level.

        Requires grid layout; the window is clipped to the grid.
        """
        if self.grid is None:
            raise ValueError("window() needs a PointSet built from a grid")
        parts = []
        for g in self.grid:
            if g.size == 0:
                continue
            ix = min(max(int(round(cx / g.stride - g.offset)), 0), g.nx - 1)
            iy = min(max(int(round(cy / g.stride - g.offset)), 0), g.ny - 1)
            xs = np.arange(max(ix - margin, 0), min(ix + margin, g.nx - 1) + 1)
            ys = np.arange(max(iy - margin, 0), min(iy + margin, g.ny - 1) + 1)
            parts.append((g.start + ys[:, None] * g.nx + xs[None, :]).ravel())
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def inside(self, gts: np.ndarray) -> np.ndarray:
        """Sorted indices of points strictly inside at least one box of ``gts`` (G,4)."""
        if self.grid is None:
            x1 = gts[:, 0] - gts[:, 2] / 2
            y1 = gts[:, 1] - gts[:, 3] / 2
            x2 = gts[:, 0] + gts[:, 2] / 2
            y2 = gts[:, 1] + gts[:, 3] / 2
            px, py = self.px[:, None], self.py[:, None]
            hit = (px > x1) & (px < x2) & (py > y1) & (py < y2)
            return np.flatnonzero(hit.any(axis=1))
        parts = []
        for g in self.grid:
            if g.size == 0:
                continue
            for cx, cy, w, h in gts:
                x0, x1 = grid_index_range(cx, w / 2, g.stride, g.offset, g.nx)
                y0, y1 = grid_index_range(cy, h / 2, g.stride, g.offset, g.ny)
                if x0 > x1 or y0 > y1:
                    continue
                xs = np.arange(x0, x1 + 1)
                ys = np.arange(y0, y1 + 1)
                xs = xs[np.abs((xs + g.offset) * g.stride - cx) < w / 2]
                ys = ys[np.abs((ys + g.offset) * g.stride - cy) < h / 2]
                if xs.size and ys.size:
                    parts.append((g.start + ys[:, None] * g.nx + xs[None, :]).ravel())
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))


@dataclass
class AssignmentResult:
    """Per-prior assignment, stored column-wise.

    ``gt_index`` is -1 for background; ``stage`` is 0 for background and 1 or
    2 for positives; ``score`` holds the matching score of positives (0 for
    background).
    """

    gt_index: np.ndarray
    stage: np.ndarray
    score: np.ndarray
    num_gts: int

    @classmethod
    def empty(cls, num_priors: int, num_gts: int) -> "AssignmentResult":
        return cls(
            np.full(num_priors, -1, dtype=np.int64),
            np.zeros(num_priors, dtype=np.int8),
            np.zeros(num_priors, dtype=np.float64),
            num_gts,
        )

    def __len__(self) -> int:
        return self.gt_index.shape[0]

    def label(self, i: int) -> Label:
        g = int(self.gt_index[i])
        if g < 0:
            return BACKGROUND
        return Positive(g, int(self.stage[i]), float(self.score[i]))

    @property
    def labels(self) -> list[Label]:
        return [self.label(i) for i in range(len(self))]

    @property
    def positive_mask(self) -> np.ndarray:
        return self.gt_index >= 0

    @property
    def pos_counts(self) -> np.ndarray:
        pos = self.gt_index[self.gt_index >= 0]
        return np.bincount(pos, minlength=self.num_gts)[: self.num_gts]

    def stage_counts(self, stage: int) -> np.ndarray:
        pos = self.gt_index[(self.gt_index >= 0) & (self.stage == stage)]
        return np.bincount(pos, minlength=self.num_gts)[: self.num_gts]

    @property
    def max_scores(self) -> np.ndarray:
        """Best positive score per gt; 0 for gts without positives."""
        out = np.zeros(self.num_gts, dtype=np.float64)
        pos = self.gt_index >= 0
        np.maximum.at(out, self.gt_index[pos], self.score[pos])
        return out
