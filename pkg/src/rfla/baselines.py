"""Reference assigners built on box and point priors.

* MaxIoU over tiled anchors (two-stage detector style).
* Center sampling with per-level scale ranges (anchor-free style).
* Gaussian anchors: anchors turned into Gaussians, then assigned with HLA.
* Receptive anchors: square anchors of side ``2 * er``, then MaxIoU.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .core import AssignmentResult, BBox, PointSet, boxes_to_array, grid_index_range, pairwise_iou
from .hla import HlaConfig, hla_on_priors
from .receptive_field import PyramidSpec, build_grid


@dataclass(frozen=True)
class AnchorSpec:
    base_scale: float = 8.0
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if not self.base_scale > 0:
            raise ValueError(f"base_scale must be > 0, got {self.base_scale!r}")
        if not self.ratios or any(not r > 0 for r in self.ratios):
            raise ValueError(f"ratios must be non-empty and positive, got {self.ratios!r}")


@dataclass(frozen=True)
class MaxIouConfig:
    pos_thr: float = 0.5
    neg_thr: float = 0.5
    low_quality_match: bool = False

    def __post_init__(self):
        if not 0 < self.neg_thr <= self.pos_thr <= 1:
            raise ValueError(f"need 0 < neg_thr <= pos_thr <= 1, got {self.neg_thr!r}, {self.pos_thr!r}")


@dataclass(frozen=True)
class ScaleRanges:
    """Half-open ``(lo, hi]`` object-scale interval per pyramid level."""

    ranges: tuple[tuple[float, float], ...]

    def __post_init__(self):
        rs = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        object.__setattr__(self, "ranges", rs)
        for lo, hi in rs:
            if not (0 <= lo < hi):
                raise ValueError(f"bad scale range ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(rs, rs[1:]):
            if lo < hi:
                raise ValueError("scale ranges must be ordered and must not overlap")

    @classmethod
    def doubling(cls, n_levels: int, first_hi: float = 64.0) -> "ScaleRanges":
        """``(0, 64], (64, 128], ...`` with the last level open-ended."""
        edges = [0.0] + [first_hi * 2**i for i in range(n_levels - 1)] + [math.inf]
        return cls(tuple(zip(edges[:-1], edges[1:])))


@dataclass(frozen=True)
class _AnchorGroup:
    # one (level, ratio) slab of a grid-tiled AnchorSet
    level: int
    stride: float
    offset: float
    nx: int
    ny: int
    start: int
    n_ratios: int
    ratio_index: int
    w: float
    h: float


class AnchorSet(Sequence):
    """Columnar anchors with level tags; a read-only sequence of :class:`BBox`.

    ``point_id`` is the index of the feature point each anchor is tiled on.
    """

    def __init__(self, cx, cy, w, h, level, point_id=None, groups: tuple[_AnchorGroup, ...] | None = None):
        self.cx = np.asarray(cx, dtype=np.float64)
        self.cy = np.asarray(cy, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.h = np.asarray(h, dtype=np.float64)
        self.level = np.asarray(level, dtype=np.int64)
        n = self.cx.shape[0]
        self.point_id = np.arange(n, dtype=np.int64) if point_id is None else np.asarray(point_id, dtype=np.int64)
        if n and not (np.all(self.w > 0) and np.all(self.h > 0)):
            raise ValueError("anchor sides must be > 0")
        self.groups = groups

    @classmethod
    def coerce(cls, anchors) -> "AnchorSet":
        if isinstance(anchors, AnchorSet):
            return anchors
        arr = boxes_to_array(list(anchors))
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], np.zeros(arr.shape[0], dtype=np.int64))

    @classmethod
    def from_points(cls, points) -> "AnchorSet":
        """Square anchors of side ``2 * er`` centered on each feature point."""
        ps = PointSet.coerce(points)
        groups = None
        if ps.grid is not None:
            groups = tuple(
                _AnchorGroup(g.level, g.stride, g.offset, g.nx, g.ny, g.start, 1, 0, 2 * g.er, 2 * g.er)
                for g in ps.grid
            )
        return cls(ps.px, ps.py, 2 * ps.er, 2 * ps.er, ps.level, np.arange(len(ps)), groups)

    def __len__(self) -> int:
        return self.cx.shape[0]

    def __getitem__(self, i):
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return BBox(float(self.cx[i]), float(self.cy[i]), float(self.w[i]), float(self.h[i]))

    def as_array(self, idx=None) -> np.ndarray:
        cols = (self.cx, self.cy, self.w, self.h)
        if idx is not None:
            cols = tuple(c[idx] for c in cols)
        return np.stack(cols, axis=1)

    def _grid_cells(self, g: _AnchorGroup, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        cell = ys[:, None] * g.nx + xs[None, :]
        return (g.start + cell * g.n_ratios + g.ratio_index).ravel()

    def overlapping(self, gts: np.ndarray) -> np.ndarray:
        """Sorted indices of anchors with positive overlap with any box of ``gts``."""
        if self.groups is None:
            if len(self) == 0 or gts.shape[0] == 0:
                return np.empty(0, dtype=np.int64)
            return np.flatnonzero((pairwise_iou(self.as_array(), gts) > 0).any(axis=1))
        parts = []
        for g in self.groups:
            for cx, cy, w, h in gts:
                rx, ry = (g.w + w) / 2, (g.h + h) / 2
                x0, x1 = grid_index_range(cx, rx, g.stride, g.offset, g.nx)
                y0, y1 = grid_index_range(cy, ry, g.stride, g.offset, g.ny)
                if x0 > x1 or y0 > y1:
                    continue
                xs = np.arange(x0, x1 + 1)
                ys = np.arange(y0, y1 + 1)
                xs = xs[np.abs((xs + g.offset) * g.stride - cx) < rx]
                ys = ys[np.abs((ys + g.offset) * g.stride - cy) < ry]
                if xs.size and ys.size:
                    parts.append(self._grid_cells(g, xs, ys))
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def window(self, cx: float, cy: float, margin: int) -> np.ndarray:
        """Per (level, ratio) slab, anchors within ``margin`` cells of the cell nearest ``(cx, cy)``."""
        if self.groups is None:
            raise ValueError("window() needs an AnchorSet built from a grid")
        parts = []
        for g in self.groups:
            if g.nx == 0 or g.ny == 0:
                continue
            ix = min(max(int(round(cx / g.stride - g.offset)), 0), g.nx - 1)
            iy = min(max(int(round(cy / g.stride - g.offset)), 0), g.ny - 1)
            xs = np.arange(max(ix - margin, 0), min(ix + margin, g.nx - 1) + 1)
            ys = np.arange(max(iy - margin, 0), min(iy + margin, g.ny - 1) + 1)
            parts.append(self._grid_cells(g, xs, ys))
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def generate_anchors(pspec: PyramidSpec, aspec: AnchorSpec = AnchorSpec()) -> AnchorSet:
    """Tile ``len(ratios)`` anchors on every grid point.

    Each anchor has area ``(base_scale * stride)^2`` and ``w / h = ratio``.
    Ordering: level, then grid point (row-major), then ratio.
    """
    ps = build_grid(pspec)
    n_r = len(aspec.ratios)
    sizes = []
    for r in aspec.ratios:
        sizes.append((math.sqrt(r), 1.0 / math.sqrt(r)))
    cx, cy, w, h, level, pid, groups = [], [], [], [], [], [], []
    start = 0
    for g in ps.grid:
        side = aspec.base_scale * g.stride
        sl = slice(g.start, g.start + g.size)
        for ri, (fw, fh) in enumerate(sizes):
            groups.append(_AnchorGroup(g.level, g.stride, g.offset, g.nx, g.ny, start, n_r, ri, side * fw, side * fh))
        cx.append(np.repeat(ps.px[sl], n_r))
        cy.append(np.repeat(ps.py[sl], n_r))
        w.append(np.tile([side * fw for fw, _ in sizes], g.size))
        h.append(np.tile([side * fh for _, fh in sizes], g.size))
        level.append(np.full(g.size * n_r, g.level, dtype=np.int64))
        pid.append(np.repeat(np.arange(g.start, g.start + g.size), n_r))
        start += g.size * n_r
    return AnchorSet(
        np.concatenate(cx), np.concatenate(cy), np.concatenate(w), np.concatenate(h),
        np.concatenate(level), np.concatenate(pid), tuple(groups),
    )


def maxiou_assign(anchors, gts, cfg: MaxIouConfig = MaxIouConfig()) -> AssignmentResult:
    """Label each anchor with its best-IoU gt when that IoU reaches ``pos_thr``.

    Anchors under ``pos_thr`` are background; the ``neg_thr`` band is not
    tracked separately. With ``low_quality_match`` every gt also claims its
    best anchor, provided the two overlap at all. Only anchors overlapping
    some gt are scored, since zero-IoU anchors can never become positive.
    """
    aset = AnchorSet.coerce(anchors)
    garr = boxes_to_array(gts)
    res = AssignmentResult.empty(len(aset), garr.shape[0])
    if garr.shape[0] == 0 or len(aset) == 0:
        return res
    cand = aset.overlapping(garr)
    if cand.size == 0:
        return res
    ious = pairwise_iou(aset.as_array(cand), garr)
    best_gt = np.argmax(ious, axis=1)
    best_iou = ious[np.arange(cand.size), best_gt]
    pos = best_iou >= cfg.pos_thr
    res.gt_index[cand[pos]] = best_gt[pos]
    res.stage[cand[pos]] = 1
    res.score[cand[pos]] = best_iou[pos]
    if cfg.low_quality_match:
        for j in range(garr.shape[0]):
            col = ious[:, j]
            i = int(np.argmax(col))
            if col[i] > 0:
                res.gt_index[cand[i]] = j
                res.stage[cand[i]] = 1
                res.score[cand[i]] = col[i]
    return res


def center_sampling_assign(points, gts, ranges: ScaleRanges) -> AssignmentResult:
    """Points strictly inside a gt whose scale ``max(w, h)`` fits the point's level range.

    A point eligible for several gts goes to the smallest-area one (then the
    lower index).
    """
    ps = PointSet.coerce(points)
    garr = boxes_to_array(gts)
    res = AssignmentResult.empty(len(ps), garr.shape[0])
    if garr.shape[0] == 0 or len(ps) == 0:
        return res
    cand = ps.inside(garr)
    if cand.size == 0:
        return res
    lv = ps.level[cand]
    if lv.max() >= len(ranges.ranges):
        raise ValueError(f"points reach level {lv.max()} but only {len(ranges.ranges)} scale ranges are given")
    lo = np.array([r[0] for r in ranges.ranges])[lv][:, None]
    hi = np.array([r[1] for r in ranges.ranges])[lv][:, None]
    scale = np.maximum(garr[:, 2], garr[:, 3])[None, :]
    px, py = ps.px[cand][:, None], ps.py[cand][:, None]
    inside = (np.abs(px - garr[None, :, 0]) < garr[None, :, 2] / 2) & (np.abs(py - garr[None, :, 1]) < garr[None, :, 3] / 2)
    ok = inside & (scale > lo) & (scale <= hi)
    area = garr[:, 2] * garr[:, 3]
    # smallest eligible area wins; argmin keeps the lower index on equal areas
    masked = np.where(ok, area[None, :], np.inf)
    best = np.argmin(masked, axis=1)
    hit = ok[np.arange(cand.size), best]
    res.gt_index[cand[hit]] = best[hit]
    res.stage[cand[hit]] = 1
    res.score[cand[hit]] = 1.0
    return res


def gaussian_anchor_assign(anchors, gts, cfg: HlaConfig = HlaConfig()) -> AssignmentResult:
    """HLA where each anchor acts as the prior ``N(center, diag(w^2/4, h^2/4))``."""
    aset = AnchorSet.coerce(anchors)
    return hla_on_priors(aset.cx, aset.cy, aset.w / 2, aset.h / 2, np.arange(len(aset)), gts, cfg, isotropic=False)


def receptive_anchor_assign(points, gts, cfg: MaxIouConfig = MaxIouConfig()) -> AssignmentResult:
    """MaxIoU over square anchors of side ``2 * er`` at each feature point."""
    return maxiou_assign(AnchorSet.from_points(points), gts, cfg)
