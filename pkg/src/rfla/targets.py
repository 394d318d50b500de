"""Box regression targets and the offset-tolerant centerness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BBox, FeaturePoint

DEFAULT_CENTERNESS_C = 0.01


@dataclass(frozen=True)
class LtrbTarget:
    """Signed distances from a point to the left, top, right and bottom box sides.

    A side distance is negative when the point lies beyond that side.
    Fields may be floats or equally-shaped arrays.
    """

    l: float
    t: float
    r: float
    b: float


def ltrb(p: FeaturePoint, g: BBox) -> LtrbTarget:
    x1, y1, x2, y2 = g.corners
    return LtrbTarget(p.px - x1, p.py - y1, x2 - p.px, y2 - p.py)


def _step(x):
    # 1 for strictly positive input, 0 otherwise (including exactly 0)
    return (np.asarray(x) > 0).astype(np.float64)


def centerness_star(tgt: LtrbTarget, c: float = DEFAULT_CENTERNESS_C):
    """Centerness that stays positive for points outside the box.

    Each axis contributes ``(step(min) * min + c) / max``; the result is the
    square root of the product. With ``c = 0`` and a point inside the box
    this is the usual FCOS centerness.

    Raises ``ValueError`` when ``max(l, r) <= 0`` or ``max(t, b) <= 0``.
    """
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c!r}")
    l, t, r, b = (np.asarray(v, dtype=np.float64) for v in (tgt.l, tgt.t, tgt.r, tgt.b))
    lr_min, lr_max = np.minimum(l, r), np.maximum(l, r)
    tb_min, tb_max = np.minimum(t, b), np.maximum(t, b)
    if np.any(lr_max <= 0) or np.any(tb_max <= 0):
        raise ValueError("centerness_star needs max(l, r) > 0 and max(t, b) > 0")
    x_term = (_step(lr_min) * lr_min + c) / lr_max
    y_term = (_step(tb_min) * tb_min + c) / tb_max
    out = np.sqrt(x_term * y_term)
    return float(out) if out.ndim == 0 else out
