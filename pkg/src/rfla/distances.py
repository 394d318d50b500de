"""Distances between a Gaussian prior and a Gaussian-modelled gt box.

Priors are described by center and per-axis standard deviation
``(cx, cy, sx, sy)``. An ERF prior is isotropic with ``sx = sy = er``; a
Gaussian anchor uses half its width and height. A gt box ``(x, y, w, h)``
becomes ``N((x, y), diag(w^2/4, h^2/4))``.

All kernels broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .core import BBox, FeaturePoint, Gaussian2D, PointSet, boxes_to_array


class MetricKind(str, enum.Enum):
    WASSERSTEIN = "wd"
    KLD = "kld"
    GIOU = "giou"

    @classmethod
    def parse(cls, value: "str | MetricKind") -> "MetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown metric {value!r}; expected one of {choices}") from None


def gt_gaussian(b: BBox) -> Gaussian2D:
    return Gaussian2D(b.cx, b.cy, b.w * b.w / 4.0, b.h * b.h / 4.0)


def wasserstein2_sq_params(cx1, cy1, sx1, sy1, cx2, cy2, sx2, sy2):
    """Squared 2-Wasserstein distance between diagonal Gaussians given by means and std devs."""
    return (cx1 - cx2) ** 2 + (cy1 - cy2) ** 2 + (sx1 - sx2) ** 2 + (sy1 - sy2) ** 2


def kld_erf_gt(px, py, er, gx, gy, gw, gh):
    """KL(ERF || gt) for an isotropic ERF of radius ``er`` against a gt box.

    Closed form specialised to the two diagonal covariances involved.
    """
    er2 = er * er
    w2 = gw * gw
    h2 = gh * gh
    return (
        2.0 * er2 / w2
        + 2.0 * er2 / h2
        + 2.0 * (px - gx) ** 2 / w2
        + 2.0 * (py - gy) ** 2 / h2
        + np.log(gw / (2.0 * er))
        + np.log(gh / (2.0 * er))
        - 1.0
    )


def kld_diag(mx1, my1, vx1, vy1, mx2, my2, vx2, vy2):
    """KL(N1 || N2) for axis-aligned Gaussians given by means and variances."""
    return 0.5 * (
        vx1 / vx2
        + vy1 / vy2
        + (mx2 - mx1) ** 2 / vx2
        + (my2 - my1) ** 2 / vy2
        + np.log(vx2 / vx1)
        + np.log(vy2 / vy1)
        - 2.0
    )


def giou_params(cx1, cy1, w1, h1, cx2, cy2, w2, h2):
    """Generalised IoU between center-form boxes."""
    ax1, ax2 = cx1 - w1 / 2, cx1 + w1 / 2
    ay1, ay2 = cy1 - h1 / 2, cy1 + h1 / 2
    bx1, bx2 = cx2 - w2 / 2, cx2 + w2 / 2
    by1, by2 = cy2 - h2 / 2, cy2 + h2 / 2
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    union = w1 * h1 + w2 * h2 - inter
    hull = (np.maximum(ax2, bx2) - np.minimum(ax1, bx1)) * (np.maximum(ay2, by2) - np.minimum(ay1, by1))
    return inter / union - (hull - union) / hull


def wasserstein2_sq(ne: Gaussian2D, ng: Gaussian2D) -> float:
    return float(
        wasserstein2_sq_params(
            ne.mu_x, ne.mu_y, math.sqrt(ne.var_x), math.sqrt(ne.var_y),
            ng.mu_x, ng.mu_y, math.sqrt(ng.var_x), math.sqrt(ng.var_y),
        )
    )


def kld(ne: Gaussian2D, ng: Gaussian2D) -> float:
    """KL divergence from ``ne`` (the prior) to ``ng`` (the gt)."""
    return float(kld_diag(ne.mu_x, ne.mu_y, ne.var_x, ne.var_y, ng.mu_x, ng.mu_y, ng.var_x, ng.var_y))


def giou_erf(p: FeaturePoint, b: BBox) -> float:
    """GIoU between the square ERF box (side ``2 * er``) and ``b``."""
    side = 2.0 * p.er
    return float(giou_params(p.px, p.py, side, side, b.cx, b.cy, b.w, b.h))


def rfd(rfdc):
    """Map a non-negative distance onto a (0, 1] similarity: ``1 / (1 + d)``."""
    d = np.asarray(rfdc, dtype=np.float64)
    if np.any(np.isnan(d)) or np.any(d < 0):
        raise ValueError(f"rfd() needs non-negative distances, got {rfdc!r}")
    out = 1.0 / (1.0 + d)
    return float(out) if out.ndim == 0 else out


def prior_distance(cx, cy, sx, sy, gts: np.ndarray, metric: MetricKind, isotropic: bool = False) -> np.ndarray:
    """Distance matrix (N, G) between Gaussian priors and gt boxes.

    GIoU is converted to a distance as ``1 - GIoU`` so all three metrics feed
    the same normalisation.
    """
    metric = MetricKind.parse(metric)
    cx = np.asarray(cx, dtype=np.float64)[:, None]
    cy = np.asarray(cy, dtype=np.float64)[:, None]
    sx = np.asarray(sx, dtype=np.float64)[:, None]
    sy = np.asarray(sy, dtype=np.float64)[:, None]
    gx, gy, gw, gh = (gts[None, :, i] for i in range(4))
    if metric is MetricKind.KLD:
        if isotropic:
            d = kld_erf_gt(cx, cy, sx, gx, gy, gw, gh)
        else:
            d = kld_diag(cx, cy, sx * sx, sy * sy, gx, gy, gw * gw / 4.0, gh * gh / 4.0)
    elif metric is MetricKind.WASSERSTEIN:
        return wasserstein2_sq_params(cx, cy, sx, sy, gx, gy, gw / 2.0, gh / 2.0)
    else:
        d = 1.0 - giou_params(cx, cy, 2.0 * sx, 2.0 * sy, gx, gy, gw, gh)
    # ulp-level negatives appear when the two distributions coincide
    return np.maximum(d, 0.0)


def prior_scores(cx, cy, sx, sy, gts: np.ndarray, metric: MetricKind, isotropic: bool = False) -> np.ndarray:
    return 1.0 / (1.0 + prior_distance(cx, cy, sx, sy, gts, metric, isotropic))


def score_matrix(points, gts, metric: MetricKind | str = MetricKind.KLD, radius_scale: float = 1.0) -> np.ndarray:
    """RFD score of every (feature point, gt) pair, shape ``(len(points), len(gts))``.

    ``radius_scale`` multiplies every ERF radius before scoring.
    """
    ps = PointSet.coerce(points)
    garr = boxes_to_array(gts)
    if garr.shape[0] == 0:
        return np.zeros((len(ps), 0), dtype=np.float64)
    er = ps.er * radius_scale
    return prior_scores(ps.px, ps.py, er, er, garr, MetricKind.parse(metric), isotropic=True)
