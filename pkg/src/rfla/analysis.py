"""Monte-Carlo study of positives per gt across object scales.

Every trial draws its gts from its own PCG64 stream, seeded with
``SeedSequence(seed, spawn_key=(trial_index,))``. Streams never overlap, so
trial ``i`` is the same whatever ``n_trials`` or the worker count is.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .baselines import (
    AnchorSet,
    AnchorSpec,
    MaxIouConfig,
    ScaleRanges,
    center_sampling_assign,
    gaussian_anchor_assign,
    generate_anchors,
    maxiou_assign,
)
from .core import AssignmentResult, BBox, PointSet, boxes_to_array
from .distances import MetricKind
from .hla import HlaConfig, hla_assign
from .receptive_field import PyramidSpec, build_grid, resnet50_fpn_pyramid

Assigner = Callable[[Sequence[BBox]], AssignmentResult]

IMBALANCE_EPS = 1e-3
DEFAULT_BETAS = (0.95, 0.9, 0.85, 0.8)
ASSIGNER_NAMES = ("maxiou", "center", "rfla", "gaussian_anchor", "receptive_anchor")


@dataclass(frozen=True)
class TrialConfig:
    seed: int = 0
    n_trials: int = 10_000
    scale_lo: float = 0.0
    scale_hi: float = 64.0
    n_intervals: int = 16
    aspect: str = "square"
    jitter: tuple[float, float] = (0.5, 2.0)
    image_w: float = 800.0
    image_h: float = 800.0
    gts_per_trial: int = 1

    def __post_init__(self):
        object.__setattr__(self, "jitter", tuple(float(v) for v in self.jitter))
        if not 0 <= self.seed < 2**64 or int(self.seed) != self.seed:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.n_trials < 0:
            raise ValueError("n_trials must be >= 0")
        if not 0 <= self.scale_lo < self.scale_hi:
            raise ValueError(f"need 0 <= scale_lo < scale_hi, got ({self.scale_lo}, {self.scale_hi})")
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        if self.gts_per_trial < 1:
            raise ValueError("gts_per_trial must be >= 1")
        if self.aspect not in ("square", "jitter"):
            raise ValueError(f"aspect must be 'square' or 'jitter', got {self.aspect!r}")
        lo, hi = self.jitter
        if not 0 < lo <= hi:
            raise ValueError(f"jitter bounds must satisfy 0 < lo <= hi, got {self.jitter}")
        if self.scale_hi > min(self.image_w, self.image_h):
            raise ValueError(f"scale_hi={self.scale_hi} does not fit a {self.image_w}x{self.image_h} image")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.scale_lo, self.scale_hi, self.n_intervals + 1)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trial,))))


def trial_gts(cfg: TrialConfig, trial: int) -> list[BBox]:
    """The gts of one simulated image.

    Per gt, four uniforms are drawn in a fixed order (scale, aspect, x, y)
    whatever the aspect mode, so switching modes keeps positions aligned.
    """
    rng = trial_rng(cfg.seed, trial)
    out = []
    for _ in range(cfg.gts_per_trial):
        u_scale, u_aspect, u_x, u_y = rng.random(4)
        # (lo, hi]: 1 - u lies in (0, 1]
        scale = cfg.scale_lo + (1.0 - u_scale) * (cfg.scale_hi - cfg.scale_lo)
        if cfg.aspect == "square":
            w = h = scale
        else:
            lo, hi = cfg.jitter
            ratio = lo + u_aspect * (hi - lo)
            w, h = (scale, scale / ratio) if ratio >= 1 else (scale * ratio, scale)
        cx = w / 2 + u_x * (cfg.image_w - w)
        cy = h / 2 + u_y * (cfg.image_h - h)
        out.append(BBox(cx, cy, w, h))
    return out


def random_gts(cfg: TrialConfig) -> list[BBox]:
    return [g for i in range(cfg.n_trials) for g in trial_gts(cfg, i)]


@dataclass(frozen=True)
class IntervalStats:
    scale_lo: float
    scale_hi: float
    n_gts: int
    mean_positives: float
    stddev_positives: float


@dataclass(frozen=True)
class IntervalHistogram:
    intervals: tuple[IntervalStats, ...]
    total_positives: int
    stage2_positives: int

    @property
    def n_gts(self) -> int:
        return sum(iv.n_gts for iv in self.intervals)

    @property
    def means(self) -> np.ndarray:
        return np.array([iv.mean_positives for iv in self.intervals])

    @property
    def overall_mean(self) -> float:
        n = self.n_gts
        return self.total_positives / n if n else math.nan

    @property
    def stage2_share(self) -> float:
        return self.stage2_positives / self.total_positives if self.total_positives else 0.0

    def populated_means(self) -> np.ndarray:
        return np.array([iv.mean_positives for iv in self.intervals if iv.n_gts > 0])


def imbalance(hist: IntervalHistogram, eps: float = IMBALANCE_EPS) -> float:
    """Largest over smallest interval mean, the denominator floored at ``eps``."""
    means = hist.populated_means()
    if means.size == 0:
        return math.nan
    return float(means.max() / max(means.min(), eps))


def _bin_index(scales: np.ndarray, cfg: TrialConfig) -> np.ndarray:
    # intervals are (lo, hi]; searchsorted(left) - 1 maps a right edge to its own bin
    idx = np.searchsorted(cfg.edges, scales, side="left") - 1
    return np.clip(idx, 0, cfg.n_intervals - 1)


def _run_chunk(assigner: Assigner, cfg: TrialConfig, trials: range):
    scales, counts, stage2 = [], [], []
    for i in trials:
        gts = trial_gts(cfg, i)
        res = assigner(gts)
        scales.extend(max(g.w, g.h) for g in gts)
        counts.extend(res.pos_counts.tolist())
        stage2.extend(res.stage_counts(2).tolist())
    return scales, counts, stage2


def positives_per_interval(assigner: Assigner, cfg: TrialConfig, workers: int = 1) -> IntervalHistogram:
    """Mean and population std of positives per gt in each scale interval.

    Trials are split into contiguous chunks across ``workers`` threads and
    re-joined in trial order, so the result does not depend on ``workers``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = cfg.n_trials
    if workers == 1 or n < 2:
        chunks = [_run_chunk(assigner, cfg, range(n))]
    else:
        bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, assigner, cfg, range(a, b)) for a, b in zip(bounds, bounds[1:])]
            chunks = [f.result() for f in futures]
    scales = np.array([s for c in chunks for s in c[0]], dtype=np.float64)
    counts = np.array([s for c in chunks for s in c[1]], dtype=np.int64)
    stage2 = np.array([s for c in chunks for s in c[2]], dtype=np.int64)

    bins = _bin_index(scales, cfg)
    edges = cfg.edges
    intervals = []
    for b in range(cfg.n_intervals):
        vals = counts[bins == b].tolist()
        if vals:
            mean = math.fsum(vals) / len(vals)
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
        else:
            mean = std = math.nan
        intervals.append(IntervalStats(float(edges[b]), float(edges[b + 1]), len(vals), mean, std))
    return IntervalHistogram(tuple(intervals), int(counts.sum()), int(stage2.sum()))


def _scatter(sub: AssignmentResult, idx: np.ndarray, n: int) -> AssignmentResult:
    full = AssignmentResult.empty(n, sub.num_gts)
    full.gt_index[idx] = sub.gt_index
    full.stage[idx] = sub.stage
    full.score[idx] = sub.score
    return full


class RflaAssigner:
    """``hla_assign`` bound to a fixed point set.

    For a single gt scored with KLD or WD, only a window of ``k + 1`` cells
    around the gt center is scored on each level. Within a level every point
    shares one radius and the score falls strictly with ``|dx|`` and
    ``|dy|``, so anything outside the window has more than ``k`` strictly
    better points and can win neither stage. GIoU has flat regions and
    always takes the full scan.
    """

    def __init__(self, points: PointSet, cfg: HlaConfig = HlaConfig()):
        self.points = PointSet.coerce(points)
        self.cfg = cfg

    def __call__(self, gts) -> AssignmentResult:
        garr = boxes_to_array(gts)
        if garr.shape[0] == 1 and self.points.grid is not None and self.cfg.metric is not MetricKind.GIOU:
            idx = self.points.window(garr[0, 0], garr[0, 1], self.cfg.k + 1)
            return _scatter(hla_assign(self.points.subset(idx), garr, self.cfg), idx, len(self.points))
        return hla_assign(self.points, garr, self.cfg)


class GaussianAnchorAssigner:
    """``gaussian_anchor_assign`` bound to fixed anchors, windowed like :class:`RflaAssigner`."""

    def __init__(self, anchors: AnchorSet, cfg: HlaConfig = HlaConfig()):
        self.anchors = anchors
        self.cfg = cfg

    def __call__(self, gts) -> AssignmentResult:
        garr = boxes_to_array(gts)
        a = self.anchors
        if garr.shape[0] == 1 and a.groups is not None and self.cfg.metric is not MetricKind.GIOU:
            # sorted, so positions in the subset keep the global tie-break order
            idx = np.sort(a.window(garr[0, 0], garr[0, 1], self.cfg.k + 1))
            sub = AnchorSet(a.cx[idx], a.cy[idx], a.w[idx], a.h[idx], a.level[idx])
            return _scatter(gaussian_anchor_assign(sub, garr, self.cfg), idx, len(a))
        return gaussian_anchor_assign(a, garr, self.cfg)


class MaxIouAssigner:
    def __init__(self, anchors: AnchorSet, cfg: MaxIouConfig = MaxIouConfig()):
        self.anchors = anchors
        self.cfg = cfg

    def __call__(self, gts) -> AssignmentResult:
        return maxiou_assign(self.anchors, gts, self.cfg)


class CenterAssigner:
    def __init__(self, points: PointSet, ranges: ScaleRanges):
        self.points = points
        self.ranges = ranges

    def __call__(self, gts) -> AssignmentResult:
        return center_sampling_assign(self.points, gts, self.ranges)


class ReceptiveAnchorAssigner:
    def __init__(self, points: PointSet, cfg: MaxIouConfig = MaxIouConfig()):
        self.anchors = AnchorSet.from_points(points)
        self.cfg = cfg

    def __call__(self, gts) -> AssignmentResult:
        return maxiou_assign(self.anchors, gts, self.cfg)


def default_pyramid(image_w: float = 800, image_h: float = 800) -> PyramidSpec:
    return resnet50_fpn_pyramid(image_w, image_h)


def make_assigner(
    name: str,
    pyramid: PyramidSpec,
    hla: HlaConfig = HlaConfig(),
    anchor: AnchorSpec = AnchorSpec(),
    maxiou: MaxIouConfig = MaxIouConfig(),
    ranges: ScaleRanges | None = None,
) -> Assigner:
    if name == "rfla":
        return RflaAssigner(build_grid(pyramid), hla)
    if name == "maxiou":
        return MaxIouAssigner(generate_anchors(pyramid, anchor), maxiou)
    if name == "center":
        return CenterAssigner(build_grid(pyramid), ranges or ScaleRanges.doubling(len(pyramid.levels)))
    if name == "gaussian_anchor":
        return GaussianAnchorAssigner(generate_anchors(pyramid, anchor), hla)
    if name == "receptive_anchor":
        return ReceptiveAnchorAssigner(build_grid(pyramid), maxiou)
    raise ValueError(f"unknown assigner {name!r}; expected one of {', '.join(ASSIGNER_NAMES)}")


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    mean_pos_overall: float
    min_interval_mean: float
    max_interval_mean: float
    imbalance: float
    stage2_share: float


def summarize(param: str, value: float, hist: IntervalHistogram) -> SweepRow:
    means = hist.populated_means()
    lo = float(means.min()) if means.size else math.nan
    hi = float(means.max()) if means.size else math.nan
    return SweepRow(param, value, hist.overall_mean, lo, hi, imbalance(hist), hist.stage2_share)


def sweep_k(ks, pyramid: PyramidSpec, trial: TrialConfig, hla: HlaConfig = HlaConfig(), workers: int = 1) -> list[SweepRow]:
    points = build_grid(pyramid)
    rows = []
    for k in ks:
        cfg = HlaConfig(int(k), hla.beta, hla.metric)
        rows.append(summarize("k", k, positives_per_interval(RflaAssigner(points, cfg), trial, workers)))
    return rows


def sweep_beta(
    betas, pyramid: PyramidSpec, trial: TrialConfig, hla: HlaConfig = HlaConfig(), workers: int = 1
) -> list[SweepRow]:
    """One row per stage-2 decay factor; ``DEFAULT_BETAS`` is the usual grid."""
    points = build_grid(pyramid)
    rows = []
    for beta in betas:
        cfg = HlaConfig(hla.k, float(beta), hla.metric)
        rows.append(summarize("beta", beta, positives_per_interval(RflaAssigner(points, cfg), trial, workers)))
    return rows


def sweep_anchor_scale(
    scales, pyramid: PyramidSpec, trial: TrialConfig, anchor: AnchorSpec = AnchorSpec(),
    maxiou: MaxIouConfig = MaxIouConfig(), workers: int = 1,
) -> list[SweepRow]:
    rows = []
    for s in scales:
        anchors = generate_anchors(pyramid, AnchorSpec(float(s), anchor.ratios))
        rows.append(summarize("anchor_scale", s, positives_per_interval(MaxIouAssigner(anchors, maxiou), trial, workers)))
    return rows
