"""Hierarchical label assignment over receptive-field distance scores.

Stage 1 gives every gt its ``k`` best-scoring priors, ranked over all
pyramid levels at once. Stage 2 shrinks every prior radius by ``beta``,
re-scores, and offers each gt one extra prior. The stage-1 mask decides
the merge: a point already taken in stage 1 keeps its stage-1 label.

Conflicts go to the gt with the smaller area, then the lower gt index.
Equal scores inside one gt's ranking are broken by the lower ``flat_id``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AssignmentResult, PointSet, boxes_to_array
from .distances import MetricKind, prior_scores


@dataclass(frozen=True)
class HlaConfig:
    k: int = 3
    beta: float = 0.9
    metric: MetricKind = MetricKind.KLD

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind.parse(self.metric))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta!r}")


def gt_priority(areas: np.ndarray) -> np.ndarray:
    """Gt indices ordered by area, then by index."""
    return np.lexsort((np.arange(areas.shape[0]), areas))


def topk_rows(col: np.ndarray, k: int, flat_ids: np.ndarray) -> np.ndarray:
    """Rows holding the ``k`` largest entries of ``col``, ties to the lower flat_id."""
    n = col.shape[0]
    if n <= k:
        cand = np.arange(n)
    else:
        kth = np.partition(col, n - k)[n - k]
        cand = np.flatnonzero(col >= kth)
    order = np.lexsort((flat_ids[cand], -col[cand]))
    return cand[order[:k]]


def best_row(col: np.ndarray, rows: np.ndarray, flat_ids: np.ndarray) -> int:
    """Row among ``rows`` with the largest score, ties to the lower flat_id."""
    vals = col[rows]
    top = rows[vals == vals.max()]
    return int(top[np.argmin(flat_ids[top])])


def _validate_scores(scores: np.ndarray, num_gts: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != num_gts:
        raise ValueError(f"score matrix shape {scores.shape} does not match {num_gts} gts")
    return scores


def stage_topk(scores: np.ndarray, gts, k: int, flat_ids: np.ndarray | None = None) -> AssignmentResult:
    """First-stage assignment: top-``k`` rows per gt, conflicts to the smaller gt."""
    garr = boxes_to_array(gts)
    scores = _validate_scores(scores, garr.shape[0])
    n, num_gts = scores.shape
    flat_ids = np.arange(n) if flat_ids is None else np.asarray(flat_ids)
    res = AssignmentResult.empty(n, num_gts)
    if n == 0:
        return res
    for j in gt_priority(garr[:, 2] * garr[:, 3]):
        rows = topk_rows(scores[:, j], k, flat_ids)
        rows = rows[res.gt_index[rows] < 0]
        res.gt_index[rows] = j
        res.stage[rows] = 1
        res.score[rows] = scores[rows, j]
    return res


def supplement(stage1: AssignmentResult, scores2: np.ndarray, gts, flat_ids: np.ndarray | None = None) -> AssignmentResult:
    """Second stage merged through the stage-1 mask.

    Each gt, in priority order, takes its best decayed-score point among the
    points that are still free or already its own. Landing on its own
    stage-1 point changes nothing; landing on a free point adds a stage-2
    positive.
    """
    garr = boxes_to_array(gts)
    scores2 = _validate_scores(scores2, garr.shape[0])
    n = scores2.shape[0]
    flat_ids = np.arange(n) if flat_ids is None else np.asarray(flat_ids)
    res = AssignmentResult(stage1.gt_index.copy(), stage1.stage.copy(), stage1.score.copy(), stage1.num_gts)
    if n == 0:
        return res
    for j in gt_priority(garr[:, 2] * garr[:, 3]):
        rows = np.flatnonzero((res.gt_index < 0) | (stage1.gt_index == j))
        if rows.size == 0:
            continue
        i = best_row(scores2[:, j], rows, flat_ids)
        if res.gt_index[i] < 0:
            res.gt_index[i] = j
            res.stage[i] = 2
            res.score[i] = scores2[i, j]
    return res


def hla_on_priors(cx, cy, sx, sy, flat_ids, gts, cfg: HlaConfig, isotropic: bool) -> AssignmentResult:
    """Two-stage assignment for Gaussian priors with centers ``(cx, cy)`` and std devs ``(sx, sy)``."""
    garr = boxes_to_array(gts)
    n = np.asarray(cx).shape[0]
    if garr.shape[0] == 0 or n == 0:
        return AssignmentResult.empty(n, garr.shape[0])
    s1 = prior_scores(cx, cy, sx, sy, garr, cfg.metric, isotropic)
    r1 = stage_topk(s1, garr, cfg.k, flat_ids)
    s2 = prior_scores(cx, cy, cfg.beta * sx, cfg.beta * sy, garr, cfg.metric, isotropic)
    return supplement(r1, s2, garr, flat_ids)


def hla_assign(points, gts, cfg: HlaConfig = HlaConfig()) -> AssignmentResult:
    """Assign feature points to gts by their Gaussian ERF distance."""
    ps = PointSet.coerce(points)
    return hla_on_priors(ps.px, ps.py, ps.er, ps.er, ps.flat_id, gts, cfg, isotropic=True)
