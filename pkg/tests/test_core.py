import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfla.core import (
    BACKGROUND,
    AssignmentResult,
    BBox,
    FeaturePoint,
    Gaussian2D,
    PointSet,
    Positive,
    bbox_area,
    iou,
    pairwise_iou,
)

from oracles import iou_ref

coord = st.floats(-1e3, 1e3, allow_nan=False)
side = st.floats(0.01, 500, allow_nan=False)
boxes = st.builds(BBox, coord, coord, side, side)


class TestBBox:
    @pytest.mark.parametrize(
        "box, area",
        [(BBox(0, 0, 4, 4), 16), (BBox(10, 5, 1, 1), 1), (BBox(0, 0, 3, 7), 21)],
    )
    def test_area(self, box, area):
        assert bbox_area(box) == area

    @pytest.mark.parametrize("w, h", [(0, 4), (4, 0), (-1, 2), (2, -3)])
    def test_degenerate_rejected(self, w, h):
        with pytest.raises(ValueError):
            BBox(0, 0, w, h)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            BBox(float("nan"), 0, 1, 1)

    def test_corners(self):
        assert BBox(10, 20, 4, 6).corners == (8, 17, 12, 23)
        assert BBox.from_corners(8, 17, 12, 23) == BBox(10, 20, 4, 6)

    @given(st.integers(-2000, 2000), st.integers(-2000, 2000), st.integers(1, 1000), st.integers(1, 1000))
    def test_corner_round_trip_exact_on_grid(self, cx, cy, w, h):
        # pixel-grid boxes: every intermediate is exactly representable
        b = BBox(cx / 4, cy / 4, w / 4, h / 4)
        for _ in range(10):
            b = BBox.from_corners(*b.corners)
        assert b == BBox(cx / 4, cy / 4, w / 4, h / 4)

    @given(boxes)
    def test_corner_round_trip_repeated(self, b):
        c = b
        for _ in range(50):
            c = BBox.from_corners(*c.corners)
        np.testing.assert_allclose([c.cx, c.cy, c.w, c.h], [b.cx, b.cy, b.w, b.h], rtol=1e-12, atol=1e-12)


class TestIou:
    def test_identical(self):
        assert iou(BBox(3, 4, 5, 6), BBox(3, 4, 5, 6)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 2, 2), BBox(10, 10, 2, 2)) == 0.0

    def test_half_shift(self):
        assert iou(BBox(0, 0, 4, 4), BBox(2, 0, 4, 4)) == pytest.approx(8 / 24, abs=1e-15)

    def test_touching_edges(self):
        assert iou(BBox(0, 0, 2, 2), BBox(2, 0, 2, 2)) == 0.0

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes, boxes)
    def test_matches_reference(self, a, b):
        ref = iou_ref((a.cx, a.cy, a.w, a.h), (b.cx, b.cy, b.w, b.h))
        assert iou(a, b) == pytest.approx(ref, rel=1e-9, abs=1e-12)

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(3)
        a = np.column_stack([rng.uniform(0, 50, 20), rng.uniform(0, 50, 20), rng.uniform(1, 20, 20), rng.uniform(1, 20, 20)])
        b = a[:7] + rng.uniform(-3, 3, (7, 4)) * [1, 1, 0, 0]
        m = pairwise_iou(a, b)
        for i in range(20):
            for j in range(7):
                assert m[i, j] == pytest.approx(iou(BBox(*a[i]), BBox(*b[j])), abs=1e-12)


class TestValueTypes:
    def test_gaussian_needs_positive_variance(self):
        with pytest.raises(ValueError):
            Gaussian2D(0, 0, 0, 1)

    def test_feature_point_needs_positive_radius(self):
        with pytest.raises(ValueError):
            FeaturePoint(0, 1, 1, 0, 0)

    def test_point_set_round_trip(self):
        pts = [FeaturePoint(0, 4, 4, 2, 0), FeaturePoint(1, 8, 8, 5, 7)]
        ps = PointSet.coerce(pts)
        assert len(ps) == 2
        assert list(ps) == pts
        assert ps[-1] == pts[1]
        with pytest.raises(IndexError):
            ps[2]


class TestAssignmentResult:
    def test_counts_and_labels(self):
        res = AssignmentResult.empty(5, 3)
        res.gt_index[[0, 2, 3]] = [1, 1, 2]
        res.stage[[0, 2, 3]] = [1, 2, 1]
        res.score[[0, 2, 3]] = [0.5, 0.25, 0.75]
        assert res.pos_counts.tolist() == [0, 2, 1]
        assert res.stage_counts(2).tolist() == [0, 1, 0]
        assert res.max_scores.tolist() == [0.0, 0.5, 0.75]
        assert res.labels[1] is BACKGROUND
        assert res.labels[2] == Positive(1, 2, 0.25)
        assert sum(isinstance(l, Positive) and l.gt_index == 1 for l in res.labels) == res.pos_counts[1]
