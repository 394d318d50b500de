import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfla.analysis import (
    DEFAULT_BETAS,
    GaussianAnchorAssigner,
    RflaAssigner,
    TrialConfig,
    _bin_index,
    imbalance,
    make_assigner,
    positives_per_interval,
    random_gts,
    sweep_anchor_scale,
    sweep_beta,
    sweep_k,
    trial_gts,
)
from rfla.baselines import AnchorSpec, gaussian_anchor_assign, generate_anchors
from rfla.core import AssignmentResult, BBox
from rfla.distances import score_matrix
from rfla.hla import HlaConfig, hla_assign
from rfla.receptive_field import ExplicitRadius, PyramidLevelSpec, PyramidSpec, build_grid, resnet50_fpn_pyramid


def small_pyramid():
    return resnet50_fpn_pyramid(128, 128, strides=(4, 8, 16))


def zero_assigner(gts):
    return AssignmentResult.empty(10, len(gts))


class TestTrialConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"scale_lo": 64, "scale_hi": 64},
            {"n_intervals": 0},
            {"n_trials": -1},
            {"aspect": "round"},
            {"scale_hi": 900},
            {"seed": -1},
            {"seed": 2**64},
            {"jitter": (2.0, 1.0)},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrialConfig(**kw)

    def test_edges(self):
        np.testing.assert_array_equal(TrialConfig().edges, np.arange(0, 68, 4))


class TestRandomGts:
    def test_empty(self):
        assert random_gts(TrialConfig(n_trials=0)) == []

    def test_deterministic(self):
        cfg = TrialConfig(seed=123, n_trials=50)
        assert random_gts(cfg) == random_gts(cfg)
        assert random_gts(cfg) != random_gts(TrialConfig(seed=124, n_trials=50))

    def test_prefix_stable(self):
        assert random_gts(TrialConfig(n_trials=40)) == random_gts(TrialConfig(n_trials=80))[:40]

    def test_square_scale_mean(self):
        scales = np.array([g.w for g in random_gts(TrialConfig(n_trials=10_000))])
        se = 64 / math.sqrt(12) / math.sqrt(scales.size)
        assert abs(scales.mean() - 32) < 3 * se

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**64 - 1), st.sampled_from(["square", "jitter"]))
    def test_boxes_inside_image(self, seed, aspect):
        cfg = TrialConfig(seed=seed, n_trials=20, scale_lo=10, scale_hi=200, image_w=300, image_h=220, aspect=aspect)
        for g in random_gts(cfg):
            x1, y1, x2, y2 = g.corners
            assert x1 >= -1e-9 and y1 >= -1e-9 and x2 <= 300 + 1e-9 and y2 <= 220 + 1e-9
            assert 10 < max(g.w, g.h) <= 200 + 1e-9
            if aspect == "square":
                assert g.w == g.h
            else:
                assert 0.5 - 1e-12 <= g.w / g.h <= 2 + 1e-12

    def test_multi_gt_trials(self):
        cfg = TrialConfig(n_trials=5, gts_per_trial=3)
        assert len(random_gts(cfg)) == 15
        assert random_gts(cfg)[3:6] == trial_gts(cfg, 1)


class TestHistogram:
    def test_bookkeeping(self):
        cfg = TrialConfig(n_trials=500, gts_per_trial=2)
        hist = positives_per_interval(zero_assigner, cfg)
        assert hist.n_gts == 1000
        assert len(hist.intervals) == 16
        assert hist.intervals[0].scale_lo == 0 and hist.intervals[-1].scale_hi == 64
        for a, b in zip(hist.intervals, hist.intervals[1:]):
            assert a.scale_hi == b.scale_lo

    def test_zero_assigner(self):
        hist = positives_per_interval(zero_assigner, TrialConfig(n_trials=300))
        assert hist.means.tolist() == [0.0] * 16
        assert imbalance(hist) == 0.0

    def test_empty_intervals_are_nan(self):
        hist = positives_per_interval(zero_assigner, TrialConfig(n_trials=2, n_intervals=16))
        assert sum(iv.n_gts == 0 for iv in hist.intervals) >= 14
        assert all(math.isnan(iv.mean_positives) for iv in hist.intervals if iv.n_gts == 0)

    def test_binning_right_closed(self):
        # a scale landing on an interior edge belongs to the lower interval
        cfg = TrialConfig(n_trials=1, scale_lo=0, scale_hi=2, n_intervals=2)
        assert _bin_index(np.array([1.0, 2.0, 1e-9, 1.0 + 1e-12]), cfg).tolist() == [0, 1, 0, 1]

    def test_single_level_means_exactly_k(self):
        pyr = PyramidSpec(256, 256, (PyramidLevelSpec(8, ExplicitRadius(12)),))
        cfg = TrialConfig(n_trials=400, image_w=256, image_h=256)
        hist = positives_per_interval(make_assigner("rfla", pyr), cfg)
        assert hist.means.tolist() == [3.0] * 16
        assert hist.stage2_positives == 0

    def test_maxiou_tiny_trough(self):
        pyr = PyramidSpec(256, 256, (PyramidLevelSpec(8, ExplicitRadius(12)),))
        cfg = TrialConfig(n_trials=2000, image_w=256, image_h=256)
        hist = positives_per_interval(make_assigner("maxiou", pyr), cfg)
        assert np.all(hist.means[:2] < 0.05)

    def test_workers_bit_identical(self):
        pyr = small_pyramid()
        cfg = TrialConfig(n_trials=300, image_w=128, image_h=128, seed=99)
        for name in ("rfla", "center", "maxiou"):
            a = positives_per_interval(make_assigner(name, pyr), cfg, workers=1)
            b = positives_per_interval(make_assigner(name, pyr), cfg, workers=4)
            assert repr(a) == repr(b)

    def test_bad_workers(self):
        with pytest.raises(ValueError):
            positives_per_interval(zero_assigner, TrialConfig(n_trials=1), workers=0)

    def test_unknown_assigner(self):
        with pytest.raises(ValueError):
            make_assigner("atss", small_pyramid())


class TestWindowedAssigners:
    @pytest.mark.parametrize("metric", ["kld", "wd", "giou"])
    def test_rfla_window_matches_full(self, metric):
        pyr = small_pyramid()
        ps = build_grid(pyr)
        cfg = HlaConfig(metric=metric)
        fast = RflaAssigner(ps, cfg)
        tc = TrialConfig(n_trials=60, image_w=128, image_h=128, scale_hi=100, seed=3)
        for i in range(tc.n_trials):
            gts = trial_gts(tc, i)
            a, b = fast(gts), hla_assign(ps, gts, cfg)
            np.testing.assert_array_equal(a.gt_index, b.gt_index)
            np.testing.assert_array_equal(a.stage, b.stage)
            np.testing.assert_array_equal(a.score, b.score)

    @pytest.mark.parametrize("metric", ["kld", "wd", "giou"])
    def test_gaussian_anchor_window_matches_full(self, metric):
        anchors = generate_anchors(small_pyramid())
        cfg = HlaConfig(metric=metric)
        fast = GaussianAnchorAssigner(anchors, cfg)
        tc = TrialConfig(n_trials=40, image_w=128, image_h=128, scale_hi=100, seed=5, aspect="jitter")
        for i in range(tc.n_trials):
            gts = trial_gts(tc, i)
            np.testing.assert_array_equal(fast(gts).gt_index, gaussian_anchor_assign(anchors, gts, cfg).gt_index)

    def test_multi_gt_falls_back_to_full(self):
        ps = build_grid(small_pyramid())
        tc = TrialConfig(n_trials=20, image_w=128, image_h=128, gts_per_trial=3, seed=8)
        fast = RflaAssigner(ps)
        for i in range(tc.n_trials):
            gts = trial_gts(tc, i)
            np.testing.assert_array_equal(fast(gts).gt_index, hla_assign(ps, gts).gt_index)


class TestSweeps:
    def setup_method(self):
        self.pyr = small_pyramid()
        self.tc = TrialConfig(n_trials=200, image_w=128, image_h=128)

    def test_empty(self):
        assert sweep_k([], self.pyr, self.tc) == []
        assert sweep_beta([], self.pyr, self.tc) == []
        assert sweep_anchor_scale([], self.pyr, self.tc) == []

    def test_k3_equals_direct_run(self):
        (row,) = sweep_k([3], self.pyr, self.tc)
        hist = positives_per_interval(make_assigner("rfla", self.pyr), self.tc)
        assert row.mean_pos_overall == hist.overall_mean
        assert row.imbalance == imbalance(hist)

    def test_means_track_k(self):
        rows = sweep_k([1, 2, 3, 4], self.pyr, self.tc)
        for k, row in zip([1, 2, 3, 4], rows):
            assert k <= row.min_interval_mean and row.max_interval_mean <= k + 1
            assert row.mean_pos_overall == pytest.approx(k, abs=0.1)

    def test_beta_grid_rows(self):
        rows = sweep_beta(DEFAULT_BETAS, self.pyr, self.tc)
        assert [r.value for r in rows] == [0.95, 0.9, 0.85, 0.8]
        assert all(r.param == "beta" for r in rows)
        assert all(0 <= r.stage2_share <= 1 for r in rows)

    def test_beta_one_no_decay(self):
        ps = build_grid(self.pyr)
        g = [BBox(60, 60, 20, 30)]
        np.testing.assert_array_equal(score_matrix(ps, g, radius_scale=1.0), score_matrix(ps, g))

    def test_smaller_anchor_scale_raises_tiny_mean(self):
        pyr = PyramidSpec(256, 256, (PyramidLevelSpec(8, ExplicitRadius(12)),))
        tc = TrialConfig(n_trials=1000, image_w=256, image_h=256)
        r8, r2 = sweep_anchor_scale([8, 2], pyr, tc)
        assert r8.value == 8 and r2.value == 2
        h8 = positives_per_interval(make_assigner("maxiou", pyr), tc)
        h2 = positives_per_interval(make_assigner("maxiou", pyr, anchor=AnchorSpec(2)), tc)
        assert h2.means[:4].mean() > h8.means[:4].mean()
        assert r8.mean_pos_overall == h8.overall_mean


class TestBetaDecay:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_decay_lowers_kld_rfd_for_large_gts(self, seed):
        # dKLD/der = 4er/w^2 + 4er/h^2 - 2/er < 0 while the gt is wider than the ERF
        rng = np.random.default_rng(seed)
        ps = build_grid(PyramidSpec(128, 128, (PyramidLevelSpec(8, ExplicitRadius(float(rng.uniform(2, 10)))),)))
        er = float(ps.er[0])
        g = [BBox(*rng.uniform(20, 108, 2), *rng.uniform(2.5 * er, 6 * er, 2))]
        prev = score_matrix(ps, g)[:, 0]
        for beta in (0.95, 0.9, 0.85, 0.8):
            cur = score_matrix(ps, g, radius_scale=beta)[:, 0]
            assert np.all(cur < prev)
            prev = cur
