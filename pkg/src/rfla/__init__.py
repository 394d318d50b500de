"""Gaussian receptive-field label assignment for tiny-object detection."""

from .analysis import IntervalHistogram, TrialConfig, imbalance, positives_per_interval, random_gts
from .baselines import (
    AnchorSpec,
    MaxIouConfig,
    ScaleRanges,
    center_sampling_assign,
    gaussian_anchor_assign,
    generate_anchors,
    maxiou_assign,
    receptive_anchor_assign,
)
from .core import BACKGROUND, AssignmentResult, BBox, FeaturePoint, Gaussian2D, PointSet, Positive, bbox_area, iou
from .distances import MetricKind, giou_erf, gt_gaussian, kld, rfd, score_matrix, wasserstein2_sq
from .hla import HlaConfig, hla_assign, stage_topk
from .receptive_field import (
    ConvLayerSpec,
    ConvStack,
    ExplicitRadius,
    PyramidLevelSpec,
    PyramidSpec,
    build_grid,
    erf_gaussian,
    erf_radius,
    resnet50_fpn_pyramid,
    trf,
)
from .targets import LtrbTarget, centerness_star, ltrb

__version__ = "0.1.0"
