"""verikit: geometric and photometric verification of object-instance detections.

Given candidate detections plus dense pixel correspondences to template
images, decide which detections are trustworthy, rerank them, and evaluate
the result. Includes a theoretical verifier with a synthetic harness that
validates its zero-false-positive property at desk scale.
"""

__version__ = "0.1.0"

from .core import (
    Box,
    Detection,
    EmptyCropError,
    FlowField,
    Image,
    SceneRecord,
    TemplateSet,
    VerikitError,
    apply_flow,
    crop_to_square,
    iou,
    mix_seed,
)
from .geometry import (
    Correspondence,
    DegenerateConfigurationError,
    FundamentalMatrix,
    Homography,
    RansacConfig,
    UnderdeterminedError,
    apply_homography,
    eight_point,
    epipolar_distance,
    flow_to_correspondences,
    ransac_rigidity,
)
from .metrics import DistanceMetricKind, image_distance, ncc
from .verify import (
    TestScores,
    TheoreticalConfig,
    Thresholds,
    VerifyResult,
    f_color,
    f_inlier,
    f_precision,
    f_recall,
    flow_verify,
    sim_score,
    theoretical_flow_verify,
)
from .evaluate import (
    PrCurve,
    RankedDetection,
    average_precision,
    grid_search,
    mean_ap,
    rerank,
    sift_verify,
    sweep_viewpoints,
)

__all__ = [
    "Box",
    "Correspondence",
    "DegenerateConfigurationError",
    "Detection",
    "DistanceMetricKind",
    "EmptyCropError",
    "FlowField",
    "FundamentalMatrix",
    "Homography",
    "Image",
    "PrCurve",
    "RankedDetection",
    "RansacConfig",
    "SceneRecord",
    "TemplateSet",
    "TestScores",
    "TheoreticalConfig",
    "Thresholds",
    "UnderdeterminedError",
    "VerifyResult",
    "VerikitError",
    "apply_flow",
    "apply_homography",
    "average_precision",
    "crop_to_square",
    "eight_point",
    "epipolar_distance",
    "f_color",
    "f_inlier",
    "f_precision",
    "f_recall",
    "flow_to_correspondences",
    "flow_verify",
    "grid_search",
    "image_distance",
    "iou",
    "mean_ap",
    "mix_seed",
    "ncc",
    "ransac_rigidity",
    "rerank",
    "sift_verify",
    "sim_score",
    "sweep_viewpoints",
    "theoretical_flow_verify",
]
