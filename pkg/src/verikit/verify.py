"""The five flow-verification tests, their combination, and the theoretical verifier.

A detection passes when at least one template of its proposed class clears
every enabled test; each comparison is a strict ">" against its threshold.
The theoretical verifier transcribes the three-test procedure whose
zero-false-positive guarantee the synthetic harness validates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    Box,
    Detection,
    FlowField,
    Image,
    TemplateSet,
    box_to_crop_frame,
    iou,
    mix_seed,
    splat_flow,
    square_crop_box,
)
from .geometry import RansacConfig, flow_to_correspondences, ransac_rigidity
from .metrics import DistanceMetricKind, image_distance, ncc_flagged

TEST_NAMES = ("sim_score", "f_inlier", "f_precision", "f_recall", "f_color")

# Tuned operating point; eta_diff = 0 means any overlapping other-class
# detection with equal-or-higher confidence fails the similarity test.
DEFAULT_THRESHOLDS_DICT = {
    "alpha_rig": 0.9,
    "alpha_color": 0.5,
    "alpha_prec": 0.9,
    "alpha_rec": 0.3,
    "eta_diff": 0.0,
    "eta_iou": 0.5,
}


@dataclass(frozen=True)
class Thresholds:
    """Pass thresholds for the five tests, all in [0, 1]."""

    alpha_rig: float = 0.9
    alpha_color: float = 0.5
    alpha_prec: float = 0.9
    alpha_rec: float = 0.3
    eta_diff: float = 0.0
    eta_iou: float = 0.5

    def __post_init__(self):
        for name in DEFAULT_THRESHOLDS_DICT:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def as_vector(self) -> tuple[float, ...]:
        """Canonical ordering used for lexicographic tie-breaks."""
        return (
            self.alpha_rig,
            self.alpha_color,
            self.alpha_prec,
            self.alpha_rec,
            self.eta_diff,
            self.eta_iou,
        )


@dataclass(frozen=True)
class TestScores:
    """Per-template test scores with their strict-threshold pass flags.

    Scores are None when skipped by short-circuit evaluation; a skipped
    test never has a raised flag. `ncc_informative` is False when the
    color score fell back to the zero-variance sentinel.
    """

    sim_score: float
    f_inlier: Optional[float]
    f_precision: Optional[float]
    f_recall: Optional[float]
    f_color: Optional[float]
    sim_pass: bool
    inlier_pass: bool
    precision_pass: bool
    recall_pass: bool
    color_pass: bool
    ncc_informative: bool = True

    def flag(self, test: str) -> bool:
        return {
            "sim_score": self.sim_pass,
            "f_inlier": self.inlier_pass,
            "f_precision": self.precision_pass,
            "f_recall": self.recall_pass,
            "f_color": self.color_pass,
        }[test]

    def passes(self, enabled: Sequence[str]) -> bool:
        """True when every enabled test's flag is raised (empty set passes)."""
        return all(self.flag(name) for name in enabled)

    def score_product(self) -> float:
        """Product of the four per-template scores (used to pick the best template)."""
        parts = (self.f_color, self.f_inlier, self.f_precision, self.f_recall)
        if any(p is None for p in parts):
            raise ValueError("score product requires fully evaluated scores")
        return math.prod(parts)  # type: ignore[arg-type]


@dataclass(frozen=True)
class TheoreticalConfig:
    """Bounds for the theoretical verifier: distance bound, classifier margin."""

    gamma: float
    delta: float
    metric: DistanceMetricKind = field(default_factory=DistanceMetricKind.l_inf)
    rigidity_epsilon: float = 0.5

    def __post_init__(self):
        if self.gamma < 0.0 or self.delta < 0.0:
            raise ValueError("gamma and delta must be >= 0")


def sim_score(target: Detection, all_detections: Sequence[Detection], eta_iou: float) -> float:
    """Margin of the target's confidence over overlapping other-class detections.

    Considers every detection of a different class whose box IoU with the
    target is at least eta_iou; returns 1 when none exists, otherwise the
    minimum of max(0, c(target) - c(other)).
    """
    best = None
    for other in all_detections:
        if other.class_id == target.class_id:
            continue
        if other.detection_id == target.detection_id:
            continue
        if iou(other.box, target.box) < eta_iou:
            continue
        margin = max(0.0, target.confidence - other.confidence)
        best = margin if best is None else min(best, margin)
    return 1.0 if best is None else best


def f_color(template: Image, flow: FlowField, crop: Image) -> tuple[float, bool]:
    """Color agreement (ncc+1)/2 between the warped template and the crop.

    NCC is computed over the pixels the forward warp actually wrote.
    Returns (score, informative); an uninformative NCC yields the 0.5
    sentinel score.
    """
    warped, written = splat_flow(template, flow, (crop.width, crop.height))
    r, informative = ncc_flagged(warped, crop, written)
    return 0.5 * (r + 1.0), informative


def f_inlier(
    flow: FlowField,
    cfg: RansacConfig,
    stride: int = 1,
    max_count: Optional[int] = 500,
) -> float:
    """Rigidity score: RANSAC inlier fraction of the flow correspondences."""
    corrs = flow_to_correspondences(flow, stride=stride, max_count=max_count, seed=cfg.seed)
    return ransac_rigidity(corrs, cfg)[1]


def f_precision(flow: FlowField, box_in_crop: Box) -> float:
    """Fraction of valid flow targets landing inside the box (boundary-inclusive)."""
    if flow.valid_count == 0:
        return 0.0
    t = flow.valid_targets()
    inside = (
        (t[:, 0] >= box_in_crop.x_min)
        & (t[:, 0] <= box_in_crop.x_max)
        & (t[:, 1] >= box_in_crop.y_min)
        & (t[:, 1] <= box_in_crop.y_max)
    )
    return float(inside.mean())


def f_recall(flow: FlowField, box_in_crop: Box) -> float:
    """IoU between the tight box around the flow targets and the detector box."""
    if flow.valid_count == 0:
        return 0.0
    t = flow.valid_targets()
    x0, y0 = t[:, 0].min(), t[:, 1].min()
    x1, y1 = t[:, 0].max(), t[:, 1].max()
    if x1 <= x0 or y1 <= y0:
        return 0.0  # degenerate tight box has zero area
    return iou(Box(x0, y0, x1, y1), box_in_crop)


@dataclass(frozen=True)
class VerifyResult:
    """Outcome of flow_verify for one detection."""

    accepted: bool
    scores: tuple[Optional[TestScores], ...]  # None where the flow was missing
    best_template: Optional[int]
    n_missing_flows: int = 0

    @property
    def n_templates_evaluated(self) -> int:
        return sum(1 for s in self.scores if s is not None)


def flow_verify(
    detection: Detection,
    templates: TemplateSet,
    flows: Sequence[Optional[FlowField]],
    crop: Image,
    all_detections: Sequence[Detection],
    th: Thresholds,
    cfg: RansacConfig,
    enabled: Optional[Sequence[str]] = None,
    full_scores: bool = False,
) -> VerifyResult:
    """Run the verification tests for a detection against its class templates.

    The similarity score is computed once per detection; the four flow
    tests run per template. A template passes when every enabled test's
    flag is raised; the detection is accepted when any template passes.
    The best template is the passing one with the largest product of its
    four scores (ties to the lowest index).

    `enabled` implements single-test ablations (default: all five tests);
    `full_scores` evaluates every score even after a test fails, which the
    default short-circuit skips. RANSAC seeds are derived per (detection,
    template) so results are independent of evaluation order.
    """
    if enabled is None:
        enabled = TEST_NAMES
    enabled = tuple(enabled)
    unknown = set(enabled) - set(TEST_NAMES)
    if unknown:
        raise ValueError(f"unknown test names: {sorted(unknown)}")
    if len(flows) != len(templates):
        raise ValueError("one flow entry per template required")

    sim = sim_score(detection, all_detections, th.eta_iou)
    sim_pass = sim > th.eta_diff
    x0, y0, _ = square_crop_box(detection.box)
    box_in_crop = box_to_crop_frame(detection.box, (x0, y0))

    scores: list[Optional[TestScores]] = []
    passing: list[int] = []
    n_missing = 0
    for t_idx, flow in enumerate(flows):
        if flow is None:
            scores.append(None)
            n_missing += 1
            continue
        tpl_cfg = replace(cfg, seed=mix_seed(cfg.seed, detection.detection_id, t_idx))
        vals: dict[str, Optional[float]] = {
            "f_inlier": None,
            "f_precision": None,
            "f_recall": None,
            "f_color": None,
        }
        flags = {"sim_score": sim_pass}
        informative = True
        alive = sim_pass or "sim_score" not in enabled
        for name in TEST_NAMES[1:]:
            if not full_scores:
                if not alive or name not in enabled:
                    flags[name] = False
                    continue
            if name == "f_inlier":
                v = f_inlier(flow, tpl_cfg)
                ok = v > th.alpha_rig
            elif name == "f_precision":
                v = f_precision(flow, box_in_crop)
                ok = v > th.alpha_prec
            elif name == "f_recall":
                v = f_recall(flow, box_in_crop)
                ok = v > th.alpha_rec
            else:
                v, informative = f_color(templates.templates[t_idx], flow, crop)
                ok = v > th.alpha_color
            vals[name] = float(v)
            flags[name] = bool(ok)
            if name in enabled and not ok:
                alive = False
        ts = TestScores(
            sim_score=sim,
            f_inlier=vals["f_inlier"],
            f_precision=vals["f_precision"],
            f_recall=vals["f_recall"],
            f_color=vals["f_color"],
            sim_pass=sim_pass,
            inlier_pass=flags["f_inlier"],
            precision_pass=flags["f_precision"],
            recall_pass=flags["f_recall"],
            color_pass=flags["f_color"],
            ncc_informative=informative,
        )
        scores.append(ts)
        if ts.passes(enabled):
            passing.append(t_idx)

    best: Optional[int] = None
    if passing:
        # Passing templates always have full scores when the four flow
        # tests are enabled; fall back to -inf for ablated-away scores.
        def product(i: int) -> float:
            s = scores[i]
            assert s is not None
            try:
                return s.score_product()
            except ValueError:
                return -math.inf

        best = max(passing, key=lambda i: (product(i), -i))
    return VerifyResult(
        accepted=bool(passing),
        scores=tuple(scores),
        best_template=best,
        n_missing_flows=n_missing,
    )


def theoretical_flow_verify(
    class_id: int,
    crop: Image,
    dataset: Sequence[TemplateSet],
    classifier: Callable[[Image, Image], float],
    flow_estimator: Callable[[Image, Image], FlowField],
    cfg: TheoreticalConfig,
    ransac: Optional[RansacConfig] = None,
) -> bool:
    """Three-test theoretical verifier; True only if some template passes all.

    For each template of the proposed class: (1) reject if any template of
    another class scores within `delta` of it under the classifier;
    (2) estimate the flow and reject if the warped-template distance to the
    crop exceeds `gamma`; (3) reject unless the rigidity estimate over ALL
    flow correspondences (no subsampling) is 1 at `rigidity_epsilon`.

    No assumption is made about flow_estimator quality: a bad estimator
    costs recall, never precision.
    """
    by_class = {ts.class_id: ts for ts in dataset}
    if class_id not in by_class:
        raise ValueError(f"no templates for class {class_id}")
    if ransac is None:
        ransac = RansacConfig(iterations=200, epsilon=cfg.rigidity_epsilon, seed=0)
    else:
        ransac = replace(ransac, epsilon=cfg.rigidity_epsilon)

    c_cache: dict[tuple[int, int], float] = {}

    def c(j: int, n: int) -> float:
        key = (j, n)
        if key not in c_cache:
            c_cache[key] = classifier(by_class[j].templates[n], crop)
        return c_cache[key]

    for m in range(len(by_class[class_id])):
        if not _verify_match(class_id, m, crop, by_class, c, flow_estimator, cfg, ransac):
            continue
        return True
    return False


def _verify_match(i, m, crop, by_class, c, flow_estimator, cfg, ransac) -> bool:
    # Test 1: similar object comparison.
    for j, tset in by_class.items():
        if j == i:
            continue
        for n in range(len(tset)):
            if c(i, m) < c(j, n) + cfg.delta:
                return False
    # Test 2: color comparison against the warped template.
    template = by_class[i].templates[m]
    flow = flow_estimator(template, crop)
    if (flow.height, flow.width) != (template.height, template.width):
        raise ValueError("estimated flow dimensions must match the template")
    warped = splat_flow(template, flow, (crop.width, crop.height))[0]
    if image_distance(cfg.metric, warped, crop) > cfg.gamma:
        return False
    # Test 3: exact rigidity over every correspondence.
    corrs = flow_to_correspondences(flow, stride=1, max_count=None, seed=ransac.seed)
    _, fraction = ransac_rigidity(corrs, ransac)
    if fraction < 1.0 - 1e-9:
        return False
    return True
