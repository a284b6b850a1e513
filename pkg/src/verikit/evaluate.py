"""Pass-gated reranking, PR curves, mAP, sweeps, and threshold grid search.

Reranking sorts every accepted detection above every rejected one while
preserving base-confidence order inside each group. AP uses the all-points
precision-envelope integral; "max precision" is the maximum over all
nonempty ranked prefixes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    Box,
    Detection,
    SceneRecord,
    TemplateSet,
    crop_to_square,
    iou,
)
from .geometry import Correspondence, RansacConfig
from .verify import TEST_NAMES, Thresholds, VerifyResult, flow_verify, sim_score


@dataclass(frozen=True)
class RankedDetection:
    """A detection with its verification gate and final ranking key."""

    detection: Detection
    accepted: bool
    scene_index: int = 0

    @property
    def rank_key(self) -> tuple[int, float, int]:
        # Descending order: accepted first, then confidence, then lower id.
        return (1 if self.accepted else 0, self.detection.confidence, -self.detection.detection_id)


def rerank(detections: Sequence[Detection], accepted: Sequence[bool]) -> list[RankedDetection]:
    """Order detections so every accepted one precedes every rejected one.

    Within each acceptance group order is by base confidence descending,
    ties by lower detection_id first.
    """
    if len(detections) != len(accepted):
        raise ValueError("one accepted flag per detection required")
    ranked = [RankedDetection(d, bool(a)) for d, a in zip(detections, accepted)]
    return sorted(ranked, key=lambda r: r.rank_key, reverse=True)


@dataclass(frozen=True)
class PrCurve:
    """Precision-recall points at each ranked prefix, plus AP and max precision."""

    points: tuple[tuple[float, float], ...]
    ap: float
    max_precision: float


def _greedy_tp_flags(
    entries: Sequence[tuple[int, Detection]],
    gt_by_scene: dict[int, list[tuple[Box, int]]],
    iou_threshold: float,
) -> np.ndarray:
    """Greedy matching down a ranked list of (scene_index, detection).

    A detection is a true positive when it overlaps an unmatched same-class
    ground-truth box of its scene with IoU >= iou_threshold; the best-IoU
    ground truth is consumed, ties broken by ground-truth index.
    """
    matched: set[tuple[int, int]] = set()
    flags = np.zeros(len(entries), dtype=bool)
    for k, (scene_idx, det) in enumerate(entries):
        best_iou = 0.0
        best_gt = None
        for g, (box, class_id) in enumerate(gt_by_scene.get(scene_idx, [])):
            if class_id != det.class_id or (scene_idx, g) in matched:
                continue
            v = iou(det.box, box)
            if v >= iou_threshold and v > best_iou:
                best_iou, best_gt = v, g
        if best_gt is not None:
            matched.add((scene_idx, best_gt))
            flags[k] = True
    return flags


def _curve_from_flags(flags: np.ndarray, n_gt: int) -> PrCurve:
    tp = np.cumsum(flags)
    k = np.arange(1, len(flags) + 1)
    precision = tp / k
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(precision)
    # All-points AP: integrate the precision envelope over recall.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev_r) * envelope))
    max_p = float(precision.max()) if len(precision) else 0.0
    points = tuple((float(r), float(p)) for r, p in zip(recall, precision))
    return PrCurve(points=points, ap=ap, max_precision=max_p)


def average_precision(
    ranked: Sequence[RankedDetection],
    ground_truth: Sequence[tuple[Box, int]],
    class_id: int,
    iou_threshold: float = 0.5,
) -> Optional[PrCurve]:
    """PR curve and AP for one class of a ranked list; None when the class has no GT."""
    gt = [(b, c) for b, c in ground_truth if c == class_id]
    if not gt:
        return None
    # Single ground-truth pool; multi-scene pooling lives in mean_ap.
    entries = [(0, r.detection) for r in ranked if r.detection.class_id == class_id]
    if not entries:
        return PrCurve(points=(), ap=0.0, max_precision=0.0)
    flags = _greedy_tp_flags(entries, {0: gt}, iou_threshold)
    return _curve_from_flags(flags, len(gt))


@dataclass(frozen=True)
class EvalSummary:
    """Pooled evaluation over a scene set."""

    map: float
    per_class: tuple[tuple[int, float], ...]
    max_precision: float
    class_curves: dict[int, PrCurve]
    overall_curve: PrCurve


def mean_ap(
    scenes: Sequence[SceneRecord],
    accepted: Sequence[Sequence[bool]],
    iou_threshold: float = 0.5,
) -> EvalSummary:
    """mAP over classes with ground truth, pooling detections across scenes.

    Detections from all scenes are ranked jointly; matching stays within a
    detection's own scene. Max precision is taken over prefixes of the
    global joint ranking.
    """
    if len(scenes) != len(accepted):
        raise ValueError("one accepted-flag list per scene required")
    ranked: list[RankedDetection] = []
    for s_idx, (scene, acc) in enumerate(zip(scenes, accepted)):
        if len(acc) != len(scene.detections):
            raise ValueError(f"scene {s_idx}: flag count mismatch")
        for det, a in zip(scene.detections, acc):
            ranked.append(RankedDetection(det, bool(a), scene_index=s_idx))
    ranked.sort(
        key=lambda r: (
            0 if r.accepted else 1,
            -r.detection.confidence,
            r.detection.detection_id,
            r.scene_index,
        )
    )
    gt_by_scene = {i: list(s.ground_truth) for i, s in enumerate(scenes)}
    gt_classes = sorted({c for gts in gt_by_scene.values() for _, c in gts})

    per_class = []
    class_curves = {}
    for c in gt_classes:
        entries = [(r.scene_index, r.detection) for r in ranked if r.detection.class_id == c]
        class_gt = {
            i: [(b, cc) for b, cc in gts if cc == c] for i, gts in gt_by_scene.items()
        }
        n_gt = sum(len(v) for v in class_gt.values())
        if entries:
            flags = _greedy_tp_flags(entries, class_gt, iou_threshold)
            curve = _curve_from_flags(flags, n_gt)
        else:
            curve = PrCurve(points=(), ap=0.0, max_precision=0.0)
        per_class.append((c, curve.ap))
        class_curves[c] = curve

    all_entries = [(r.scene_index, r.detection) for r in ranked]
    total_gt = sum(len(v) for v in gt_by_scene.values())
    if all_entries:
        flags = _greedy_tp_flags(all_entries, gt_by_scene, iou_threshold)
        overall = _curve_from_flags(flags, total_gt)
    else:
        overall = PrCurve(points=(), ap=0.0, max_precision=0.0)

    map_value = float(np.mean([ap for _, ap in per_class])) if per_class else 0.0
    return EvalSummary(
        map=map_value,
        per_class=tuple(per_class),
        max_precision=overall.max_precision,
        class_curves=class_curves,
        overall_curve=overall,
    )


def verify_scenes(
    scenes: Sequence[SceneRecord],
    templates: Sequence[TemplateSet],
    th: Thresholds,
    cfg: RansacConfig,
    enabled: Optional[Sequence[str]] = None,
    template_indices: Optional[Sequence[int]] = None,
    full_scores: bool = False,
) -> list[list[VerifyResult]]:
    """Run flow verification for every detection of every scene.

    `template_indices` restricts evaluation to a viewpoint subset by
    masking out the other templates' flows, which keeps per-template
    RANSAC seeds identical across subset sizes.
    """
    by_class = {t.class_id: t for t in templates}
    keep = None if template_indices is None else set(int(i) for i in template_indices)
    results = []
    for scene in scenes:
        scene_results = []
        for det in scene.detections:
            tset = by_class.get(det.class_id)
            if tset is None:
                scene_results.append(
                    VerifyResult(accepted=False, scores=(), best_template=None)
                )
                continue
            flows = scene.flows_for(det, len(tset))
            if keep is not None:
                flows = [f if i in keep else None for i, f in enumerate(flows)]
            crop = crop_to_square(scene.scene, det.box)
            scene_results.append(
                flow_verify(
                    det,
                    tset,
                    flows,
                    crop,
                    scene.detections,
                    th,
                    cfg,
                    enabled=enabled,
                    full_scores=full_scores,
                )
            )
        results.append(scene_results)
    return results


def accepted_flags(results: Sequence[Sequence[VerifyResult]]) -> list[list[bool]]:
    return [[r.accepted for r in scene] for scene in results]


@dataclass(frozen=True)
class SweepRow:
    viewpoint_count: int
    map: float
    max_precision: float
    wall_time_per_detection: float


def equally_spaced_indices(total: int, count: int) -> list[int]:
    """`count` equally spaced template indices out of `total`."""
    if not (1 <= count <= total):
        raise ValueError(f"count must be in [1, {total}]")
    return sorted(set(int(round(x)) for x in np.linspace(0, total - 1, count)))


def sweep_viewpoints(
    scenes: Sequence[SceneRecord],
    templates: Sequence[TemplateSet],
    counts: Sequence[int],
    th: Thresholds,
    cfg: RansacConfig,
    iou_threshold: float = 0.5,
    enabled: Optional[Sequence[str]] = None,
) -> list[SweepRow]:
    """Accuracy-versus-speed table over template viewpoint counts.

    Wall time per detection is informational only; everything else is a
    deterministic function of the inputs.
    """
    max_templates = min(len(t) for t in templates)
    rows = []
    n_dets = sum(len(s.detections) for s in scenes) or 1
    for count in counts:
        indices = equally_spaced_indices(max_templates, count)
        start = time.perf_counter()
        results = verify_scenes(
            scenes, templates, th, cfg, enabled=enabled, template_indices=indices
        )
        elapsed = time.perf_counter() - start
        summary = mean_ap(scenes, accepted_flags(results), iou_threshold)
        rows.append(
            SweepRow(
                viewpoint_count=count,
                map=summary.map,
                max_precision=summary.max_precision,
                wall_time_per_detection=elapsed / n_dets,
            )
        )
    return rows


def grid_search(
    scenes: Sequence[SceneRecord],
    templates: Sequence[TemplateSet],
    grid: Sequence[Thresholds],
    cfg: RansacConfig,
    iou_threshold: float = 0.5,
    enabled: Optional[Sequence[str]] = None,
) -> Thresholds:
    """Exhaustive threshold search maximizing mAP over the grid.

    Ties break toward higher max precision, then the lexicographically
    smallest threshold vector (alpha_rig, alpha_color, alpha_prec,
    alpha_rec, eta_diff, eta_iou). Flow-test scores are threshold-free, so
    they are computed once and re-gated per grid point.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    if enabled is None:
        enabled = TEST_NAMES
    enabled = tuple(enabled)

    base = verify_scenes(
        scenes, templates, grid[0], cfg, enabled=enabled, full_scores=True
    )
    sim_cache: dict[float, list[list[float]]] = {}

    def sims_for(eta_iou: float) -> list[list[float]]:
        if eta_iou not in sim_cache:
            sim_cache[eta_iou] = [
                [sim_score(d, scene.detections, eta_iou) for d in scene.detections]
                for scene in scenes
            ]
        return sim_cache[eta_iou]

    def gate(scores, sim, th: Thresholds) -> bool:
        checks = {
            "sim_score": sim > th.eta_diff,
            "f_inlier": scores.f_inlier is not None and scores.f_inlier > th.alpha_rig,
            "f_precision": scores.f_precision is not None
            and scores.f_precision > th.alpha_prec,
            "f_recall": scores.f_recall is not None and scores.f_recall > th.alpha_rec,
            "f_color": scores.f_color is not None and scores.f_color > th.alpha_color,
        }
        return all(checks[name] for name in enabled)

    best_key = None
    best_th = None
    for th in grid:
        sims = sims_for(th.eta_iou)
        flags = []
        for s_idx, scene_results in enumerate(base):
            scene_flags = []
            for d_idx, result in enumerate(scene_results):
                sim = sims[s_idx][d_idx]
                ok = any(
                    ts is not None and gate(ts, sim, th) for ts in result.scores
                )
                scene_flags.append(ok)
            flags.append(scene_flags)
        summary = mean_ap(scenes, flags, iou_threshold)
        key = (summary.map, summary.max_precision, tuple(-v for v in th.as_vector()))
        if best_key is None or key > best_key:
            best_key, best_th = key, th
    assert best_th is not None
    return best_th


def sift_verify(
    detection: Detection,
    matches_per_template: Sequence[Sequence[Correspondence]],
    box_in_crop: Box,
    s_matches_min: int = 30,
    s_precision_min: float = 0.9,
) -> bool:
    """Sparse-keypoint verification over externally supplied matches.

    Passes when some template has strictly more than `s_matches_min`
    matches with an inside-box fraction strictly above `s_precision_min`.
    Rigidity and recall tests are omitted: sparse matches are too few to
    support either. `detection` identifies whose box frame `box_in_crop`
    is expressed in.
    """
    del detection
    for matches in matches_per_template:
        if len(matches) <= s_matches_min:
            continue
        inside = sum(
            1 for m in matches if box_in_crop.contains(m.dst[0], m.dst[1])
        )
        if inside / len(matches) > s_precision_min:
            return True
    return False
