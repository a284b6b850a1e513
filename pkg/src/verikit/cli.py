"""Command-line frontend: verify, rerank, eval, synth, theorem, sweep, gridsearch.

Every run emits a manifest (command, resolved config, seeds, input hashes,
version, wall time) so results can be replayed; rerunning with the same
inputs and seeds reproduces outputs byte-identically apart from wall times.
Flows are inputs, never computed by a learned model; the optional
`--matcher exhaustive-ncc` fills missing flows by brute-force patch
matching on small images so the pipeline is self-contained at desk scale.

Exit codes: 0 success, 2 validation error, 3 invalid theorem premises.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, evaluate, fileio, matching, synth
from .core import (
    Box,
    Detection,
    Image,
    SceneRecord,
    VerikitError,
    box_to_crop_frame,
    crop_to_square,
    square_crop_box,
)
from .geometry import Correspondence, RansacConfig
from .verify import TEST_NAMES, Thresholds, VerifyResult

log = logging.getLogger("verikit")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INVALID_PREMISES = 3

_THRESHOLD_KEYS = ("alpha_rig", "alpha_color", "alpha_prec", "alpha_rec", "eta_diff", "eta_iou")
_RANSAC_KEYS = ("iterations", "epsilon", "seed", "min_correspondences")


def load_config(path) -> dict:
    """Parse a flat key = value config file (comments with '#')."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise VerikitError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if value.lower() in ("true", "false"):
            out[key] = value.lower() == "true"
        elif value.startswith('"') and value.endswith('"') and len(value) >= 2:
            out[key] = value[1:-1]
        else:
            try:
                out[key] = int(value)
            except ValueError:
                try:
                    out[key] = float(value)
                except ValueError:
                    out[key] = value
    return out


def _resolve(args, config: dict, keys: Sequence[str]) -> dict:
    resolved = {}
    for key in keys:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in config:
            resolved[key] = config[key]
    return resolved


def resolve_settings(args) -> tuple[Thresholds, RansacConfig]:
    config = load_config(args.config) if getattr(args, "config", None) else {}
    th = Thresholds(**_resolve(args, config, _THRESHOLD_KEYS))
    cfg = RansacConfig(**_resolve(args, config, _RANSAC_KEYS))
    return th, cfg


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_inputs(paths: Sequence[Path]) -> dict:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_file():
            hashes[str(p)] = _hash_file(p)
        elif p.is_dir():
            combined = hashlib.sha256()
            for sub in sorted(p.rglob("*")):
                if sub.is_file():
                    combined.update(sub.name.encode())
                    combined.update(_hash_file(sub).encode())
            hashes[str(p)] = combined.hexdigest()
    return hashes


def write_manifest(
    path: Path, command: str, settings: dict, seeds: dict, inputs: Sequence[Path], wall_time: float
) -> None:
    manifest = {
        "command": command,
        "config": settings,
        "seeds": seeds,
        "input_hashes": _hash_inputs(inputs),
        "toolkit_version": __version__,
        "wall_time_s": wall_time,
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Shared argument plumbing
# ---------------------------------------------------------------------------


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    for key in _THRESHOLD_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, default=None)


def _add_ransac_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--min-correspondences", dest="min_correspondences", type=int, default=None)


def _add_suite_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--suite", type=Path, required=True, help="suite directory (synth layout)")


def _enabled_tests(args) -> tuple[str, ...]:
    enabled = list(args.enable) if args.enable else list(TEST_NAMES)
    for name in enabled + (args.disable or []):
        if name not in TEST_NAMES:
            raise VerikitError(f"unknown test {name!r}; expected one of {TEST_NAMES}")
    for name in args.disable or []:
        if name in enabled:
            enabled.remove(name)
    return tuple(enabled)


def _fill_missing_flows(suite: synth.DetectionSuite, max_side: int = matching.MAX_SIDE) -> synth.DetectionSuite:
    """Compute absent flows with the exhaustive patch matcher where feasible."""
    by_class = {t.class_id: t for t in suite.templates}
    new_scenes = []
    filled = 0
    for scene in suite.scenes:
        flows = dict(scene.flows)
        for det in scene.detections:
            tset = by_class.get(det.class_id)
            if tset is None:
                continue
            crop = None
            for t_idx, template in enumerate(tset.templates):
                key = (det.detection_id, det.class_id, t_idx)
                if key in flows:
                    continue
                if max(template.width, template.height) > max_side:
                    log.warning("template too large for exhaustive matcher, skipping %s", key)
                    continue
                if crop is None:
                    crop = crop_to_square(scene.scene, det.box)
                    if max(crop.width, crop.height) > max_side:
                        log.warning("crop too large for exhaustive matcher, skipping detection %d", det.detection_id)
                        break
                flows[key] = matching.exhaustive_ncc_flow(template, crop)
                filled += 1
        new_scenes.append(
            SceneRecord(
                scene=scene.scene,
                ground_truth=scene.ground_truth,
                detections=scene.detections,
                flows=flows,
            )
        )
    if filled:
        log.info("exhaustive matcher filled %d missing flows", filled)
    return synth.DetectionSuite(
        templates=suite.templates, scenes=tuple(new_scenes), truth=suite.truth, params=suite.params
    )


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _verify_scene_task(payload):
    scene, templates, th, cfg, enabled, full_scores = payload
    return evaluate.verify_scenes([scene], templates, th, cfg, enabled=enabled, full_scores=full_scores)[0]


def _result_record(scene_idx: int, det: Detection, result: VerifyResult) -> dict:
    templates = []
    for t_idx, ts in enumerate(result.scores):
        if ts is None:
            templates.append({"template_index": t_idx, "missing_flow": True})
            continue
        templates.append(
            {
                "template_index": t_idx,
                "f_inlier": ts.f_inlier,
                "f_precision": ts.f_precision,
                "f_recall": ts.f_recall,
                "f_color": ts.f_color,
                "ncc_informative": ts.ncc_informative,
                "passes": {
                    "sim_score": ts.sim_pass,
                    "f_inlier": ts.inlier_pass,
                    "f_precision": ts.precision_pass,
                    "f_recall": ts.recall_pass,
                    "f_color": ts.color_pass,
                },
            }
        )
    sim = None
    for ts in result.scores:
        if ts is not None:
            sim = ts.sim_score
            break
    reason = None
    if not result.accepted:
        reason = "missing-flow" if result.n_templates_evaluated == 0 else "failed-tests"
    return {
        "scene": scene_idx,
        "detection_id": det.detection_id,
        "class_id": det.class_id,
        "confidence": det.confidence,
        "box": det.box.as_list(),
        "accepted": result.accepted,
        "best_template": result.best_template,
        "reason": reason,
        "sim_score": sim,
        "templates": templates,
    }


def cmd_verify(args) -> int:
    th, cfg = resolve_settings(args)
    enabled = _enabled_tests(args)
    suite = synth.load_suite(args.suite)
    if args.matcher == "exhaustive-ncc":
        suite = _fill_missing_flows(suite)

    start = time.perf_counter()
    payloads = [
        (scene, suite.templates, th, cfg, enabled, args.full_scores) for scene in suite.scenes
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_verify_scene_task, payloads))
    else:
        results = [_verify_scene_task(p) for p in payloads]
    wall = time.perf_counter() - start

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_accepted = 0
    n_missing_dets = 0
    n_missing_pairs = 0
    with open(out, "w") as f:
        for s_idx, (scene, scene_results) in enumerate(zip(suite.scenes, results)):
            for det, result in zip(scene.detections, scene_results):
                rec = _result_record(s_idx, det, result)
                n_accepted += int(result.accepted)
                n_missing_pairs += result.n_missing_flows
                if rec["reason"] == "missing-flow":
                    n_missing_dets += 1
                    log.warning(
                        "scene %d detection %d rejected: no flows available",
                        s_idx,
                        det.detection_id,
                    )
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    total = suite.num_detections
    summary = {
        "detections": total,
        "accepted": n_accepted,
        "rejected": total - n_accepted,
        "missing_flow_detections": n_missing_dets,
        "missing_flow_pairs": n_missing_pairs,
        "enabled_tests": list(enabled),
        "thresholds": asdict(th),
        "ransac": asdict(cfg),
    }
    summary_path = out.with_suffix(out.suffix + ".summary.json")
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "verify",
        {**asdict(th), **asdict(cfg), "enabled_tests": list(enabled), "jobs": args.jobs},
        {"ransac_seed": cfg.seed},
        [args.suite],
        wall,
    )
    print(f"verified {total} detections: {n_accepted} accepted, {total - n_accepted} rejected")
    return EXIT_OK


def _read_reports(path) -> dict[int, list[dict]]:
    by_scene: dict[int, list[dict]] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rec = json.loads(line)
                by_scene.setdefault(int(rec["scene"]), []).append(rec)
    return by_scene


def _records_to_scene(records: list[dict], ground_truth) -> tuple[SceneRecord, list[bool]]:
    detections = []
    accepted = []
    for rec in sorted(records, key=lambda r: r["detection_id"]):
        detections.append(
            Detection(
                detection_id=int(rec["detection_id"]),
                class_id=int(rec["class_id"]),
                box=Box(*[float(v) for v in rec["box"]]),
                confidence=float(rec["confidence"]),
            )
        )
        accepted.append(bool(rec["accepted"]))
    scene = SceneRecord(
        scene=Image.zeros(1, 1, 1),  # evaluation never touches pixels
        ground_truth=tuple(ground_truth),
        detections=tuple(detections),
    )
    return scene, accepted


def _load_annotation_gt(path) -> dict[int, list[tuple[Box, int]]]:
    gt: dict[int, list[tuple[Box, int]]] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("kind") == "ground_truth":
                gt.setdefault(int(rec["scene"]), []).append(
                    (Box(*[float(v) for v in rec["box"]]), int(rec["class_id"]))
                )
    return gt


def cmd_eval(args) -> int:
    start = time.perf_counter()
    reports = _read_reports(args.reports)
    gt_by_scene = _load_annotation_gt(args.annotations)
    scene_ids = sorted(set(reports) | set(gt_by_scene))
    scenes = []
    accepted = []
    for s_idx in scene_ids:
        scene, acc = _records_to_scene(reports.get(s_idx, []), gt_by_scene.get(s_idx, []))
        scenes.append(scene)
        accepted.append(acc)
    summary = evaluate.mean_ap(scenes, accepted, iou_threshold=args.iou_threshold)

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "ap", "max_precision"])
        for class_id, ap in summary.per_class:
            writer.writerow([class_id, f"{ap:.12g}", f"{summary.class_curves[class_id].max_precision:.12g}"])
    for class_id, curve in sorted(summary.class_curves.items()):
        _write_pr_csv(prefix.parent / f"{prefix.name}_pr_class{class_id:03d}.csv", curve)
    _write_pr_csv(prefix.parent / f"{prefix.name}_pr_overall.csv", summary.overall_curve)

    json_summary = {
        "map": summary.map,
        "max_precision": summary.max_precision,
        "per_class": [{"class_id": c, "ap": ap} for c, ap in summary.per_class],
    }
    with open(prefix.with_suffix(".json"), "w") as f:
        json.dump(json_summary, f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(
        prefix.with_suffix(".manifest.json"),
        "eval",
        {"iou_threshold": args.iou_threshold},
        {},
        [Path(args.reports), Path(args.annotations)],
        time.perf_counter() - start,
    )
    print(f"mAP={summary.map:.4f} max_precision={summary.max_precision:.4f}")
    return EXIT_OK


def _write_pr_csv(path: Path, curve: evaluate.PrCurve) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["recall", "precision"])
        for r, p in curve.points:
            writer.writerow([f"{r:.12g}", f"{p:.12g}"])


def cmd_rerank(args) -> int:
    start = time.perf_counter()
    reports = _read_reports(args.reports)
    entries = []
    for s_idx in sorted(reports):
        for rec in reports[s_idx]:
            entries.append((s_idx, rec))
    entries.sort(
        key=lambda e: (
            0 if e[1]["accepted"] else 1,
            -e[1]["confidence"],
            e[1]["detection_id"],
            e[0],
        )
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for rank, (s_idx, rec) in enumerate(entries):
            row = {
                "rank": rank,
                "scene": s_idx,
                "detection_id": rec["detection_id"],
                "class_id": rec["class_id"],
                "confidence": rec["confidence"],
                "accepted": rec["accepted"],
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "rerank",
        {},
        {},
        [Path(args.reports)],
        time.perf_counter() - start,
    )
    print(f"ranked {len(entries)} detections -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    start = time.perf_counter()
    suite = synth.make_detection_suite(
        num_scenes=args.scenes,
        objects_per_scene=args.objects,
        fp_rate=args.fp_rate,
        seed=args.seed if args.seed is not None else 0,
        num_classes=args.classes,
        templates_per_class=args.templates_per_class,
        scene_size=args.scene_size,
        template_size=args.template_size,
    )
    synth.save_suite(suite, args.out)
    write_manifest(
        Path(args.out) / "run.manifest.json",
        "synth",
        suite.params,
        {"seed": suite.params["seed"]},
        [],
        time.perf_counter() - start,
    )
    print(f"suite with {len(suite.scenes)} scenes, {suite.num_detections} detections -> {args.out}")
    return EXIT_OK


def cmd_theorem(args) -> int:
    start = time.perf_counter()
    seed = args.seed if args.seed is not None else 0
    spec = synth.AssumptionDatasetSpec(
        gamma=args.gamma,
        num_classes=args.classes,
        templates_per_class=args.templates_per_class,
        size=args.size,
    )
    ds = synth.build_assumption_dataset(spec, seed=seed)
    audits = [
        synth.audit_assumption_1(ds, n_samples=args.audit_samples, seed=seed),
        synth.audit_assumption_2(ds, n_samples=args.audit_samples, seed=seed),
    ]
    report = {
        "gamma": ds.spec.gamma,
        "delta": ds.delta,
        "measured_lipschitz": ds.lipschitz,
        "metric": "l_inf",
        "audits": [asdict(a) for a in audits],
        "arms": [],
        "recall": {},
    }
    if not all(a.passed for a in audits):
        _dump_theorem_report(args.out, report)
        print("invalid-premises: assumption audit failed", file=sys.stderr)
        return EXIT_INVALID_PREMISES

    estimators = args.estimators.split(",") if args.estimators else list(synth.ESTIMATOR_NAMES)
    cfg = ds.theoretical_config(rigidity_epsilon=args.rigidity_epsilon)
    for est in estimators:
        arm = synth.run_theorem_trials(
            ds, trials=args.trials, estimator=est.strip(), cfg=cfg, seed=seed, wrong_class=True
        )
        report["arms"].append(
            {
                "estimator": arm.estimator,
                "trials": arm.trials,
                "false_positives": arm.accepts,
            }
        )
        print(f"estimator={arm.estimator} trials={arm.trials} false_positives: {arm.accepts}")
    recall_arm = synth.run_theorem_trials(
        ds,
        trials=args.recall_trials,
        estimator="ground-truth",
        cfg=cfg,
        seed=seed,
        wrong_class=False,
    )
    report["recall"] = {
        "estimator": recall_arm.estimator,
        "trials": recall_arm.trials,
        "accepted": recall_arm.accepts,
        "rate": recall_arm.acceptance_rate,
    }
    print(
        f"recall (ground-truth flow): {recall_arm.accepts}/{recall_arm.trials}"
        f" = {recall_arm.acceptance_rate:.3f}"
    )
    _dump_theorem_report(args.out, report)
    if args.out:
        write_manifest(
            Path(args.out).with_suffix(".manifest.json"),
            "theorem",
            {
                "gamma": args.gamma,
                "classes": args.classes,
                "templates_per_class": args.templates_per_class,
                "size": args.size,
                "trials": args.trials,
                "recall_trials": args.recall_trials,
                "rigidity_epsilon": args.rigidity_epsilon,
            },
            {"seed": seed},
            [],
            time.perf_counter() - start,
        )
    return EXIT_OK


def _dump_theorem_report(out, report: dict) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")


def cmd_sweep(args) -> int:
    th, cfg = resolve_settings(args)
    start = time.perf_counter()
    suite = synth.load_suite(args.suite)
    counts = [int(c) for c in args.counts.split(",")]
    rows = evaluate.sweep_viewpoints(
        suite.scenes, suite.templates, counts, th, cfg, iou_threshold=args.iou_threshold
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["viewpoints", "map", "max_precision", "wall_time_per_detection_s"])
        for row in rows:
            writer.writerow(
                [
                    row.viewpoint_count,
                    f"{row.map:.12g}",
                    f"{row.max_precision:.12g}",
                    f"{row.wall_time_per_detection:.6g}",
                ]
            )
    for row in rows:
        print(
            f"viewpoints={row.viewpoint_count} mAP={row.map:.4f} "
            f"max_precision={row.max_precision:.4f} "
            f"t/detection={row.wall_time_per_detection * 1000:.1f}ms"
        )
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "sweep",
        {**asdict(th), **asdict(cfg), "counts": counts},
        {"ransac_seed": cfg.seed},
        [args.suite],
        time.perf_counter() - start,
    )
    return EXIT_OK


def _parse_grid_axis(text: Optional[str], default: float) -> list[float]:
    if not text:
        return [default]
    return [float(v) for v in text.split(",")]


def cmd_gridsearch(args) -> int:
    _, cfg = resolve_settings(args)
    start = time.perf_counter()
    suite = synth.load_suite(args.suite)
    defaults = Thresholds()
    axes = {
        "alpha_rig": _parse_grid_axis(args.grid_alpha_rig, defaults.alpha_rig),
        "alpha_color": _parse_grid_axis(args.grid_alpha_color, defaults.alpha_color),
        "alpha_prec": _parse_grid_axis(args.grid_alpha_prec, defaults.alpha_prec),
        "alpha_rec": _parse_grid_axis(args.grid_alpha_rec, defaults.alpha_rec),
        "eta_diff": _parse_grid_axis(args.grid_eta_diff, defaults.eta_diff),
        "eta_iou": _parse_grid_axis(args.grid_eta_iou, defaults.eta_iou),
    }
    grid = [
        Thresholds(
            alpha_rig=ar, alpha_color=ac, alpha_prec=ap, alpha_rec=are, eta_diff=ed, eta_iou=ei
        )
        for ar in axes["alpha_rig"]
        for ac in axes["alpha_color"]
        for ap in axes["alpha_prec"]
        for are in axes["alpha_rec"]
        for ed in axes["eta_diff"]
        for ei in axes["eta_iou"]
    ]
    best = evaluate.grid_search(
        suite.scenes, suite.templates, grid, cfg, iou_threshold=args.iou_threshold
    )
    result = asdict(best)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
            f.write("\n")
        write_manifest(
            path.with_suffix(".manifest.json"),
            "gridsearch",
            {"grid_points": len(grid), **asdict(cfg)},
            {"ransac_seed": cfg.seed},
            [args.suite],
            time.perf_counter() - start,
        )
    print("best thresholds: " + json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_sift_verify(args) -> int:
    start = time.perf_counter()
    detections = fileio.read_detections_jsonl(args.detections)
    matches: dict[int, dict[int, list[Correspondence]]] = {}
    with open(args.matches) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            det_id = int(rec["detection_id"])
            t_idx = int(rec["template_index"])
            pairs = [
                Correspondence((float(u1), float(v1)), (float(u2), float(v2)))
                for u1, v1, u2, v2 in rec["matches"]
            ]
            matches.setdefault(det_id, {})[t_idx] = pairs

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_pass = 0
    with open(out, "w") as f:
        for det in detections:
            per_template = matches.get(det.detection_id, {})
            template_lists = [per_template[i] for i in sorted(per_template)]
            x0, y0, _ = square_crop_box(det.box)
            box_in_crop = box_to_crop_frame(det.box, (x0, y0))
            ok = evaluate.sift_verify(
                det,
                template_lists,
                box_in_crop,
                s_matches_min=args.s_matches_min,
                s_precision_min=args.s_precision_min,
            )
            n_pass += int(ok)
            f.write(
                json.dumps(
                    {"detection_id": det.detection_id, "accepted": ok}, sort_keys=True
                )
                + "\n"
            )
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"),
        "sift-verify",
        {"s_matches_min": args.s_matches_min, "s_precision_min": args.s_precision_min},
        {},
        [Path(args.detections), Path(args.matches)],
        time.perf_counter() - start,
    )
    print(f"sift-verify: {n_pass}/{len(detections)} accepted")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verikit", description="Detection verification toolkit"
    )
    parser.add_argument("--version", action="version", version=f"verikit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the verification tests over a suite")
    _add_suite_flags(p)
    p.add_argument("--out", type=Path, required=True, help="reports JSONL path")
    p.add_argument("--config", type=Path, default=None)
    _add_threshold_flags(p)
    _add_ransac_flags(p)
    p.add_argument("--enable", action="append", metavar="TEST", help="enable only these tests")
    p.add_argument("--disable", action="append", metavar="TEST", help="drop single tests (ablation)")
    p.add_argument("--full-scores", action="store_true", help="evaluate every score, no short-circuit")
    p.add_argument("--jobs", type=int, default=1, help="parallel scene workers")
    p.add_argument("--matcher", choices=["none", "exhaustive-ncc"], default="none")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="PR curves, mAP and max precision from reports")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--out-prefix", type=Path, required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rerank", help="emit the pass-gated ranking from reports")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("synth", help="generate a synthetic detection suite")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, default=6)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--fp-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--templates-per-class", type=int, default=2)
    p.add_argument("--scene-size", type=int, default=144)
    p.add_argument("--template-size", type=int, default=48)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("theorem", help="zero-false-positive trials on audited datasets")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--recall-trials", type=int, default=200)
    p.add_argument("--estimators", type=str, default=None, help="comma list; default all")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--templates-per-class", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.02)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--rigidity-epsilon", type=float, default=0.5)
    p.add_argument("--audit-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="JSON report path")
    p.set_defaults(func=cmd_theorem)

    p = sub.add_parser("sweep", help="accuracy/speed table over viewpoint counts")
    _add_suite_flags(p)
    p.add_argument("--counts", type=str, required=True, help="comma list, e.g. 1,2")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    _add_threshold_flags(p)
    _add_ransac_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gridsearch", help="exhaustive threshold search maximizing mAP")
    _add_suite_flags(p)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    for key in _THRESHOLD_KEYS:
        p.add_argument(
            f"--grid-{key.replace('_', '-')}",
            dest=f"grid_{key}",
            type=str,
            default=None,
            help="comma list of values",
        )
    _add_ransac_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("sift-verify", help="sparse keypoint-match verification")
    p.add_argument("--detections", type=Path, required=True, help="detections JSONL")
    p.add_argument("--matches", type=Path, required=True, help="matches JSONL")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--s-matches-min", type=int, default=30)
    p.add_argument("--s-precision-min", type=float, default=0.9)
    p.set_defaults(func=cmd_sift_verify)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("VERIKIT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (VerikitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
