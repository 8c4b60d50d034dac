"""Command-line entry point: possense {track,group,monitor,eval,synth,run-all}."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy
import shapely

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .evaluation import (
    GroupReport,
    evaluate_mot,
    grouping_prf,
    grouping_prf_pooled,
    read_mot_file,
    write_group_report,
    write_mot_report,
)
from .grouping import GroupPartition
from .mapping import CameraError, load_camera
from .model import DetectionFormatError, parse_detection_file, read_world_tracks, write_world_tracks
from .monitoring import (
    FacilityZone,
    MaskClassifierProcess,
    aggregate_daily,
    detect_contacts,
    group_diameter_series,
    load_zones,
    report_rows,
    scan_violations,
    write_contact_events,
    write_distance_events,
    write_report_rows,
)
from .pipeline import (
    group_tracks,
    mask_observations,
    partitions_from_records,
    read_partitions,
    relabel_partition,
    identity_votes,
    score_grouping,
    track_detections,
    tracklet_boxes,
    tracklets_to_world,
    write_pair_features,
    write_partitions,
)
from .synth import (
    demo_scenario,
    generate,
    load_scenario,
    planted_scenario,
    read_group_file,
    write_bundle,
)
from .tracking import write_mot_results

log = logging.getLogger("possense")


class CliError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# manifest


def sha256_of(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    return {
        "possense": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "shapely": shapely.__version__,
    }


def write_manifest(outdir: Path, command: str, cfg: PipelineConfig, inputs: dict, outputs: dict, extra: dict | None = None) -> Path:
    """Config hash, input/output hashes and library versions.

    No timestamps or absolute paths, so reruns elsewhere hash identically.
    """
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "inputs": {k: {"path": os.path.relpath(v, outdir), "sha256": sha256_of(v)} for k, v in sorted(inputs.items()) if v is not None},
        "outputs": {k: sha256_of(v) for k, v in sorted(outputs.items())},
        "versions": versions(),
    }
    if extra:
        manifest.update(extra)
    path = outdir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _base_time(cfg: PipelineConfig) -> datetime:
    try:
        return datetime.fromisoformat(cfg.monitoring.base_time)
    except ValueError as exc:
        raise ConfigError(f"monitoring.base_time: {exc}", "monitoring.base_time") from exc


def _require(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# commands


def cmd_track(detections, calib, cfg: PipelineConfig, outdir: Path, appearance=None, fmt=None) -> dict:
    det_path = _require(detections, "detection file")
    calib_path = _require(calib, "calibration file")
    app_path = _require(appearance, "appearance sidecar") if appearance else None
    cam = load_camera(calib_path)
    parsed = parse_detection_file(det_path, fmt, app_path, cam.image_size)
    for issue in parsed.issues:
        log.warning("%s", issue)
    clock = cfg.frame_clock()
    tracklets = track_detections(parsed.frames, cfg.tracker_config(), clock, cfg.tracking.min_len)
    world = tracklets_to_world(tracklets, cam, clock)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = {"tracks": outdir / "tracks.txt", "world_tracks": outdir / "world_tracks.csv"}
    write_mot_results(outputs["tracks"], tracklets)
    write_world_tracks(outputs["world_tracks"], world)
    if parsed.issues:
        outputs["ingest_issues"] = outdir / "ingest_issues.txt"
        outputs["ingest_issues"].write_text("".join(i + "\n" for i in parsed.issues))
    write_manifest(outdir, "track", cfg, {"detections": det_path, "calibration": calib_path, "appearance": app_path}, outputs)
    return {"tracks": len(tracklets), "issues": len(parsed.issues)}


def cmd_group(world_tracks, cfg: PipelineConfig, outdir: Path) -> dict:
    path = _require(world_tracks, "world trajectory file")
    tracks = read_world_tracks(path)
    results = group_tracks(tracks, cfg.grouping.window_s, cfg.stride_s, cfg.grouping_params(), smooth_s=cfg.grouping.smooth_s)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = {"partitions": outdir / "partitions.jsonl", "pair_features": outdir / "pair_features.csv"}
    write_partitions(outputs["partitions"], results)
    write_pair_features(outputs["pair_features"], results)
    write_manifest(outdir, "group", cfg, {"world_tracks": path}, outputs)
    n_groups = sum(1 for _, part in results for g in part.groups if len(g) > 1)
    return {"windows": len(results), "groups": n_groups}


def cmd_monitor(world_tracks, partitions, cfg: PipelineConfig, outdir: Path, zones=None, classifier: Sequence[str] | None = None) -> dict:
    tracks_path = _require(world_tracks, "world trajectory file")
    part_path = _require(partitions, "partition file")
    zones_path = _require(zones, "zones file") if zones else None
    m = cfg.monitoring
    tracks = read_world_tracks(tracks_path)
    results = partitions_from_records(read_partitions(part_path), cfg.grouping.window_s)
    base = _base_time(cfg)
    violations = scan_violations(tracks, results, m.threshold_m, m.min_duration_s, mode=m.distance_mode)
    zone_list: list[FacilityZone] = load_zones(zones_path) if zones_path else []
    contacts = detect_contacts(tracks, zone_list, m.aspect_ratio_max_sit)
    crops = mask_observations(tracks, m.min_px_height)
    if classifier:
        with MaskClassifierProcess(classifier) as proc:
            crops = [proc.classify(c) for c in crops]
    stats = aggregate_daily(contacts, crops, tracks, m.bucket, base, cfg.clock.fps)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "distance_events": outdir / "distance_events.csv",
        "contact_events": outdir / "contact_events.csv",
        "mask_crops": outdir / "mask_crops.csv",
        "group_diameters": outdir / "group_diameters.csv",
        "report": outdir / "report.csv",
    }
    write_distance_events(outputs["distance_events"], violations, base)
    write_contact_events(outputs["contact_events"], contacts, base)
    with open(outputs["mask_crops"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "track_id", "left", "top", "width", "height", "label"])
        for c in crops:
            l, t, wd, h = c.crop_rect
            w.writerow([c.frame_index, c.track_id, f"{l:.3f}", f"{t:.3f}", f"{wd:.3f}", h, c.label])
    with open(outputs["group_diameters"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "group", "diameter_m"])
        for t, g, d in group_diameter_series(tracks, results):
            w.writerow([f"{t:.6f}", " ".join(map(str, g)), f"{d:.4f}"])
    write_report_rows(outputs["report"], report_rows(stats))
    write_manifest(
        outdir, "monitor", cfg, {"world_tracks": tracks_path, "partitions": part_path, "zones": zones_path}, outputs
    )
    return {"violations": len(violations), "contacts": len(contacts), "mask_crops": len(crops)}


def cmd_eval(gt, results, mode: str, cfg: PipelineConfig, outdir: Path, gt_boxes=None, pred_boxes=None) -> dict:
    gt_path = _require(gt, "ground-truth file")
    res_path = _require(results, "results file")
    outdir.mkdir(parents=True, exist_ok=True)
    inputs = {"gt": gt_path, "results": res_path}
    if mode == "mot":
        report = evaluate_mot(read_mot_file(gt_path), read_mot_file(res_path), cfg.evaluation.iou_min)
        outputs = {"mot_report": outdir / "mot_report.csv", "mot_table": outdir / "mot_report.txt"}
        write_mot_report(report, outputs["mot_report"], outputs["mot_table"])
        summary = {"MOTA": report.MOTA, "MOTP": report.MOTP, "IDs": report.IDs, "id_count": report.id_count}
    elif mode == "grouping":
        gt_windows = read_group_file(gt_path)
        pred_records = read_partitions(res_path)
        if gt_boxes or pred_boxes:
            gb = read_mot_file(_require(gt_boxes, "ground-truth box file"))
            pb = read_mot_file(_require(pred_boxes, "predicted box file"))
            inputs.update({"gt_boxes": Path(gt_boxes), "pred_boxes": Path(pred_boxes)})
            for rec in gt_windows:
                rec.setdefault("start", rec["window"] * cfg.grouping.window_s)
                rec.setdefault("end", rec["start"] + cfg.grouping.window_s)
            scores = score_grouping(
                gt_windows,
                partitions_from_records(pred_records, cfg.grouping.window_s),
                gb,
                pb,
                cfg.frame_clock(),
                cfg.evaluation.iou_min,
            )
            pairs = [(s.gt_groups, s.pred_groups) for s in scores]
        else:
            pred_by_window = {rec["window"]: rec["groups"] for rec in pred_records}
            pairs = []
            for rec in gt_windows:
                universe = sorted(m for g in rec["groups"] for m in g)
                part = GroupPartition([tuple(g) for g in pred_by_window.get(rec["window"], [])])
                votes = {m: {m: 1} for m in universe}
                pairs.append((rec["groups"], relabel_partition(universe, part, votes)))
        report = grouping_prf_pooled(pairs, cfg.grouping.window_s)
        outputs = {"group_report": outdir / "group_report.csv", "group_windows": outdir / "group_windows.csv"}
        write_group_report(report, outputs["group_report"])
        with open(outputs["group_windows"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "precision", "recall", "f1"])
            for k, (g, p) in enumerate(pairs):
                r = grouping_prf(g, p)
                w.writerow([k, *("" if v is None else f"{v:.6f}" for v in (r.precision, r.recall, r.f1))])
        summary = {"precision": report.precision, "recall": report.recall, "f1": report.f1}
    else:
        raise CliError(f"unknown eval mode {mode!r}")
    write_manifest(outdir, f"eval_{mode}", cfg, inputs, outputs)
    return summary


def _scenario(args):
    if getattr(args, "scenario", None):
        sc = load_scenario(_require(args.scenario, "scenario file"))
    elif getattr(args, "planted", False):
        sc = planted_scenario(args.seed if args.seed is not None else 0)
    else:
        sc = demo_scenario()
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_synth(sc, outdir: Path, cfg: PipelineConfig) -> dict:
    result = generate(sc)
    paths = write_bundle(result, outdir)
    write_manifest(outdir, "synth", cfg, {}, paths, {"seed": sc.seed})
    return {"agents": len(sc.agents), "detections": len(result.detections), "excluded": result.excluded_agents}


def cmd_run_all(sc, cfg: PipelineConfig, outdir: Path, zones=None) -> dict:
    """Synthesize, track, group, monitor and evaluate into one bundle."""
    cfg.clock.fps = sc.fps
    cfg.grouping.window_s = sc.window_seconds
    inp = outdir / "input"
    synth_summary = cmd_synth(sc, inp, cfg)
    if zones is not None:
        # keep the bundle self-contained
        local = inp / "zones.json"
        local.write_bytes(zones.read_bytes() if hasattr(zones, "read_bytes") else Path(zones).read_bytes())
        zones = local
    track_summary = cmd_track(inp / "det.txt", inp / "calibration.json", cfg, outdir / "track", inp / "appearance.bin")
    group_summary = cmd_group(outdir / "track" / "world_tracks.csv", cfg, outdir / "group")
    monitor_summary = cmd_monitor(
        outdir / "track" / "world_tracks.csv", outdir / "group" / "partitions.jsonl", cfg, outdir / "monitor", zones
    )
    mot = cmd_eval(inp / "gt.txt", outdir / "track" / "tracks.txt", "mot", cfg, outdir / "eval")
    grouping = cmd_eval(
        inp / "groups_gt.jsonl",
        outdir / "group" / "partitions.jsonl",
        "grouping",
        cfg,
        outdir / "eval",
        gt_boxes=inp / "gt.txt",
        pred_boxes=outdir / "track" / "tracks.txt",
    )
    summary = {
        "seed": sc.seed,
        "planted_agents": synth_summary["agents"],
        "tracks": track_summary["tracks"],
        "windows": group_summary["windows"],
        "groups": group_summary["groups"],
        "violations": monitor_summary["violations"],
        "contacts": monitor_summary["contacts"],
        "mask_crops": monitor_summary["mask_crops"],
        "MOTA": round(mot["MOTA"], 6),
        "IDs": mot["IDs"],
        "grouping_f1": None if grouping["f1"] is None else round(grouping["f1"], 6),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# --------------------------------------------------------------------------
# argument parsing


def _parse_set(values: Sequence[str]) -> dict:
    out = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}", item)
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="possense", description=__doc__)
    p.add_argument("--version", action="version", version=f"possense {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", parents=[common], help="detections -> tracks + world trajectories")
    t.add_argument("--detections", required=True)
    t.add_argument("--calib", help="camera calibration JSON")
    t.add_argument("--appearance", help="appearance sidecar (float32, 128 per record)")
    t.add_argument("--format", choices=["mot", "jsonl"])
    t.add_argument("--n-skip", type=int, help="process every n-th frame (clock.n_skip)")
    t.add_argument("--min-len", type=int, help="tracklet length filter (tracking.min_len)")

    g = sub.add_parser("group", parents=[common], help="world trajectories -> groups per window")
    g.add_argument("--tracks", required=True)
    g.add_argument("--window", type=float, help="window length in seconds (grouping.window_s)")

    m = sub.add_parser("monitor", parents=[common], help="distances, contacts, mask crops, report")
    m.add_argument("--tracks", required=True)
    m.add_argument("--partitions", required=True)
    m.add_argument("--zones")
    m.add_argument("--threshold", type=float, help="social distance in metres (monitoring.threshold_m)")
    m.add_argument("--classifier", nargs="+", help="external mask classifier command")

    e = sub.add_parser("eval", parents=[common], help="tracking or grouping metrics")
    e.add_argument("--mode", choices=["mot", "grouping"], default="mot")
    e.add_argument("--gt", required=True)
    e.add_argument("--results", required=True)
    e.add_argument("--gt-boxes", help="MOT gt file used to map predicted ids (grouping mode)")
    e.add_argument("--pred-boxes", help="MOT result file used to map predicted ids (grouping mode)")

    for name, helptext in (("synth", "generate a synthetic bundle"), ("run-all", "synthetic end-to-end run")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--scenario", help="scenario JSON (default: bundled demo)")
        s.add_argument("--planted", action="store_true", help="random planted-group scenario")
        s.add_argument("--seed", type=int)
        if name == "run-all":
            s.add_argument("--zones")
    return p


_FLAG_KEYS = {
    "n_skip": "clock.n_skip",
    "min_len": "tracking.min_len",
    "window": "grouping.window_s",
    "threshold": "monitoring.threshold_m",
}


def run(argv: Sequence[str] | None = None) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = _parse_set(args.set)
    for attr, key in _FLAG_KEYS.items():
        if getattr(args, attr, None) is not None:
            overrides[key] = getattr(args, attr)
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    if args.command == "track":
        return cmd_track(args.detections, args.calib, cfg, out, args.appearance, args.format)
    if args.command == "group":
        return cmd_group(args.tracks, cfg, out)
    if args.command == "monitor":
        return cmd_monitor(args.tracks, args.partitions, cfg, out, args.zones, args.classifier)
    if args.command == "eval":
        return cmd_eval(args.gt, args.results, args.mode, cfg, out, args.gt_boxes, args.pred_boxes)
    if args.command == "synth":
        return cmd_synth(_scenario(args), out, cfg)
    if args.command == "run-all":
        zones = args.zones
        if zones is None and not args.scenario and not args.planted:
            zones = resources.files("possense").joinpath("data/demo_zones.json")
        return cmd_run_all(_scenario(args), cfg, out, zones)
    raise CliError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        summary = run(argv)
    except ConfigError as exc:
        err = {"error": "config", "message": str(exc)}
        if exc.key:
            err["key"] = exc.key
        print(json.dumps(err), file=sys.stderr)
        return 2
    except (CliError, DetectionFormatError, CameraError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
