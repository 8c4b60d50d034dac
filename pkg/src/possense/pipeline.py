"""Glue between the stages: detections -> tracks -> world -> groups -> events."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .evaluation import FrameBoxes, grouping_prf, match_frame
from .grouping import GroupPartition, GroupingParams, TrajectoryWindow, build_windows, detect_groups
from .mapping import CameraModel, HorizonError, backproject_pixels, ground_anchor_pixel
from .model import Detection, FrameClock, WorldTrack
from .monitoring import MaskObservation, mask_crop
from .tracking import Tracker, TrackerConfig, Tracklet, filter_short_tracklets

log = logging.getLogger(__name__)

WindowResult = tuple[TrajectoryWindow, GroupPartition]


def track_detections(
    frames: Mapping[int, Sequence[Detection]],
    config: TrackerConfig = TrackerConfig(),
    clock: FrameClock = FrameClock(),
    min_len: int = 4,
) -> list[Tracklet]:
    tracker = Tracker(config, clock)
    tracker.run(frames)
    return filter_short_tracklets(tracker.tracklets(), min_len)


def tracklets_to_world(tracklets: Sequence[Tracklet], cam: CameraModel, clock: FrameClock = FrameClock()) -> list[WorldTrack]:
    """Back-project each observation's ground anchor onto the ground plane.

    Observations whose anchor ray misses the ground are dropped with a warning.
    """
    out = []
    for tl in tracklets:
        keep, xy = [], []
        for det in tl.observations:
            u, v = ground_anchor_pixel(det)
            try:
                xy.append(backproject_pixels(cam, [[u, v]])[0])
            except HorizonError:
                log.warning("track %d frame %d: anchor above the horizon, sample dropped", tl.track_id, det.frame_index)
                continue
            keep.append(det)
        if not keep:
            continue
        frames = np.array([d.frame_index for d in keep], dtype=int)
        out.append(
            WorldTrack(
                tl.track_id,
                frames,
                np.array([clock.time_of(f) for f in frames]),
                np.array(xy, dtype=float),
                np.array([d.bbox for d in keep], dtype=float),
                tl.class_label,
            )
        )
    return out


def smooth_positions(t: np.ndarray, xy: np.ndarray, half_window_s: float) -> np.ndarray:
    """Local linear regression of position on time within +-half_window_s.

    Unlike a fixed-length filter this tolerates missing frames.
    """
    t = np.asarray(t, float)
    xy = np.asarray(xy, float)
    if half_window_s <= 0 or len(t) < 3:
        return xy.copy()
    out = np.empty_like(xy)
    for k, tk in enumerate(t):
        lo = np.searchsorted(t, tk - half_window_s - 1e-9, side="left")
        hi = np.searchsorted(t, tk + half_window_s + 1e-9, side="right")
        dt = t[lo:hi] - tk
        if len(dt) < 3:
            out[k] = xy[k]
            continue
        A = np.column_stack([np.ones_like(dt), dt])
        coef, *_ = np.linalg.lstsq(A, xy[lo:hi], rcond=None)
        out[k] = coef[0]
    return out


def group_tracks(
    tracks: Sequence[WorldTrack],
    window_seconds: float = 10.0,
    stride_seconds: float | None = None,
    params: GroupingParams = GroupingParams(),
    origin: float = 0.0,
    smooth_s: float = 1.0,
) -> list[WindowResult]:
    """Windowed group detection on (optionally smoothed) world trajectories."""
    samples = {}
    for trk in tracks:
        xy = smooth_positions(trk.t, trk.xy, smooth_s)
        samples[trk.track_id] = np.column_stack([trk.t, xy])
    windows = build_windows(samples, window_seconds, stride_seconds, origin)
    return [(win, detect_groups(win, params)) for win in windows]


def partition_records(results: Sequence[WindowResult]) -> list[dict]:
    return [
        {
            "window": win.window_id,
            "start": round(win.start, 6),
            "end": round(win.end, 6),
            "groups": [list(g) for g in part.groups],
            "objective": round(part.objective, 9),
        }
        for win, part in results
    ]


def write_partitions(path: str | Path, results: Sequence[WindowResult], header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [json.dumps(rec) for rec in partition_records(results)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_partitions(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip() and not line.startswith("#")]


def partitions_from_records(records: Sequence[dict], window_seconds: float) -> list[WindowResult]:
    """Rebuild (window, partition) pairs for the monitors from a partition file."""
    out = []
    for rec in records:
        start = float(rec.get("start", rec["window"] * window_seconds))
        end = float(rec.get("end", start + window_seconds))
        win = TrajectoryWindow(int(rec["window"]), start, end, {})
        out.append((win, GroupPartition([tuple(g) for g in rec["groups"]], float(rec.get("objective", 0.0)))))
    return out


def write_pair_features(path: str | Path, results: Sequence[WindowResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "i", "j", "f1", "f2", "f3", "f4", "W_ij"])
        for win, part in results:
            for i, j, f1, f2, f3, f4, wij in part.diagnostics:
                w.writerow([win.window_id, i, j, *(f"{v:.9g}" for v in (f1, f2, f3, f4, wij))])


def mask_observations(tracks: Sequence[WorldTrack], min_px_height: float = 60.0) -> list[MaskObservation]:
    """Head crops for observations whose box bottom moves down-frame."""
    out = []
    for trk in tracks:
        if len(trk) < 2 or trk.bboxes is None:
            continue
        bottoms = trk.bboxes[:, 1] + trk.bboxes[:, 3]
        dy = np.gradient(bottoms, trk.frames.astype(float))
        for frame, box, d in zip(trk.frames, trk.bboxes, dy):
            det = Detection(int(frame), tuple(float(v) for v in box), 1.0, trk.class_label)
            m = mask_crop(trk.track_id, float(d), det, min_px_height)
            if m is not None:
                out.append(m)
    return out


def tracklet_boxes(tracklets: Sequence[Tracklet]) -> dict[int, list[tuple[int, tuple]]]:
    out: dict[int, list] = {}
    for tl in tracklets:
        for det in tl.observations:
            out.setdefault(det.frame_index, []).append((tl.track_id, tuple(det.bbox)))
    return out


# --------------------------------------------------------------------------
# grouping evaluation against planted partitions


def identity_votes(gt: FrameBoxes, pred: FrameBoxes, frames: Sequence[int], iou_min: float = 0.5) -> dict[int, Counter]:
    """gt id -> Counter of matched pred ids over the given frames."""
    votes: dict[int, Counter] = {}
    last: dict[int, int] = {}
    for f in frames:
        fm = match_frame(gt.get(f, []), pred.get(f, []), iou_min, last)
        for g, p, _ in fm.matches:
            votes.setdefault(g, Counter())[p] += 1
            last[g] = p
    return votes


@dataclass
class WindowScore:
    window: int
    start: float
    gt_groups: list[list[int]]
    pred_groups: list[list[int]]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def relabel_partition(universe: Sequence[int], part: GroupPartition, votes: Mapping[int, Counter]) -> list[list[int]]:
    """Express a predicted partition over ground-truth identities.

    Each ground-truth identity takes the group of the predicted track it
    was matched to most often; unmatched identities become singletons.
    """
    label: dict[int, object] = {}
    for g in universe:
        c = votes.get(g)
        if c:
            pid = min(c, key=lambda p: (-c[p], p))
            grp = part.group_of(pid)
            label[g] = ("p", grp if grp is not None else (pid,))
        else:
            label[g] = ("u", g)
    buckets: dict = {}
    for g in universe:
        buckets.setdefault(label[g], []).append(g)
    return sorted((sorted(v) for v in buckets.values()), key=lambda grp: grp[0])


def score_grouping(
    gt_windows: Sequence[dict],
    results: Sequence[WindowResult],
    gt_boxes: FrameBoxes,
    pred_boxes: FrameBoxes,
    clock: FrameClock = FrameClock(),
    iou_min: float = 0.5,
) -> list[WindowScore]:
    """Per-window pairwise scores of predicted groups against planted ones.

    Windows are aligned by start time; predicted track ids are mapped to
    ground-truth identities by majority box matching inside each window.
    """
    by_start = {round(win.start, 6): (win, part) for win, part in results}
    scores = []
    for rec in gt_windows:
        start, end = float(rec["start"]), float(rec["end"])
        universe = sorted(m for g in rec["groups"] for m in g)
        frames = [f for f in sorted(gt_boxes) if start <= clock.time_of(f) <= end]
        votes = identity_votes(gt_boxes, pred_boxes, frames, iou_min)
        hit = by_start.get(round(start, 6))
        part = hit[1] if hit is not None else GroupPartition([])
        pred = relabel_partition(universe, part, votes)
        r = grouping_prf(rec["groups"], pred)
        scores.append(WindowScore(rec["window"], start, rec["groups"], pred, r.precision, r.recall, r.f1))
    return scores
