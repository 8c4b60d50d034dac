"""Social-distance, facility-contact and mask-crop monitors over finished tracks."""
from __future__ import annotations

import csv
import itertools
import json
import math
import subprocess
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import shapely
from scipy.spatial.distance import cdist, directed_hausdorff
from shapely.geometry import Polygon

from .grouping import GroupPartition, TrajectoryWindow
from .model import Detection, WorldTrack

ZONE_KINDS = ("bench", "fence", "trashcan", "steps", "other")
SITTING_KINDS = ("bench", "steps")


# --------------------------------------------------------------------------
# distances


def group_diameter(points) -> float:
    """Largest pairwise ground distance among a group's members."""
    P = np.asarray(points, float).reshape(-1, 2)
    if len(P) < 2:
        return 0.0
    return float(cdist(P, P).max())


def inter_group_distance(group_a, group_b, mode: str = "min_pair") -> float:
    A = np.asarray(group_a, float).reshape(-1, 2)
    B = np.asarray(group_b, float).reshape(-1, 2)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("groups must be non-empty")
    if mode == "min_pair":
        return float(cdist(A, B).min())
    if mode == "hausdorff":
        return float(max(directed_hausdorff(A, B)[0], directed_hausdorff(B, A)[0]))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class DistanceEvent:
    start: float
    end: float
    group_a: tuple[int, ...]
    group_b: tuple[int, ...]
    min_distance_m: float
    threshold_m: float
    kind: str = "inter_group_violation"
    at_time: float = 0.0

    @property
    def duration_s(self) -> float:
        return self.end - self.start


def _sample_table(tracks: Sequence[WorldTrack]):
    """time key -> {track_id: (x, y)} plus the nominal sample interval."""
    table: dict[int, dict[int, np.ndarray]] = defaultdict(dict)
    times: dict[int, float] = {}
    diffs = []
    for trk in tracks:
        keys = np.round(trk.t * 1e6).astype(np.int64)
        for k, t, xy in zip(keys, trk.t, trk.xy):
            table[int(k)][trk.track_id] = xy
            times[int(k)] = float(t)
        if len(trk.t) > 1:
            diffs.append(np.min(np.diff(trk.t)))
    dt = float(min(diffs)) if diffs else 1.0
    return table, times, dt


def _window_lookup(windows: Sequence[tuple[TrajectoryWindow, GroupPartition]]):
    ordered = sorted(windows, key=lambda wp: wp[0].start)

    def find(t: float):
        chosen = None
        for k, (win, part) in enumerate(ordered):
            last = k == len(ordered) - 1
            if win.start <= t and (t < win.end or (last and t <= win.end)):
                chosen = part
        return chosen

    return find


def groups_at(t: float, present: Iterable[int], find) -> dict[int, tuple[int, ...]]:
    part = find(t)
    out = {}
    for tid in present:
        g = part.group_of(tid) if part is not None else None
        out[tid] = g if g is not None else (tid,)
    return out


def _runs(times: Sequence[float], max_gap: float):
    if not times:
        return []
    runs = [[times[0]]]
    for t in times[1:]:
        if t - runs[-1][-1] <= max_gap:
            runs[-1].append(t)
        else:
            runs.append([t])
    return runs


def scan_violations(
    tracks: Sequence[WorldTrack],
    partitions: Sequence[tuple[TrajectoryWindow, GroupPartition]],
    threshold_m: float = 2.0,
    min_duration_s: float = 0.0,
    mode: str = "min_pair",
) -> list[DistanceEvent]:
    """Maximal intervals where two different groups stay closer than the threshold.

    Members of the same group never trigger a violation. A group present at
    time t is its membership in the partition of the window covering t;
    tracks missing from that partition count as singletons.
    """
    if not threshold_m > 0:
        raise ValueError("threshold must be positive")
    table, times, dt = _sample_table(tracks)
    find = _window_lookup(partitions)
    close: dict[tuple, list[tuple[float, float]]] = defaultdict(list)
    for key in sorted(table):
        t = times[key]
        present = table[key]
        membership = groups_at(t, present, find)
        groups: dict[tuple, list[int]] = defaultdict(list)
        for tid in sorted(present):
            groups[membership[tid]].append(tid)
        for ga, gb in itertools.combinations(sorted(groups), 2):
            d = inter_group_distance([present[i] for i in groups[ga]], [present[i] for i in groups[gb]], mode)
            if d < threshold_m:
                close[(ga, gb)].append((t, d))
    events = []
    for (ga, gb), samples in close.items():
        by_time = dict(samples)
        for run in _runs([t for t, _ in samples], 1.5 * dt):
            start, end = run[0], run[-1] + dt
            if end - start < min_duration_s:
                continue
            t_min = min(run, key=lambda t: by_time[t])
            events.append(DistanceEvent(start, end, ga, gb, by_time[t_min], threshold_m, at_time=t_min))
    events.sort(key=lambda e: (e.start, e.group_a, e.group_b))
    return events


def group_diameter_series(
    tracks: Sequence[WorldTrack], partitions: Sequence[tuple[TrajectoryWindow, GroupPartition]]
) -> list[tuple[float, tuple[int, ...], float]]:
    """(time, group, diameter) for every multi-member group present at each sample time."""
    table, times, _ = _sample_table(tracks)
    find = _window_lookup(partitions)
    out = []
    for key in sorted(table):
        t = times[key]
        present = table[key]
        membership = groups_at(t, present, find)
        seen = set()
        for tid in sorted(present):
            g = membership[tid]
            if len(g) < 2 or g in seen:
                continue
            seen.add(g)
            pts = [present[m] for m in g if m in present]
            if len(pts) >= 2:
                out.append((t, g, group_diameter(pts)))
    return out


# --------------------------------------------------------------------------
# facility contact


@dataclass(frozen=True)
class FacilityZone:
    zone_id: str
    kind: str
    polygon: tuple[tuple[float, float], ...]
    buffer_m: float = 0.4
    min_dwell_s: float = 5.0
    image_polygon: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.kind not in ZONE_KINDS:
            raise ValueError(f"zone kind must be one of {ZONE_KINDS}")
        if len(self.polygon) < 3:
            raise ValueError("zone polygon needs at least 3 vertices")
        if not Polygon(self.polygon).is_simple:
            raise ValueError(f"zone {self.zone_id} polygon is self-intersecting")
        if self.buffer_m < 0 or self.min_dwell_s < 0:
            raise ValueError("buffer_m and min_dwell_s must be nonnegative")

    @property
    def region(self):
        return Polygon(self.polygon).buffer(self.buffer_m)


def load_zones(path: str | Path) -> list[FacilityZone]:
    out = []
    for rec in json.loads(Path(path).read_text()):
        out.append(
            FacilityZone(
                zone_id=str(rec["zone_id"]),
                kind=rec["kind"],
                polygon=tuple((float(x), float(y)) for x, y in rec["polygon"]),
                buffer_m=float(rec.get("buffer_m", 0.4)),
                min_dwell_s=float(rec.get("min_dwell_s", 5.0)),
                image_polygon=tuple((float(u), float(v)) for u, v in rec["image_polygon"])
                if rec.get("image_polygon")
                else None,
            )
        )
    return out


@dataclass(frozen=True)
class ContactEvent:
    track_id: int
    zone_id: str
    zone_kind: str
    enter_time: float
    exit_time: float
    in_buffer: bool = True
    aspect_ratio_sit: bool = False
    segment_overlap: bool = False

    @property
    def dwell_s(self) -> float:
        return self.exit_time - self.enter_time

    @property
    def sitting(self) -> bool:
        return self.aspect_ratio_sit or self.segment_overlap


def detect_contacts(
    tracks: Sequence[WorldTrack],
    zones: Sequence[FacilityZone],
    aspect_ratio_max_sit: float = 1.8,
    contours: Mapping[int, Sequence] | None = None,
) -> list[ContactEvent]:
    """Dwell events of track ground points inside buffered facility polygons.

    ``contours`` optionally maps track id to per-sample pixel contours; a
    contour overlapping the zone's ``image_polygon`` sets ``segment_overlap``.
    """
    events = []
    for zone in zones:
        region = zone.region
        img_poly = Polygon(zone.image_polygon) if zone.image_polygon else None
        for trk in tracks:
            if len(trk) == 0:
                continue
            inside = shapely.contains_xy(region, trk.xy[:, 0], trk.xy[:, 1])
            dt = float(np.min(np.diff(trk.t))) if len(trk) > 1 else 1.0
            idx = np.flatnonzero(inside)
            if len(idx) == 0:
                continue
            # split on sample gaps or on leaving the region
            runs = [[idx[0]]]
            for k in idx[1:]:
                if k == runs[-1][-1] + 1 and trk.t[k] - trk.t[runs[-1][-1]] <= 1.5 * dt:
                    runs[-1].append(k)
                else:
                    runs.append([k])
            for run in runs:
                enter, leave = float(trk.t[run[0]]), float(trk.t[run[-1]])
                if leave - enter < zone.min_dwell_s:
                    continue
                sit = False
                if zone.kind in SITTING_KINDS and trk.bboxes is not None:
                    boxes = trk.bboxes[run]
                    ratio = boxes[:, 3] / boxes[:, 2]
                    sit = bool(np.any(ratio < aspect_ratio_max_sit))
                overlap = False
                if img_poly is not None and contours and trk.track_id in contours:
                    cs = contours[trk.track_id]
                    overlap = any(c is not None and len(c) >= 3 and Polygon(c).intersects(img_poly) for c in (cs[k] for k in run))
                events.append(ContactEvent(trk.track_id, zone.zone_id, zone.kind, enter, leave, True, sit, overlap))
    events.sort(key=lambda e: (e.enter_time, e.track_id, e.zone_id))
    return events


# --------------------------------------------------------------------------
# mask crops


@dataclass(frozen=True)
class MaskObservation:
    track_id: int
    frame_index: int
    crop_rect: tuple[float, float, float, int]
    heading_toward_camera: bool
    label: str = "unknown"


def mask_crop(track_id: int, dy_c: float, det: Detection, min_px_height: float = 60.0) -> Optional[MaskObservation]:
    """Head crop (top sixth of the box) for tracks approaching the camera.

    Returns None when the track moves up-frame or the box is too small.
    """
    l, t, w, h = det.bbox
    if not (dy_c > 0 and h >= min_px_height):
        return None
    return MaskObservation(track_id, det.frame_index, (l, t, w, math.ceil(h / 6)), True)


class MaskClassifierProcess:
    """Line protocol to an external classifier process.

    Requests are ``frame,track,left,top,width,height``; the process answers
    each with ``track,frame,label`` where label is mask, no_mask or unknown.
    """

    def __init__(self, command: Sequence[str]):
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def classify(self, obs: MaskObservation) -> MaskObservation:
        l, t, w, h = obs.crop_rect
        self.proc.stdin.write(f"{obs.frame_index},{obs.track_id},{l:g},{t:g},{w:g},{h:g}\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline().strip()
        try:
            tid, frame, label = reply.split(",")
            if int(tid) != obs.track_id or int(frame) != obs.frame_index:
                raise ValueError("reply does not match request")
        except ValueError:
            label = "unknown"
        if label not in ("mask", "no_mask", "unknown"):
            label = "unknown"
        return MaskObservation(obs.track_id, obs.frame_index, obs.crop_rect, obs.heading_toward_camera, label)

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --------------------------------------------------------------------------
# aggregation


def bucket_of(base: datetime, seconds: float, bucket: str) -> str:
    ts = base + timedelta(seconds=seconds)
    if bucket == "hour":
        return ts.replace(minute=0, second=0, microsecond=0).isoformat()
    if bucket == "day":
        return ts.date().isoformat()
    raise ValueError(f"unknown bucket {bucket!r}")


@dataclass
class BucketStats:
    tracks_by_class: dict = field(default_factory=lambda: defaultdict(set))
    contacts_by_kind: dict = field(default_factory=lambda: defaultdict(int))
    mask: int = 0
    no_mask: int = 0
    unknown: int = 0

    @property
    def mask_rate(self) -> Optional[float]:
        labelled = self.mask + self.no_mask
        return self.mask / labelled if labelled else None


def aggregate_daily(
    events: Iterable[ContactEvent],
    observations: Iterable[MaskObservation],
    tracks: Iterable[WorldTrack] = (),
    bucket: str = "day",
    base_time: datetime = datetime(2020, 6, 1),
    fps: float = 7.0,
) -> dict[str, BucketStats]:
    """Per-bucket unique tracks per class, contacts per zone kind and mask rate."""
    stats: dict[str, BucketStats] = defaultdict(BucketStats)
    for trk in tracks:
        for b in {bucket_of(base_time, float(t), bucket) for t in trk.t}:
            stats[b].tracks_by_class[trk.class_label.value].add(trk.track_id)
    for ev in events:
        stats[bucket_of(base_time, ev.enter_time, bucket)].contacts_by_kind[ev.zone_kind] += 1
    for obs in observations:
        s = stats[bucket_of(base_time, (obs.frame_index - 1) / fps, bucket)]
        if obs.label == "mask":
            s.mask += 1
        elif obs.label == "no_mask":
            s.no_mask += 1
        else:
            s.unknown += 1
    return dict(sorted(stats.items()))


def report_rows(stats: Mapping[str, BucketStats]) -> list[dict]:
    """Tidy rows (bucket, series, key, value) for plotting tools."""
    rows = []
    for b, s in stats.items():
        for cls, ids in sorted(s.tracks_by_class.items()):
            rows.append({"bucket": b, "series": "unique_tracks", "key": cls, "value": len(ids)})
        for kind, n in sorted(s.contacts_by_kind.items()):
            rows.append({"bucket": b, "series": "contacts", "key": kind, "value": n})
        rows.append({"bucket": b, "series": "mask", "key": "mask", "value": s.mask})
        rows.append({"bucket": b, "series": "mask", "key": "no_mask", "value": s.no_mask})
        rows.append({"bucket": b, "series": "mask", "key": "unknown", "value": s.unknown})
        rate = s.mask_rate
        rows.append({"bucket": b, "series": "mask", "key": "rate", "value": "" if rate is None else f"{rate:.6f}"})
    return rows


def _iso(base: datetime, seconds: float) -> str:
    return (base + timedelta(seconds=seconds)).isoformat(timespec="milliseconds")


def write_distance_events(path, events: Sequence[DistanceEvent], base_time: datetime) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "duration_s", "group_a", "group_b", "min_distance_m", "threshold_m", "kind", "closest_at"])
        for e in events:
            w.writerow([
                _iso(base_time, e.start), _iso(base_time, e.end), f"{e.duration_s:.3f}",
                " ".join(map(str, e.group_a)), " ".join(map(str, e.group_b)),
                f"{e.min_distance_m:.3f}", f"{e.threshold_m:.3f}", e.kind, _iso(base_time, e.at_time),
            ])


def write_contact_events(path, events: Sequence[ContactEvent], base_time: datetime) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "zone_id", "zone_kind", "enter", "exit", "dwell_s", "in_buffer", "aspect_ratio_sit", "segment_overlap"])
        for e in events:
            w.writerow([
                e.track_id, e.zone_id, e.zone_kind, _iso(base_time, e.enter_time), _iso(base_time, e.exit_time),
                f"{e.dwell_s:.3f}", int(e.in_buffer), int(e.aspect_ratio_sit), int(e.segment_overlap),
            ])


def write_report_rows(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["bucket", "series", "key", "value"])
        w.writeheader()
        w.writerows(rows)
