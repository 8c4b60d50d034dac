"""Tracking-by-detection with a matching cascade and IoU fallback."""
from __future__ import annotations

import enum
import itertools
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from ..model import ClassLabel, Detection, FrameClock, class_is_person, format_mot_line
from .assignment import (
    CHI2INV95,
    INFTY_COST,
    MissingAppearance,
    appearance_distance,
    combined_cost,
    hungarian_assign,
    iou_matrix,
)
from .kalman import KalmanModel, KalmanNumericalError, mahalanobis_sq


class TrackingError(RuntimeError):
    pass


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass(frozen=True)
class TrackState:
    x_c: float
    y_c: float
    a: float
    h: float
    dx_c: float
    dy_c: float
    da: float
    dh: float

    @classmethod
    def from_vector(cls, v) -> "TrackState":
        return cls(*(float(x) for x in v))

    def bbox(self) -> tuple[float, float, float, float]:
        w = self.a * self.h
        return (self.x_c - w / 2.0, self.y_c - self.h / 2.0, w, self.h)


@dataclass
class Track:
    track_id: int
    mean: np.ndarray
    covariance: np.ndarray
    gallery: deque = field(default_factory=lambda: deque(maxlen=100))
    status: TrackStatus = TrackStatus.TENTATIVE
    age: int = 1
    hits: int = 1
    time_since_update: int = 0
    observations: list[Detection] = field(default_factory=list)

    @property
    def state(self) -> TrackState:
        return TrackState.from_vector(self.mean)

    @property
    def is_confirmed(self) -> bool:
        return self.status is TrackStatus.CONFIRMED

    @property
    def is_deleted(self) -> bool:
        return self.status is TrackStatus.DELETED

    @property
    def class_label(self) -> ClassLabel:
        if not self.observations:
            return ClassLabel.PEOPLE_OTHER
        return Counter(d.class_label for d in self.observations).most_common(1)[0][0]

    def snapshot(self) -> "Track":
        return Track(
            self.track_id,
            self.mean.copy(),
            self.covariance.copy(),
            deque(self.gallery, maxlen=self.gallery.maxlen),
            self.status,
            self.age,
            self.hits,
            self.time_since_update,
            list(self.observations),
        )


def kalman_predict(track: Track, clock: FrameClock, model: KalmanModel | None = None) -> Track:
    """Advance ``track`` in place by ``clock.n_skip`` frames and return it."""
    if track.is_deleted:
        raise TrackingError(f"track {track.track_id} is deleted")
    model = model or KalmanModel()
    track.mean, track.covariance = model.predict(track.mean, track.covariance, clock.n_skip)
    track.age += 1
    track.time_since_update += 1
    return track


def kalman_update(track: Track, det: Detection, model: KalmanModel | None = None) -> Track:
    model = model or KalmanModel()
    track.mean, track.covariance = model.update(track.mean, track.covariance, det.to_xyah())
    track.hits += 1
    track.time_since_update = 0
    return track


def motion_distance(track: Track, det: Detection, model: KalmanModel | None = None) -> float:
    model = model or KalmanModel()
    y, S = model.project(track.mean, track.covariance)
    return mahalanobis_sq(det.to_xyah() - y, S)


@dataclass(frozen=True)
class TrackerConfig:
    n_init: int = 3
    max_age: int = 30
    gallery_size: int = 100
    chi2_gate: float = CHI2INV95[4]
    app_gate: float = 0.2
    lambda_mix: float = 0.0
    iou_min: float = 0.3
    min_confidence: float = 0.0


@dataclass(frozen=True)
class Tracklet:
    """Finished (or current) trajectory of one track id."""

    track_id: int
    observations: tuple[Detection, ...]
    class_label: ClassLabel = ClassLabel.PEDESTRIAN

    def __len__(self):
        return len(self.observations)

    @property
    def frames(self) -> list[int]:
        return [d.frame_index for d in self.observations]


class Tracker:
    """Single-stream multi-object tracker.

    Output is offline-friendly: once a track is confirmed its tentative
    observations are kept, so ``tracklets()`` covers every matched frame of
    every track that was ever confirmed.
    """

    def __init__(
        self,
        config: TrackerConfig | None = None,
        clock: FrameClock | None = None,
        model: KalmanModel | None = None,
    ):
        self.config = config or TrackerConfig()
        self.clock = clock or FrameClock()
        self.model = model or KalmanModel()
        self.tracks: list[Track] = []
        self._finished: list[Track] = []
        self._ids = itertools.count(1)
        self.last_frame = 0

    # -- cost matrices ---------------------------------------------------
    def _gated_cost(self, tracks: Sequence[Track], dets: Sequence[Detection]) -> np.ndarray:
        cfg = self.config
        cost = np.full((len(tracks), len(dets)), INFTY_COST)
        if not tracks or not dets:
            return cost
        Z = np.array([d.to_xyah() for d in dets])
        for r, trk in enumerate(tracks):
            y, S = self.model.project(trk.mean, trk.covariance)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError as exc:
                raise KalmanNumericalError(f"track {trk.track_id}: singular projected covariance") from exc
            z = scipy.linalg.solve_triangular(L, (Z - y).T, lower=True, check_finite=False)
            d_mot = np.sum(z * z, axis=0)
            for c, det in enumerate(dets):
                try:
                    d_app = appearance_distance(trk.gallery, det.appearance)
                except MissingAppearance:
                    d_app = None
                cost[r, c] = combined_cost(
                    float(d_mot[c]), d_app, cfg.lambda_mix, cfg.chi2_gate, cfg.app_gate
                ).d_comb
        return cost

    def _matching_cascade(self, track_idx: list[int], det_idx: list[int], dets):
        matches: list[tuple[int, int]] = []
        remaining = list(det_idx)
        for level in range(self.config.max_age + 1):
            if not remaining:
                break
            level_tracks = [i for i in track_idx if self.tracks[i].time_since_update == level + 1]
            if not level_tracks:
                continue
            cost = self._gated_cost([self.tracks[i] for i in level_tracks], [dets[j] for j in remaining])
            res = hungarian_assign(cost)
            matched_cols = set()
            for r, c in res.matches:
                matches.append((level_tracks[r], remaining[c]))
                matched_cols.add(c)
            remaining = [j for k, j in enumerate(remaining) if k not in matched_cols]
        matched_tracks = {i for i, _ in matches}
        return matches, [i for i in track_idx if i not in matched_tracks], remaining

    def _iou_matching(self, track_idx: list[int], det_idx: list[int], dets):
        if not track_idx or not det_idx:
            return [], track_idx, det_idx
        boxes_t = [self.tracks[i].state.bbox() for i in track_idx]
        boxes_d = [dets[j].bbox for j in det_idx]
        ious = iou_matrix(boxes_t, boxes_d)
        cost = np.where(ious >= self.config.iou_min, 1.0 - ious, INFTY_COST)
        res = hungarian_assign(cost)
        matches = [(track_idx[r], det_idx[c]) for r, c in res.matches]
        return (
            matches,
            [track_idx[r] for r in res.unmatched_rows],
            [det_idx[c] for c in res.unmatched_cols],
        )

    # -- lifecycle -------------------------------------------------------
    def _initiate(self, det: Detection) -> None:
        mean, cov = self.model.initiate(det.to_xyah())
        trk = Track(next(self._ids), mean, cov, deque(maxlen=self.config.gallery_size))
        if det.appearance is not None:
            trk.gallery.append(det.appearance)
        trk.observations.append(det)
        if self.config.n_init <= 1:
            trk.status = TrackStatus.CONFIRMED
        self.tracks.append(trk)

    def _mark_missed(self, trk: Track) -> None:
        if trk.status is TrackStatus.TENTATIVE:
            trk.status = TrackStatus.DELETED
        elif trk.time_since_update > self.config.max_age:
            trk.status = TrackStatus.DELETED

    def step(self, frame_index: int, detections: Iterable[Detection]) -> list[Track]:
        """Process one frame; returns snapshots of confirmed tracks updated on it."""
        if frame_index <= self.last_frame:
            raise TrackingError(f"frame index regression: {frame_index} after {self.last_frame}")
        dets = [
            d for d in detections
            if class_is_person(d.class_label) and d.confidence >= self.config.min_confidence
        ]
        for d in dets:
            if d.frame_index != frame_index:
                raise TrackingError(f"detection for frame {d.frame_index} passed to frame {frame_index}")
        # frames missing from the stream count as skipped predictions
        steps = 1 if self.last_frame == 0 else max(1, round((frame_index - self.last_frame) / self.clock.n_skip))
        self.last_frame = frame_index

        for trk in self.tracks:
            trk.mean, trk.covariance = self.model.predict(trk.mean, trk.covariance, self.clock.n_skip * steps)
            trk.age += 1
            trk.time_since_update += 1

        confirmed = [i for i, t in enumerate(self.tracks) if t.is_confirmed]
        unconfirmed = [i for i, t in enumerate(self.tracks) if not t.is_confirmed]
        matches_a, unmatched_a, unmatched_dets = self._matching_cascade(
            confirmed, list(range(len(dets))), dets
        )
        iou_candidates = unconfirmed + [i for i in unmatched_a if self.tracks[i].time_since_update == 1]
        unmatched_a = [i for i in unmatched_a if self.tracks[i].time_since_update != 1]
        matches_b, unmatched_b, unmatched_dets = self._iou_matching(iou_candidates, unmatched_dets, dets)

        for ti, dj in matches_a + matches_b:
            trk, det = self.tracks[ti], dets[dj]
            kalman_update(trk, det, self.model)
            if det.appearance is not None:
                trk.gallery.append(det.appearance)
            trk.observations.append(det)
            if trk.status is TrackStatus.TENTATIVE and trk.hits >= self.config.n_init:
                trk.status = TrackStatus.CONFIRMED
        for ti in unmatched_a + unmatched_b:
            self._mark_missed(self.tracks[ti])
        for dj in sorted(unmatched_dets):
            self._initiate(dets[dj])

        alive = []
        for trk in self.tracks:
            if trk.is_deleted:
                self._finished.append(trk)
            else:
                alive.append(trk)
        self.tracks = alive
        return [t.snapshot() for t in self.tracks if t.is_confirmed and t.time_since_update == 0]

    def run(self, frames: dict[int, list[Detection]] | Iterable[tuple[int, list[Detection]]]):
        """Feed every n_skip-th frame from the first to the last one present."""
        frames = dict(frames)
        if not frames:
            return self
        first, last = min(frames), max(frames)
        for frame_index in range(first, last + 1, self.clock.n_skip):
            self.step(frame_index, frames.get(frame_index, []))
        return self

    def tracklets(self) -> list[Tracklet]:
        """Tracklets of every track that reached confirmation, by id."""
        out = []
        for trk in sorted(self._finished + self.tracks, key=lambda t: t.track_id):
            if trk.hits < self.config.n_init:
                continue
            out.append(Tracklet(trk.track_id, tuple(trk.observations), trk.class_label))
        return out


def filter_short_tracklets(tracklets: Sequence[Tracklet], min_len: int = 4) -> list[Tracklet]:
    """Drop tracklets observed on fewer than ``min_len`` frames."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    return [t for t in tracklets if len(t) >= min_len]


def mot_result_lines(tracklets: Sequence[Tracklet]) -> list[str]:
    rows = []
    for trk in tracklets:
        for det in trk.observations:
            rows.append((det.frame_index, trk.track_id, det.bbox, det.confidence))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [format_mot_line(f, i, b, c) for f, i, b, c in rows]


def write_mot_results(path: str | Path, tracklets: Sequence[Tracklet]) -> None:
    Path(path).write_text("".join(line + "\n" for line in mot_result_lines(tracklets)))
