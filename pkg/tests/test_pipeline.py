from collections import Counter

import numpy as np
import pytest

from possense.grouping import GroupPartition, TrajectoryWindow
from possense.model import ClassLabel, FrameClock, WorldTrack
from possense.pipeline import (
    group_tracks,
    mask_observations,
    partitions_from_records,
    read_partitions,
    relabel_partition,
    score_grouping,
    smooth_positions,
    track_detections,
    tracklet_boxes,
    tracklets_to_world,
    write_partitions,
)
from possense.synth import crossing_scenario, generate


def test_smoothing_keeps_straight_lines():
    t = np.delete(np.arange(50) / 7, [10, 11, 30])  # tolerates gaps
    xy = np.column_stack([2 * t + 1, -0.5 * t])
    np.testing.assert_allclose(smooth_positions(t, xy, 1.0), xy, atol=1e-9)


def test_smoothing_reduces_noise():
    r = np.random.default_rng(0)
    t = np.arange(140) / 7
    truth = np.column_stack([1.2 * t, np.zeros_like(t)])
    noisy = truth + r.normal(0, 0.3, truth.shape)
    err_raw = np.std(noisy - truth)
    err_smooth = np.std(smooth_positions(t, noisy, 1.0) - truth)
    assert err_smooth < 0.5 * err_raw


def test_smoothing_short_or_disabled_is_identity():
    t, xy = np.array([0.0, 1.0]), np.array([[0.0, 0.0], [5.0, 1.0]])
    np.testing.assert_array_equal(smooth_positions(t, xy, 1.0), xy)
    t3 = np.arange(3.0)
    np.testing.assert_array_equal(smooth_positions(t3, np.eye(3)[:, :2], 0.0), np.eye(3)[:, :2])


def test_crossing_tracks_map_back_to_truth():
    sc = crossing_scenario()
    res = generate(sc)
    frames = {}
    for d in res.detections:
        frames.setdefault(d.frame_index, []).append(d)
    tracklets = track_detections(frames)
    world = tracklets_to_world(tracklets, sc.camera)
    assert len(world) == 2
    truth = {aid: {int(r[0]): r[2:4] for r in rows} for aid, rows in res.world.items()}
    for trk in world:
        # each track follows exactly one agent
        errs = {aid: max(np.hypot(*(xy - tr[f])) for f, xy in zip(trk.frames, trk.xy)) for aid, tr in truth.items()}
        assert min(errs.values()) < 1e-6


def test_partition_file_round_trip(tmp_path):
    win = TrajectoryWindow(0, 0.0, 10.0, {})
    results = [(win, GroupPartition([(1, 2), (3,)], 1.5))]
    p = tmp_path / "partitions.jsonl"
    write_partitions(p, results, header="test")
    ((w, part),) = partitions_from_records(read_partitions(p), 10.0)
    assert part.groups == [(1, 2), (3,)] and w.end == 10.0 and part.objective == 1.5


def test_relabel_by_majority():
    votes = {1: Counter({10: 5, 11: 1}), 2: Counter({12: 4}), 3: Counter()}
    part = GroupPartition([(10, 12), (11,)])
    assert relabel_partition([1, 2, 3], part, votes) == [[1, 2], [3]]


def test_score_grouping_maps_ids():
    box = lambda x: (x, 100.0, 20.0, 60.0)
    gt = {f: [(1, box(0.0)), (2, box(30.0)), (3, box(300.0))] for f in range(1, 15)}
    pred = {f: [(7, box(0.0)), (8, box(30.0)), (9, box(300.0))] for f in range(1, 15)}
    gt_windows = [{"window": 0, "start": 0.0, "end": 10.0, "groups": [[1, 2], [3]]}]
    results = [(TrajectoryWindow(0, 0.0, 10.0, {}), GroupPartition([(7, 8), (9,)]))]
    (score,) = score_grouping(gt_windows, results, gt, pred, FrameClock(7.0))
    assert score.pred_groups == [[1, 2], [3]] and score.f1 == 1.0


def test_group_tracks_on_side_by_side_walkers():
    t = np.arange(140) / 7
    frames = np.arange(140) + 1
    base = np.column_stack([np.zeros_like(t), 10 + 1.2 * t])
    mk = lambda tid, off: WorldTrack(tid, frames, t, base + off, None, ClassLabel.PEDESTRIAN)
    results = group_tracks([mk(1, [0, 0]), mk(2, [0.8, 0]), mk(3, [12.0, 0])], 10.0)
    assert [part.groups for _, part in results] == [[(1, 2), (3,)]] * 2


@pytest.mark.parametrize("direction, expected", [(1.0, 5), (-1.0, 0)])
def test_mask_observations_follow_heading(direction, expected):
    frames = np.arange(1, 6)
    boxes = np.array([[100.0, 100.0 + direction * 3 * k, 40.0, 120.0] for k in range(5)])
    trk = WorldTrack(1, frames, (frames - 1) / 7, np.zeros((5, 2)), boxes, ClassLabel.PEDESTRIAN)
    assert len(mask_observations([trk])) == expected


def test_tracklet_boxes_by_frame():
    res = generate(crossing_scenario(duration_s=2.0))
    frames = {}
    for d in res.detections:
        frames.setdefault(d.frame_index, []).append(d)
    boxes = tracklet_boxes(track_detections(frames))
    assert sorted(boxes) == sorted(frames)
