import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from possense.evaluation import (
    MetricUndefined,
    evaluate_mot,
    grouping_prf,
    grouping_prf_pooled,
    id_switches,
    match_frame,
    mota,
    motp,
    read_mot_file,
    track_coverage,
    write_group_report,
    write_mot_report,
)
from possense.tracking.assignment import iou


def boxes(*rects):
    return [(k + 1, r) for k, r in enumerate(rects)]


def test_identical_boxes_all_match():
    g = boxes((0, 0, 10, 10), (50, 50, 10, 10))
    fm = match_frame(g, g)
    assert len(fm.matches) == 2 and fm.fn == [] and fm.fp == []


def test_disjoint_sets():
    fm = match_frame(boxes((0, 0, 10, 10)), boxes((100, 100, 10, 10)))
    assert fm.matches == [] and fm.fn == [1] and fm.fp == [1]


def brute_force_best(gt, pred, iou_min=0.5):
    """Largest match count, then largest IoU sum, over every assignment."""
    best = (0, 0.0)
    for perm in itertools.permutations(range(len(pred)), len(gt)):
        vals = [iou(gt[r][1], pred[c][1]) for r, c in enumerate(perm)]
        ok = [v for v in vals if v >= iou_min]
        best = max(best, (len(ok), sum(ok)))
    return best


def test_ambiguous_three_by_three_matches_brute_force():
    gt = boxes((0, 0, 10, 10), (6, 0, 10, 10), (40, 0, 10, 10))
    pred = boxes((3, 0, 10, 10), (8, 0, 10, 10), (41, 0, 10, 10))
    fm = match_frame(gt, pred)
    n, total = brute_force_best(gt, pred)
    assert len(fm.matches) == n
    assert sum(v for *_, v in fm.matches) == pytest.approx(total)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_matching_is_optimal_property(seed):
    r = np.random.default_rng(seed)
    gt = [(k, tuple(r.uniform(0, 30, 2)) + (10.0, 10.0)) for k in range(3)]
    pred = [(k, tuple(r.uniform(0, 30, 2)) + (10.0, 10.0)) for k in range(3)]
    fm = match_frame(gt, pred)
    n, total = brute_force_best(gt, pred)
    assert len(fm.matches) == n
    assert sum(v for *_, v in fm.matches) == pytest.approx(total)


@pytest.mark.parametrize(
    "fn, fp, ids, gt, expected",
    [(0, 0, 0, 100, 1.0), (10, 5, 1, 100, 0.84), (100, 0, 0, 100, 0.0)],
)
def test_mota_values(fn, fp, ids, gt, expected):
    assert mota(fn, fp, ids, gt) == pytest.approx(expected)


def test_mota_undefined_without_gt():
    with pytest.raises(MetricUndefined):
        mota(0, 0, 0, 0)


@pytest.mark.parametrize("ious, expected", [([1.0, 1.0], 1.0), ([0.5, 1.0], 0.75), ([0.5], 0.5)])
def test_motp_values(ious, expected):
    assert motp(ious) == expected


def test_motp_undefined_without_matches():
    with pytest.raises(MetricUndefined):
        motp([])


def test_coverage_classes():
    assert track_coverage({1: 10}, {1: 10}) == (1, 0, 0)
    assert track_coverage({1: 10}, {1: 5}) == (0, 1, 0)


def test_coverage_fixture_of_fifty_three():
    counts = {k: 100 for k in range(53)}
    matched = {k: 90 if k < 34 else 50 if k < 48 else 10 for k in range(53)}
    mt, pt, ml = track_coverage(counts, matched)
    assert (mt, pt, ml) == (34, 14, 5) and mt + pt + ml == 53


def test_id_switch_counting():
    assert id_switches([[(1, 7)], [(1, 7)], [(1, 7)]]) == 0
    assert id_switches([[(1, 7)], [(1, 8)]]) == 1


def test_self_evaluation_is_perfect():
    gt = {f: [(1, (10.0 + f, 20.0, 30.0, 60.0)), (2, (200.0, 20.0 + f, 30.5, 61.25))] for f in range(1, 40)}
    rep = evaluate_mot(gt, gt)
    assert (rep.MOTA, rep.MOTP, rep.IDs, rep.MT) == (1.0, 1.0, 0, 2)


def test_relabel_counts_one_switch():
    gt = {f: [(1, (10.0, 20.0, 30.0, 60.0))] for f in range(1, 11)}
    pred = {f: [(1 if f <= 5 else 2, (10.0, 20.0, 30.0, 60.0))] for f in range(1, 11)}
    rep = evaluate_mot(gt, pred)
    assert rep.IDs == 1 and rep.MOTA == pytest.approx(0.9)


def test_report_files(tmp_path):
    gt = {1: [(1, (0.0, 0.0, 10.0, 10.0))]}
    rep = evaluate_mot(gt, gt)
    write_mot_report(rep, tmp_path / "r.csv", tmp_path / "r.txt")
    assert "100.0%" in (tmp_path / "r.txt").read_text()
    assert (tmp_path / "r.csv").read_text().startswith("MOTA,MOTP")


def test_read_mot_file(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("1,3,10,20,30,40,1,-1,-1,-1\n2,3,11,20,30,40,1,-1,-1,-1\n")
    assert read_mot_file(p) == {1: [(3, (10.0, 20.0, 30.0, 40.0))], 2: [(3, (11.0, 20.0, 30.0, 40.0))]}


# ---------------------------------------------------------------- grouping


def test_identical_partitions():
    r = grouping_prf([(1, 2), (3, 4, 5)], [(1, 2), (3, 4, 5)])
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_predicted_singletons():
    r = grouping_prf([(1, 2, 3)], [(1,), (2,), (3,)])
    assert r.precision is None and r.recall == 0.0 and r.f1 is None


def test_partial_recall():
    r = grouping_prf([(1, 2, 3)], [(1, 2), (3,)])
    assert r.precision == 1.0
    assert r.recall == pytest.approx(1 / 3)
    assert r.f1 == pytest.approx(0.5)


def test_universe_mismatch():
    with pytest.raises(ValueError):
        grouping_prf([(1, 2)], [(1,), (3,)])


def test_pooled_scores():
    r = grouping_prf_pooled([([(1, 2)], [(1, 2)]), ([(1, 2, 3)], [(1,), (2,), (3,)])], window_size_s=10.0)
    assert r.true_pairs == 1 and r.gt_pairs == 4 and r.pred_pairs == 1
    assert r.recall == 0.25 and r.window_size_s == 10.0


def test_group_report_blank_for_undefined(tmp_path):
    p = tmp_path / "g.csv"
    write_group_report(grouping_prf([(1, 2)], [(1,), (2,)]), p)
    assert p.read_text().splitlines()[1].startswith(",0.000000")
