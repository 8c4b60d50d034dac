import json

import numpy as np
import pytest

from possense.model import (
    APPEARANCE_DIM,
    ClassLabel,
    Detection,
    DetectionFormatError,
    FrameClock,
    WorldTrack,
    class_is_person,
    parse_detection_file,
    read_world_tracks,
    write_appearance_sidecar,
    write_detection_file,
    write_world_tracks,
)


def test_mot_line_maps_fields(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("1,-1,100,200,50,100,0.9,-1,-1,-1\n")
    out = parse_detection_file(p)
    assert len(out.detections) == 1
    d = out.detections[0]
    assert d.frame_index == 1
    assert d.bbox == (100.0, 200.0, 50.0, 100.0)
    assert d.confidence == pytest.approx(0.9)
    assert out.issues == []


def test_empty_file_gives_no_frames(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("")
    out = parse_detection_file(p)
    assert out.detections == [] and out.frames == {}


def test_truncated_sidecar_vector_is_rejected(tmp_path):
    det = tmp_path / "det.txt"
    det.write_text("1,-1,100,200,50,100,0.9,-1,-1,-1\n")
    side = tmp_path / "app.bin"
    np.ones(APPEARANCE_DIM - 1, dtype="<f4").tofile(side)
    with pytest.raises(DetectionFormatError, match="appearance length mismatch"):
        parse_detection_file(det, sidecar=side)


def test_sidecar_vectors_are_normalized(tmp_path):
    det = tmp_path / "det.txt"
    det.write_text("1,-1,100,200,50,100,0.9,-1,-1,-1\n2,-1,10,20,5,10,0.8,-1,-1,-1\n")
    side = tmp_path / "app.bin"
    write_appearance_sidecar(side, [np.full(APPEARANCE_DIM, 3.0), np.arange(APPEARANCE_DIM, dtype=float) + 1])
    out = parse_detection_file(det, sidecar=side)
    for d in out.detections:
        assert np.linalg.norm(d.appearance) == pytest.approx(1.0, abs=1e-6)


def test_malformed_lines_are_reported_with_line_numbers(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("1,-1,100,200,50,100,0.9,-1,-1,-1\n1,-1,abc\n2,-1,1,1,-5,3,0.5,-1,-1,-1\n")
    out = parse_detection_file(p)
    assert len(out.detections) == 1
    assert any(":2" in i or "line 2" in i for i in out.issues)
    assert any(":3" in i or "line 3" in i for i in out.issues)


def test_frame_regression_is_an_error(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("2,-1,100,200,50,100,0.9,-1,-1,-1\n1,-1,100,200,50,100,0.9,-1,-1,-1\n")
    with pytest.raises(DetectionFormatError):
        parse_detection_file(p)


def test_jsonl_carries_class_and_contour(tmp_path):
    p = tmp_path / "det.jsonl"
    rec = {"frame": 3, "bbox": [10, 20, 30, 60], "confidence": 0.7, "class": "sitter", "contour": [[10, 20], [40, 80], [12, 80]]}
    p.write_text(json.dumps(rec) + "\n")
    d = parse_detection_file(p).detections[0]
    assert d.class_label is ClassLabel.SITTER
    assert d.contour is not None and len(d.contour) == 3


def test_unknown_class_maps_to_people_other():
    assert ClassLabel.parse("dog-walker") is ClassLabel.PEOPLE_OTHER


@pytest.mark.parametrize(
    "label, expected",
    [("pedestrian", True), ("non_person", False), ("sitter", True), ("cyclist", True)],
)
def test_class_is_person(label, expected):
    assert class_is_person(label) is expected


def test_detection_round_trip_mot(tmp_path):
    dets = [Detection(1, (1.5, 2.0, 3.0, 4.25), 0.5), Detection(2, (10.0, 20.0, 30.0, 40.0), 1.0)]
    p = tmp_path / "out.txt"
    write_detection_file(p, dets)
    back = parse_detection_file(p).detections
    assert [d.bbox for d in back] == [d.bbox for d in dets]


def test_detection_rejects_bad_box():
    with pytest.raises(ValueError):
        Detection(1, (0, 0, 0, 10))
    with pytest.raises(ValueError):
        Detection(0, (0, 0, 1, 1))


def test_frame_clock_step():
    clock = FrameClock(fps=7.0, n_skip=3)
    assert clock.step_seconds == pytest.approx(3 / 7)
    assert clock.time_of(8) == pytest.approx(1.0)


def test_world_track_csv_round_trip(tmp_path):
    trk = WorldTrack(
        5,
        np.array([1, 2, 4]),
        np.array([0.0, 1 / 7, 3 / 7]),
        np.array([[1.0, 2.0], [1.1, 2.2], [1.3, 2.6]]),
        np.array([[10.0, 20.0, 5.0, 15.0]] * 3),
        ClassLabel.SITTER,
    )
    p = tmp_path / "w.csv"
    write_world_tracks(p, [trk])
    (back,) = read_world_tracks(p)
    assert back.track_id == 5
    assert back.class_label is ClassLabel.SITTER
    np.testing.assert_array_equal(back.frames, trk.frames)
    np.testing.assert_allclose(back.xy, trk.xy, atol=1e-6)
    np.testing.assert_allclose(back.bboxes, trk.bboxes)
