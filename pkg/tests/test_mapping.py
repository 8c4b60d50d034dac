import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from possense.mapping import (
    BehindCameraError,
    CalibrationError,
    CameraError,
    CameraModel,
    HorizonError,
    backproject_pixel_to_ground,
    backproject_pixels,
    calibrate_extrinsics,
    camera_from_dict,
    camera_to_dict,
    ground_anchor_pixel,
    in_view,
    load_camera,
    look_at,
    project_points,
    project_world_to_pixel,
    save_camera,
)
from possense.model import Detection, WorldPoint


def axis_camera():
    return CameraModel(1000.0, 1000.0, 640.0, 360.0, (0.0,) * 5, np.eye(3), np.array([0.0, 0.0, 5.0]))


def tilted_camera(dist=(0.0,) * 5):
    R, t = look_at((0.0, 0.0, 12.0), (0.0, 20.0, 0.0))
    return CameraModel(1000.0, 1000.0, 640.0, 360.0, dist, R, t)


def test_optical_axis_hits_principal_point():
    assert project_world_to_pixel(axis_camera(), WorldPoint(0.0, 0.0, 0.0)) == pytest.approx((640.0, 360.0))


def test_lateral_offset_projection():
    assert project_world_to_pixel(axis_camera(), (0.5, 0.0, 0.0)) == pytest.approx((740.0, 360.0))


def test_point_behind_camera():
    with pytest.raises(BehindCameraError):
        project_world_to_pixel(axis_camera(), (0.0, 0.0, -6.0))


def test_camera_validation():
    with pytest.raises(CameraError):
        CameraModel(1000.0, 1000.0, 640.0, 360.0, (0.0,) * 5, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(CameraError):
        CameraModel(-1.0, 1000.0, 640.0, 360.0)


def in_view_ground_points(cam, n, rng):
    pts = []
    while len(pts) < n:
        xy = np.column_stack([rng.uniform(-15, 15, 4 * n), rng.uniform(8, 50, 4 * n)])
        pts.extend(xy[in_view(cam, np.column_stack([xy, np.zeros(len(xy))]))].tolist())
    return np.array(pts[:n])


@pytest.mark.parametrize("k1, tol", [(0.0, 1e-6), (-0.2, 1e-4)])
def test_round_trip(k1, tol):
    cam = tilted_camera((k1, 0.0, 0.0, 0.0, 0.0))
    xy = in_view_ground_points(cam, 500, np.random.default_rng(3))
    uv = project_points(cam, np.column_stack([xy, np.zeros(len(xy))]))
    back = backproject_pixels(cam, uv)
    assert np.max(np.linalg.norm(back - xy, axis=1)) < tol


def test_horizon_pixel_is_rejected():
    cam = tilted_camera()
    # vanishing point of the ground's forward direction
    d = cam.R @ np.array([0.0, 1.0, 0.0])
    u = cam.fx * d[0] / d[2] + cam.cx
    v = cam.fy * d[1] / d[2] + cam.cy
    with pytest.raises(HorizonError):
        backproject_pixel_to_ground(cam, u, v)
    with pytest.raises(HorizonError):
        backproject_pixel_to_ground(cam, u, v - 20.0)  # above the horizon
    assert backproject_pixel_to_ground(cam, u, v + 200.0).Y > 0


def test_undistort_inverts_distort():
    cam = tilted_camera((-0.2, 0.05, 0.001, -0.001, 0.0))
    rng = np.random.default_rng(0)
    xn, yn = rng.uniform(-0.5, 0.5, 100), rng.uniform(-0.3, 0.3, 100)
    xd, yd = cam.distort(xn, yn)
    xu, yu = cam.undistort(xd, yd)
    np.testing.assert_allclose(xu, xn, atol=1e-9)
    np.testing.assert_allclose(yu, yn, atol=1e-9)


def test_monotone_radius():
    assert tilted_camera().monotone_radius == float("inf")
    assert tilted_camera((-0.2, 0.0, 0.0, 0.0, 0.0)).monotone_radius == pytest.approx(np.sqrt(1 / 0.6))


def test_folded_rays_are_not_in_view():
    cam = tilted_camera((-0.2, 0.0, 0.0, 0.0, 0.0))
    # far off to the side: the pinhole ray is beyond the fold yet lands inside the image
    P = np.array([[60.0, 25.0, 0.0]])
    u, v = project_points(cam, P)[0]
    assert 0 <= u <= 1280 and 0 <= v <= 720
    assert not in_view(cam, P)[0]
    assert in_view(cam, np.array([[0.0, 20.0, 0.0]]))[0]


def test_anchor_bottom_center():
    assert ground_anchor_pixel(Detection(1, (100.0, 200.0, 50.0, 100.0))) == (125.0, 300.0)


def test_anchor_contour_tie_takes_median_u():
    det = Detection(1, (10.0, 10.0, 10.0, 20.0), contour=((10.0, 10.0), (20.0, 30.0), (14.0, 30.0)))
    assert ground_anchor_pixel(det) == (17.0, 30.0)


def test_anchor_single_point_contour():
    det = Detection(1, (4.0, 4.0, 2.0, 2.0), contour=((5.0, 5.0),))
    assert ground_anchor_pixel(det) == (5.0, 5.0)


def synthetic_correspondences(cam, n, rng, sigma=0.0):
    xy = in_view_ground_points(cam, n, rng)
    uv = project_points(cam, np.column_stack([xy, np.zeros(n)]))
    uv = uv + rng.normal(0, sigma, uv.shape) if sigma else uv
    return [((x, y, 0.0), (u, v)) for (x, y), (u, v) in zip(xy, uv)]


def test_calibration_exact():
    truth = tilted_camera()
    guess = CameraModel(truth.fx, truth.fy, truth.cx, truth.cy)
    R, t, rms = calibrate_extrinsics(guess, synthetic_correspondences(truth, 12, np.random.default_rng(1)))
    assert rms < 1e-6
    np.testing.assert_allclose(R, truth.R, atol=1e-6)
    np.testing.assert_allclose(t, truth.t, atol=1e-5)


def test_calibration_noisy_monte_carlo():
    truth = tilted_camera()
    guess = CameraModel(truth.fx, truth.fy, truth.cx, truth.cy)
    worst = 0.0
    for seed in range(100):
        corr = synthetic_correspondences(truth, 12, np.random.default_rng(seed), sigma=0.5)
        _, _, rms = calibrate_extrinsics(guess, corr)
        worst = max(worst, rms)
    assert worst <= 1.0


def test_calibration_collinear_points():
    cam = CameraModel(1000.0, 1000.0, 640.0, 360.0)
    corr = [((float(k), 2.0 * k, 0.0), (100.0 + k, 200.0 + k)) for k in range(4)]
    with pytest.raises(CalibrationError):
        calibrate_extrinsics(cam, corr)


def test_calibration_needs_ground_points():
    cam = CameraModel(1000.0, 1000.0, 640.0, 360.0)
    corr = [((0.0, 0.0, 1.0), (1.0, 1.0))] * 4
    with pytest.raises(CalibrationError):
        calibrate_extrinsics(cam, corr)


def test_calibration_file_round_trip(tmp_path):
    cam = tilted_camera((-0.1, 0.0, 0.0, 0.0, 0.0))
    p = tmp_path / "cam.json"
    save_camera(p, cam)
    back = load_camera(p)
    np.testing.assert_allclose(back.R, cam.R)
    assert back.dist == cam.dist


def test_calibration_accepts_rotation_vector():
    d = camera_to_dict(axis_camera())
    d["R"] = [0.0, 0.0, 0.0]
    assert np.allclose(camera_from_dict(d).R, np.eye(3))


def test_calibration_missing_field():
    with pytest.raises(CameraError, match="fx"):
        camera_from_dict(json.loads('{"fy": 1, "cx": 0, "cy": 0}'))


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.floats(10, 40))
def test_round_trip_property(x, y):
    cam = tilted_camera()
    u, v = project_world_to_pixel(cam, (x, y, 0.0))
    p = backproject_pixel_to_ground(cam, u, v)
    assert abs(p.X - x) < 1e-6 and abs(p.Y - y) < 1e-6
