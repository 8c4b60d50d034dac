"""Pinhole camera with radial-tangential distortion and ground-plane mapping."""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .model import Detection, WorldPoint


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    pass


class HorizonError(CameraError):
    """Viewing ray does not meet the ground plane in front of the camera."""


class CalibrationError(CameraError):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    image_size: tuple[int, int] = (1280, 720)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))
        if len(self.dist) != 5:
            raise CameraError("distortion must have 5 coefficients (k1, k2, p1, p2, k3)")
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        W, H = self.image_size
        if not (0 <= self.cx <= W and 0 <= self.cy <= H):
            raise CameraError("principal point must lie inside the image")
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise CameraError("R must be a proper rotation matrix")

    @property
    def A(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def with_pose(self, R, t) -> "CameraModel":
        return replace(self, R=np.asarray(R, float), t=np.asarray(t, float))

    # -- distortion ------------------------------------------------------
    def distort(self, xn: np.ndarray, yn: np.ndarray):
        k1, k2, p1, p2, k3 = self.dist
        r2 = xn * xn + yn * yn
        radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
        xd = xn * radial + 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
        yd = yn * radial + p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
        return xd, yd

    @property
    def monotone_radius(self) -> float:
        """Normalised radius where the radial distortion map stops increasing.

        Beyond it distinct rays land on the same pixel, so back-projection
        is only defined inside this radius (infinite when the map never folds).
        """
        k1, k2, _, _, k3 = self.dist
        # d/dr [r (1 + k1 r^2 + k2 r^4 + k3 r^6)] = 0, as a cubic in s = r^2
        roots = np.roots(np.trim_zeros([7 * k3, 5 * k2, 3 * k1, 1.0], "f"))
        s = [z.real for z in np.atleast_1d(roots) if abs(z.imag) < 1e-12 and z.real > 0]
        return float(np.sqrt(min(s))) if s else float("inf")

    def undistort(self, xd: np.ndarray, yd: np.ndarray, max_iter: int = 20, tol: float = 1e-10):
        """Fixed-point inversion of ``distort`` in normalized coordinates."""
        xd = np.asarray(xd, float)
        yd = np.asarray(yd, float)
        if not any(self.dist):
            return xd.copy(), yd.copy()
        k1, k2, p1, p2, k3 = self.dist
        x, y = xd.copy(), yd.copy()
        for _ in range(max_iter):
            r2 = x * x + y * y
            radial = 1 + k1 * r2 + k2 * r2**2 + k3 * r2**3
            dx = 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
            dy = p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
            x_new = (xd - dx) / radial
            y_new = (yd - dy) / radial
            step = np.max(np.abs(np.r_[np.ravel(x_new - x), np.ravel(y_new - y)]))
            x, y = x_new, y_new
            if step < tol:
                break
        return x, y


def look_at(camera_position, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """(R, t) for a camera at ``camera_position`` looking at ``target``; no roll."""
    C = np.asarray(camera_position, float)
    z = np.asarray(target, float) - C
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, float))
    if np.linalg.norm(x) < 1e-12:
        raise CameraError("viewing direction is parallel to the up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return R, -R @ C


def _to_cam(cam: CameraModel, pts: np.ndarray) -> np.ndarray:
    return pts @ cam.R.T + cam.t


def project_points(cam: CameraModel, pts) -> np.ndarray:
    """World points (N, 3) to pixels (N, 2)."""
    P = np.atleast_2d(np.asarray(pts, dtype=float))
    Pc = _to_cam(cam, P)
    if np.any(Pc[:, 2] <= 0):
        raise BehindCameraError("point is behind the camera (Z_c <= 0)")
    xn, yn = Pc[:, 0] / Pc[:, 2], Pc[:, 1] / Pc[:, 2]
    xd, yd = cam.distort(xn, yn)
    return np.column_stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy])


def in_view(cam: CameraModel, pts) -> np.ndarray:
    """Mask of world points (N, 3) that are in front of the camera, inside the
    image, and inside the invertible part of the distortion map."""
    P = np.atleast_2d(np.asarray(pts, dtype=float))
    Pc = _to_cam(cam, P)
    ok = Pc[:, 2] > 0
    z = np.where(ok, Pc[:, 2], 1.0)
    xn, yn = Pc[:, 0] / z, Pc[:, 1] / z
    ok &= np.hypot(xn, yn) < cam.monotone_radius
    xd, yd = cam.distort(xn, yn)
    u, v = cam.fx * xd + cam.cx, cam.fy * yd + cam.cy
    W, H = cam.image_size
    return ok & (u >= 0) & (u <= W) & (v >= 0) & (v <= H)


def project_world_to_pixel(cam: CameraModel, M: WorldPoint | Sequence[float]) -> tuple[float, float]:
    p = M.as_array() if isinstance(M, WorldPoint) else np.asarray(M, float)
    u, v = project_points(cam, p[None, :])[0]
    return float(u), float(v)


def backproject_pixels(cam: CameraModel, uv) -> np.ndarray:
    """Pixels (N, 2) to ground-plane points (N, 2); raises HorizonError if any ray misses."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    xd = (uv[:, 0] - cam.cx) / cam.fx
    yd = (uv[:, 1] - cam.cy) / cam.fy
    xn, yn = cam.undistort(xd, yd)
    rays = np.column_stack([xn, yn, np.ones_like(xn)]) @ cam.R  # R^T applied row-wise
    C = cam.center
    dz = rays[:, 2]
    norms = np.linalg.norm(rays, axis=1)
    if np.any(np.abs(dz) <= 1e-9 * norms):
        raise HorizonError("viewing ray is parallel to the ground plane")
    s = -C[2] / dz
    if np.any(s <= 0):
        raise HorizonError("ground intersection lies behind the camera")
    ground = C[None, :] + s[:, None] * rays
    return ground[:, :2]


def backproject_pixel_to_ground(cam: CameraModel, u: float, v: float) -> WorldPoint:
    X, Y = backproject_pixels(cam, [[u, v]])[0]
    return WorldPoint(float(X), float(Y), 0.0)


def ground_anchor_pixel(det: Detection) -> tuple[float, float]:
    """Lowest contour vertex (median u on ties), else the bbox bottom-centre."""
    if det.contour:
        v_max = max(p[1] for p in det.contour)
        us = [p[0] for p in det.contour if p[1] == v_max]
        return float(statistics.median(us)), float(v_max)
    l, t, w, h = det.bbox
    return l + w / 2.0, t + h


# --------------------------------------------------------------------------
# extrinsic calibration


def _residuals(cam: CameraModel, rvec, t, world, pixels):
    R = Rotation.from_rotvec(rvec).as_matrix()
    Pc = world @ R.T + t
    xn, yn = Pc[:, 0] / Pc[:, 2], Pc[:, 1] / Pc[:, 2]
    xd, yd = cam.distort(xn, yn)
    pred = np.column_stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy])
    return (pred - pixels).ravel()


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    def conditioner(p):
        mean = p.mean(axis=0)
        scale = np.sqrt(2) / max(np.mean(np.linalg.norm(p - mean, axis=1)), 1e-12)
        return np.array([[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1]])

    Ts, Td = conditioner(src), conditioner(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, sv, Vt = np.linalg.svd(np.asarray(rows))
    H = Vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ H @ Ts


def calibrate_extrinsics(
    cam: CameraModel,
    correspondences: Sequence[tuple[WorldPoint | Sequence[float], Sequence[float]]],
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Planar pose from ground-plane correspondences.

    Homography decomposition gives the initial pose, Gauss-Newton on the
    reprojection error refines it. Returns ``(R, t, rms_px)``.
    """
    if len(correspondences) < 4:
        raise CalibrationError("need at least 4 ground-plane correspondences")
    world = []
    pixels = []
    for M, px in correspondences:
        p = M.as_array() if isinstance(M, WorldPoint) else np.asarray(M, float)
        if p.size == 2:
            p = np.r_[p, 0.0]
        if abs(p[2]) > 1e-9:
            raise CalibrationError("correspondences must lie on the ground plane Z=0")
        world.append(p)
        pixels.append(px)
    world = np.asarray(world, float)
    pixels = np.asarray(pixels, float)

    centered = world[:, :2] - world[:, :2].mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] / sv[0] < 1e-6:
        raise CalibrationError("correspondences are collinear or coincident (degenerate configuration)")

    xn, yn = cam.undistort((pixels[:, 0] - cam.cx) / cam.fx, (pixels[:, 1] - cam.cy) / cam.fy)
    H = _homography_dlt(world[:, :2], np.column_stack([xn, yn]))
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if (lam * H @ np.r_[world[0, :2], 1.0])[2] < 0:
        lam = -lam
    r1, r2, t0 = lam * h1, lam * h2, lam * h3
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R0 = U @ np.diag([1, 1, np.linalg.det(U @ Vt)]) @ Vt

    params = np.r_[Rotation.from_matrix(R0).as_rotvec(), t0]

    def res(p):
        return _residuals(cam, p[:3], p[3:], world, pixels)

    r = res(params)
    eps = 1e-7
    for _ in range(max_iter):
        J = np.empty((r.size, 6))
        for k in range(6):
            dp = np.zeros(6)
            dp[k] = eps * max(1.0, abs(params[k]))
            J[:, k] = (res(params + dp) - res(params - dp)) / (2 * dp[k])
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        new_params = params + step
        new_r = res(new_params)
        if new_r @ new_r > r @ r:
            break
        params, r = new_params, new_r
        if np.max(np.abs(step)) < 1e-12:
            break
    R = Rotation.from_rotvec(params[:3]).as_matrix()
    rms = float(np.sqrt(np.mean(r.reshape(-1, 2) ** 2 @ np.ones(2))))
    return R, params[3:].copy(), rms


# --------------------------------------------------------------------------
# calibration files


def camera_from_dict(d: dict) -> CameraModel:
    try:
        R = np.asarray(d.get("R", np.eye(3)), float)
        if R.shape == (3,):
            R = Rotation.from_rotvec(R).as_matrix()
        return CameraModel(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            dist=tuple(d.get("dist", (0.0,) * 5)),
            R=R,
            t=np.asarray(d.get("t", (0.0, 0.0, 0.0)), float),
            image_size=tuple(int(v) for v in d.get("image_size", (1280, 720))),
        )
    except KeyError as exc:
        raise CameraError(f"calibration is missing field {exc.args[0]!r}") from exc


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "dist": list(cam.dist),
        "R": cam.R.tolist(),
        "t": cam.t.tolist(),
        "image_size": list(cam.image_size),
    }


def load_camera(path: str | Path) -> CameraModel:
    return camera_from_dict(json.loads(Path(path).read_text()))


def save_camera(path: str | Path, cam: CameraModel) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")
