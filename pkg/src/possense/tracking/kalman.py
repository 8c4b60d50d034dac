"""Constant-velocity Kalman filter over (x_c, y_c, aspect, height)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

NDIM = 4


class KalmanNumericalError(ArithmeticError):
    """Innovation or projected covariance is not positive definite."""


@dataclass(frozen=True)
class KalmanModel:
    """Noise is proportional to the box height so gating is depth-invariant.

    ``std_weight_position`` / ``std_weight_velocity`` scale process noise,
    ``measurement_weight`` scales measurement noise. ``aspect_*`` are the
    absolute standard deviations for the aspect-ratio coordinate.
    """

    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    measurement_weight: float = 1.0 / 20
    aspect_process_std: float = 1e-2
    aspect_velocity_std: float = 1e-5
    aspect_measurement_std: float = 1e-1

    @property
    def F(self) -> np.ndarray:
        F = np.eye(2 * NDIM)
        F[:NDIM, NDIM:] = np.eye(NDIM)
        return F

    @property
    def C(self) -> np.ndarray:
        return np.eye(NDIM, 2 * NDIM)

    def process_cov(self, h: float) -> np.ndarray:
        wp, wv = self.std_weight_position * h, self.std_weight_velocity * h
        std = [wp, wp, self.aspect_process_std, wp, wv, wv, self.aspect_velocity_std, wv]
        return np.diag(np.square(std))

    def measurement_cov(self, h: float) -> np.ndarray:
        wm = self.measurement_weight * h
        std = [wm, wm, self.aspect_measurement_std, wm]
        return np.diag(np.square(std))

    def initiate(self, measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean = np.r_[measurement, np.zeros(NDIM)]
        h = measurement[3]
        wp, wv = self.std_weight_position * h, self.std_weight_velocity * h
        std = [2 * wp, 2 * wp, 1e-2, 2 * wp, 10 * wv, 10 * wv, 1e-5, 10 * wv]
        return mean, np.diag(np.square(std))

    def predict(self, mean: np.ndarray, cov: np.ndarray, steps: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Advance ``steps`` single-frame transitions."""
        F = self.F
        for _ in range(steps):
            Q = self.process_cov(mean[3])
            mean = F @ mean
            cov = F @ cov @ F.T + Q
            cov = 0.5 * (cov + cov.T)
        return mean, cov

    def project(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted observation and its covariance (measurement noise included)."""
        C = self.C
        S = C @ cov @ C.T + self.measurement_cov(mean[3])
        return C @ mean, 0.5 * (S + S.T)

    def update(
        self, mean: np.ndarray, cov: np.ndarray, measurement: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        y, S = self.project(mean, cov)
        try:
            chol = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise KalmanNumericalError(
                "innovation covariance is not positive definite; check the noise configuration"
            ) from exc
        PCt = cov @ self.C.T
        gain = scipy.linalg.cho_solve(chol, PCt.T, check_finite=False).T
        new_mean = mean + gain @ (measurement - y)
        new_cov = cov - gain @ S @ gain.T
        return new_mean, 0.5 * (new_cov + new_cov.T)


def mahalanobis_sq(residual: np.ndarray, cov: np.ndarray) -> float:
    """Squared Mahalanobis distance r^T cov^-1 r via Cholesky."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise KalmanNumericalError("projected covariance is singular (degenerate track)") from exc
    z = scipy.linalg.solve_triangular(L, residual, lower=True, check_finite=False)
    return float(z @ z)
