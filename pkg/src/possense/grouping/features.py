"""Pairwise trajectory features for group detection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .windows import TrajectoryWindow

log = logging.getLogger(__name__)

# Hall's intimate / personal / social boundaries, metres
HALL_SIGMAS = (0.5, 1.2, 3.7)

FEET = 0.3048
TAU_S_DEFAULT = 7 * FEET  # 2.1336 m
TAU_V_DEFAULT = 0.5 * FEET  # 0.1524 m/s


class NoCooccurrence(LookupError):
    """The two members never share a timestamp inside the window."""


@dataclass(frozen=True)
class NormBounds:
    """Min-max bounds for the squared distance and squared velocity difference."""

    dist_sq: tuple[float, float] = (0.0, TAU_S_DEFAULT**2)
    vel_sq: tuple[float, float] = (0.0, TAU_V_DEFAULT**2)


def _minmax(x: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


def frame_feature(
    si,
    sj,
    vi,
    vj,
    bounds: NormBounds = NormBounds(),
    lambda_loc: float = 0.5,
    tau_s: float = TAU_S_DEFAULT,
    tau_v: float = TAU_V_DEFAULT,
) -> Optional[float]:
    """Per-frame location/velocity feature, or None when the pair fails the gates."""
    ds = math.dist(si, sj)
    dv = math.dist(vi, vj)
    if ds > tau_s or dv > tau_v:
        return None
    return lambda_loc * _minmax(ds * ds, *bounds.dist_sq) + (1 - lambda_loc) * _minmax(dv * dv, *bounds.vel_sq)


def proxemics_gmm(si, sj) -> np.ndarray | float:
    """Mean of three isotropic 2-D normal densities at the displacement si - sj.

    Accepts single points or (N, 2) arrays.
    """
    d = np.asarray(si, float) - np.asarray(sj, float)
    r2 = np.sum(d * d, axis=-1)
    total = 0.0
    for sigma in HALL_SIGMAS:
        total = total + np.exp(-r2 / (2 * sigma * sigma)) / (2 * math.pi * sigma * sigma)
    out = total / len(HALL_SIGMAS)
    return float(out) if np.ndim(out) == 0 else out


def feature_proxemics_f1(win: TrajectoryWindow, i: int, j: int) -> float:
    ia, ja = win.cooccurrence(i, j)
    if len(ia) == 0:
        raise NoCooccurrence(f"members {i} and {j} never co-occur in window {win.window_id}")
    return float(np.mean(proxemics_gmm(win.members[i].s[ia], win.members[j].s[ja])))


def dtw_distance(Ti, Tj) -> tuple[float, float]:
    """Dynamic time warping on squared Euclidean costs.

    Returns the cumulative cost of the optimal alignment and that cost
    divided by the longer sequence length.
    """
    A = np.asarray(Ti, float).reshape(len(Ti), -1) if len(Ti) else np.empty((0, 2))
    B = np.asarray(Tj, float).reshape(len(Tj), -1) if len(Tj) else np.empty((0, 2))
    M, N = len(A), len(B)
    if M == 0 or N == 0:
        raise ValueError("DTW needs non-empty trajectories")
    D = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
    gamma = np.full((M + 1, N + 1), np.inf)
    gamma[0, 0] = 0.0
    for m in range(1, M + 1):
        row_prev = gamma[m - 1]
        row = gamma[m]
        Dm = D[m - 1]
        for n in range(1, N + 1):
            best = row_prev[n - 1]
            if row_prev[n] < best:
                best = row_prev[n]
            if row[n - 1] < best:
                best = row[n - 1]
            row[n] = Dm[n - 1] + best
    g = float(gamma[M, N])
    return g, g / max(M, N)


def _lagged(x: np.ndarray, p: int) -> np.ndarray:
    """Columns x[t-1], ..., x[t-p] for t = p .. len(x)-1."""
    n = len(x)
    return np.column_stack([x[p - k : n - k] for k in range(1, p + 1)])


def granger_f_statistic(target, source, p: int = 2) -> Optional[float]:
    """Pooled F statistic for "source's lagged increments help predict target's".

    ``target`` and ``source`` are aligned (n, d) position sequences; each
    axis contributes one restricted/unrestricted regression pair and the
    residual sums are pooled. Returns None when a regression is rank
    deficient or the unrestricted fit is exact.
    """
    Y = np.diff(np.asarray(target, float).reshape(len(target), -1), axis=0)
    X = np.diff(np.asarray(source, float).reshape(len(source), -1), axis=0)
    n_obs = len(Y) - p
    dof = n_obs - 2 * p - 1
    if n_obs <= 0 or dof <= 0:
        return None
    rss_r = rss_u = 0.0
    for axis in range(Y.shape[1]):
        y = Y[:, axis]
        x = X[:, axis]
        target_vec = y[p:]
        restricted = np.column_stack([np.ones(n_obs), _lagged(y, p)])
        unrestricted = np.column_stack([restricted, _lagged(x, p)])
        if np.linalg.matrix_rank(unrestricted) < unrestricted.shape[1]:
            return None
        beta_r, *_ = np.linalg.lstsq(restricted, target_vec, rcond=None)
        beta_u, *_ = np.linalg.lstsq(unrestricted, target_vec, rcond=None)
        rss_r += float(np.sum((target_vec - restricted @ beta_r) ** 2))
        rss_u += float(np.sum((target_vec - unrestricted @ beta_u) ** 2))
    k = Y.shape[1]
    if rss_u <= 0.0:
        return None
    return max(0.0, ((rss_r - rss_u) / (k * p)) / (rss_u / (k * dof)))


def granger_causality_f3(Ti, Tj, p: int = 2) -> float:
    """Symmetrised Granger score log(1 + max(F_i->j, F_j->i)).

    Degenerate regressions (e.g. motionless or perfectly regular paths)
    score 0.
    """
    if len(Ti) != len(Tj):
        raise ValueError("Granger score needs aligned sequences of equal length")
    if len(Ti) < 2 * p + 3:
        raise ValueError(f"need at least {2 * p + 3} aligned samples for lag order {p}")
    f_ij = granger_f_statistic(Tj, Ti, p)
    f_ji = granger_f_statistic(Ti, Tj, p)
    if f_ij is None or f_ji is None:
        log.debug("rank-deficient Granger regression; score set to 0")
        return 0.0
    return float(math.log1p(max(f_ij, f_ji)))


def _extrapolated_path(samples, end: float) -> np.ndarray:
    t, s, v = samples.t, samples.s, samples.v
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    if dt <= 0 or t[-1] >= end:
        return s
    extra_t = np.arange(t[-1] + dt, end + 1e-12, dt) - t[-1]
    extra = s[-1] + extra_t[:, None] * v[-1]
    return np.vstack([s, extra])


def heat_map(points: np.ndarray, origin: np.ndarray, shape: tuple[int, int], grid_res: float) -> np.ndarray:
    """Occupancy of ``points`` splatted with an isotropic Gaussian (sigma = grid_res)."""
    nx, ny = shape
    gx = origin[0] + (np.arange(nx) + 0.5) * grid_res
    gy = origin[1] + (np.arange(ny) + 0.5) * grid_res
    sig2 = 2 * grid_res * grid_res
    wx = np.exp(-((points[:, 0, None] - gx[None]) ** 2) / sig2)  # (n, nx)
    wy = np.exp(-((points[:, 1, None] - gy[None]) ** 2) / sig2)  # (n, ny)
    return wy.T @ wx  # (ny, nx)


def path_convergence_f4(win: TrajectoryWindow, i: int, j: int, grid_res: float = 0.5, pad: float = 5.0) -> float:
    """Normalised correlation of the two members' forward-extrapolated heat maps."""
    pi = _extrapolated_path(win.members[i], win.end)
    pj = _extrapolated_path(win.members[j], win.end)
    both = np.vstack([pi, pj])
    lo = both.min(axis=0) - pad
    hi = both.max(axis=0) + pad
    shape = tuple(int(math.ceil(x)) for x in (hi - lo) / grid_res)
    hi_i = heat_map(pi, lo, shape, grid_res)
    hi_j = heat_map(pj, lo, shape, grid_res)
    denom = math.sqrt(float(np.sum(hi_i * hi_i)) * float(np.sum(hi_j * hi_j)))
    if denom == 0.0:
        return 0.0
    return min(1.0, max(0.0, float(np.sum(hi_i * hi_j)) / denom))


@dataclass
class PairFeatures:
    i: int
    j: int
    n_cooccur: int
    f1: float = 0.0
    f2: float = 0.0
    f3: float = 0.0
    f4: float = 0.0
    f_fram: list = field(default_factory=list)

    @property
    def qualified(self) -> bool:
        """At least one co-occurring frame passes the distance and velocity gates."""
        return any(v is not None for v in self.f_fram)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3, self.f4])


@dataclass(frozen=True)
class FeatureParams:
    tau_s: float = TAU_S_DEFAULT
    tau_v: float = TAU_V_DEFAULT
    lambda_loc: float = 0.5
    granger_order: int = 2
    grid_res: float = 0.5
    grid_pad: float = 5.0


def pair_features(win: TrajectoryWindow, i: int, j: int, params: FeatureParams = FeatureParams()) -> PairFeatures:
    ia, ja = win.cooccurrence(i, j)
    mi, mj = win.members[i], win.members[j]
    pf = PairFeatures(i, j, len(ia))
    if len(ia) == 0:
        return pf
    bounds = NormBounds((0.0, params.tau_s**2), (0.0, params.tau_v**2))
    pf.f_fram = [
        frame_feature(mi.s[a], mj.s[b], mi.v[a], mj.v[b], bounds, params.lambda_loc, params.tau_s, params.tau_v)
        for a, b in zip(ia, ja)
    ]
    pf.f1 = feature_proxemics_f1(win, i, j)
    pf.f2 = dtw_distance(mi.s, mj.s)[1]
    if len(ia) >= 2 * params.granger_order + 3:
        pf.f3 = granger_causality_f3(mi.s[ia], mj.s[ja], params.granger_order)
    pf.f4 = path_convergence_f4(win, i, j, params.grid_res, params.grid_pad)
    return pf
