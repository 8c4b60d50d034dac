"""Association costs and bipartite assignment."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kalman import mahalanobis_sq

INFTY_COST = 1e5

# 0.95 quantile of the chi-square distribution, keyed by degrees of freedom.
CHI2INV95 = {1: 3.8415, 2: 5.9915, 3: 7.8147, 4: 9.4877, 5: 11.070, 6: 12.592, 7: 14.067, 8: 15.507, 9: 16.919}


class MissingAppearance(LookupError):
    """No appearance descriptor or empty gallery; fall back to motion-only cost."""


@dataclass(frozen=True)
class AssociationCost:
    d_mot: float
    d_app: float | None
    d_comb: float
    motion_ok: bool
    appearance_ok: bool


class Assignment(NamedTuple):
    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]


def appearance_distance(gallery, feature) -> float:
    """Smallest cosine distance between a unit descriptor and a gallery."""
    if feature is None:
        raise MissingAppearance("detection carries no appearance descriptor")
    if len(gallery) == 0:
        raise MissingAppearance("track gallery is empty")
    G = np.asarray(list(gallery), dtype=float)
    return float(np.min(1.0 - G @ np.asarray(feature, dtype=float)))


def combined_cost(
    d_mot: float,
    d_app: float | None,
    lambda_mix: float = 0.0,
    chi2_gate: float = CHI2INV95[4],
    app_gate: float = 0.2,
) -> AssociationCost:
    """Gated cost; ``d_app=None`` means motion-only mode."""
    if not (chi2_gate > 0 and app_gate > 0):
        raise ValueError("gates must be positive")
    motion_ok = d_mot <= chi2_gate
    if d_app is None:
        return AssociationCost(d_mot, None, d_mot if motion_ok else INFTY_COST, motion_ok, True)
    appearance_ok = d_app <= app_gate
    if motion_ok and appearance_ok:
        d_comb = lambda_mix * d_mot + (1.0 - lambda_mix) * d_app
    else:
        d_comb = INFTY_COST
    return AssociationCost(d_mot, d_app, d_comb, motion_ok, appearance_ok)


def hungarian_assign(cost) -> Assignment:
    """Minimum-cost matching; pairs costing >= INFTY_COST are reported unmatched."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    R, C = cost.shape
    if R == 0 or C == 0:
        return Assignment([], list(range(R)), list(range(C)))
    rows, cols = linear_sum_assignment(cost)
    matches = []
    matched_r, matched_c = set(), set()
    for r, c in zip(rows.tolist(), cols.tolist()):
        if cost[r, c] >= INFTY_COST:
            continue
        matches.append((r, c))
        matched_r.add(r)
        matched_c.add(c)
    return Assignment(
        matches,
        [r for r in range(R) if r not in matched_r],
        [c for c in range(C) if c not in matched_c],
    )


def iou(b1, b2) -> float:
    """Intersection over union of two (left, top, width, height) boxes."""
    l1, t1, w1, h1 = b1
    l2, t2, w2, h2 = b2
    iw = min(l1 + w1, l2 + w2) - max(l1, l2)
    ih = min(t1 + h1, t2 + h2) - max(t1, t2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner arithmetic, so identical boxes give exactly 1
    a1 = ((l1 + w1) - l1) * ((t1 + h1) - t1)
    a2 = ((l2 + w2) - l2) * ((t2 + h2) - t2)
    return float(inter / (a1 + a2 - inter))


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (ax2 - a[:, 0]) * (ay2 - a[:, 1])
    area_b = (bx2 - b[:, 0]) * (by2 - b[:, 1])
    union = area_a[:, None] + area_b[None] - inter
    return inter / union


__all__ = [
    "INFTY_COST",
    "CHI2INV95",
    "AssociationCost",
    "Assignment",
    "MissingAppearance",
    "appearance_distance",
    "combined_cost",
    "hungarian_assign",
    "iou",
    "iou_matrix",
    "mahalanobis_sq",
]
