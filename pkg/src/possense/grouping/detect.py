from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .clustering import (
    ALPHA_DEFAULT,
    BETA_DEFAULT,
    FeatureScaling,
    GroupPartition,
    affinity_matrix,
    correlation_clustering,
)
from .features import FeatureParams, pair_features
from .windows import TrajectoryWindow


@dataclass(frozen=True)
class GroupingParams:
    features: FeatureParams = field(default_factory=FeatureParams)
    scaling: FeatureScaling = field(default_factory=FeatureScaling)
    alpha: tuple = ALPHA_DEFAULT
    beta: tuple = BETA_DEFAULT
    eps_neg: float | None = None
    exact_limit: int = 12


def detect_groups(win: TrajectoryWindow, params: GroupingParams = GroupingParams()) -> GroupPartition:
    """Features -> affinity -> correlation clustering for one window.

    ``diagnostics`` on the result holds one row per unordered pair:
    ``(i, j, f1, f2, f3, f4, W_ij)``.
    """
    ids = win.member_ids
    if not ids:
        return GroupPartition([], 0.0)
    feats = {(i, j): pair_features(win, i, j, params.features) for i, j in itertools.combinations(ids, 2)}
    aff = affinity_matrix(ids, feats, params.alpha, params.beta, params.scaling, params.eps_neg)
    part = correlation_clustering(aff, exact_limit=params.exact_limit)
    for (i, j), pf in feats.items():
        w = aff.W[aff.index(i), aff.index(j)]
        part.diagnostics.append((i, j, pf.f1, pf.f2, pf.f3, pf.f4, float(w)))
    return part
