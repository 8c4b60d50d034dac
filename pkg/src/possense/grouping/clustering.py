"""Affinity construction and correlation clustering."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import PairFeatures, TAU_S_DEFAULT, proxemics_gmm

ALPHA_DEFAULT = (0.6, 0.4, 0.2, 0.3)
BETA_DEFAULT = (0.4, 0.6, 0.2, 0.3)


@dataclass(frozen=True)
class FeatureScaling:
    """Fixed min-max bounds that turn raw features into dissimilarities in [0, 1].

    Proxemics is scaled between its value at ``f1_far_m`` (dissimilar) and
    at ``f1_near_m`` (similar); DTW cost between ``f2_bounds`` (m^2);
    Granger score between ``f3_bounds``; path convergence between
    ``f4_bounds``. ``mode="window"`` rescales by the observed per-window
    extremes instead.
    """

    f1_near_m: float = 1.2
    f1_far_m: float = TAU_S_DEFAULT
    f2_bounds: tuple[float, float] = (1.44, 25.0)
    f3_bounds: tuple[float, float] = (0.0, 3.0)
    f4_bounds: tuple[float, float] = (0.0, 1.0)
    mode: str = "fixed"


def _scale(x, lo, hi):
    x = np.asarray(x, float)
    if hi <= lo:
        return np.zeros_like(x)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def dissimilarities(raw: np.ndarray, scaling: FeatureScaling = FeatureScaling()) -> np.ndarray:
    """Orient and rescale (n, 4) raw features so larger means less affine."""
    raw = np.atleast_2d(np.asarray(raw, float))
    if scaling.mode == "window":
        bounds = [(raw[:, k].min(), raw[:, k].max()) for k in range(4)]
    elif scaling.mode == "fixed":
        bounds = [
            (proxemics_gmm((scaling.f1_far_m, 0.0), (0.0, 0.0)), proxemics_gmm((scaling.f1_near_m, 0.0), (0.0, 0.0))),
            scaling.f2_bounds,
            scaling.f3_bounds,
            scaling.f4_bounds,
        ]
    else:
        raise ValueError(f"unknown scaling mode {scaling.mode!r}")
    d = np.empty_like(raw)
    d[:, 0] = 1.0 - _scale(raw[:, 0], *bounds[0])
    d[:, 1] = _scale(raw[:, 1], *bounds[1])
    d[:, 2] = 1.0 - _scale(raw[:, 2], *bounds[2])
    d[:, 3] = 1.0 - _scale(raw[:, 3], *bounds[3])
    return d


def pair_affinity(f, alpha=ALPHA_DEFAULT, beta=BETA_DEFAULT) -> float:
    """alpha . (1 - f) - beta . f for a dissimilarity vector f."""
    f = np.asarray(f, float)
    return float(np.dot(alpha, 1.0 - f) - np.dot(beta, f))


@dataclass
class AffinityMatrix:
    ids: list[int]
    W: np.ndarray
    alpha: tuple = ALPHA_DEFAULT
    beta: tuple = BETA_DEFAULT

    def index(self, track_id: int) -> int:
        return self.ids.index(track_id)


def affinity_matrix(
    ids: Sequence[int],
    features: Mapping[tuple[int, int], PairFeatures],
    alpha=ALPHA_DEFAULT,
    beta=BETA_DEFAULT,
    scaling: FeatureScaling = FeatureScaling(),
    eps_neg: float | None = None,
) -> AffinityMatrix:
    """Build W from per-pair features.

    Pairs that never co-occur, or never pass the per-frame gates, get the
    fixed repulsion ``-eps_neg`` (default 0.1 * sum(beta)).
    """
    alpha = tuple(float(a) for a in alpha)
    beta = tuple(float(b) for b in beta)
    if min(alpha + beta) < 0:
        raise ValueError("alpha and beta must be nonnegative")
    if eps_neg is None:
        eps_neg = 0.1 * sum(beta)
    ids = list(ids)
    pos = {k: n for n, k in enumerate(ids)}
    W = np.zeros((len(ids), len(ids)))
    for a, b in itertools.combinations(range(len(ids)), 2):
        W[a, b] = W[b, a] = -eps_neg
    usable = [
        pf for key, pf in sorted(features.items())
        if pf.n_cooccur > 0 and pf.qualified and pf.i in pos and pf.j in pos
    ]
    if usable:
        d = dissimilarities(np.array([pf.vector for pf in usable]), scaling)
        for pf, row in zip(usable, d):
            w = pair_affinity(row, alpha, beta)
            a, b = pos[pf.i], pos[pf.j]
            W[a, b] = W[b, a] = w
    return AffinityMatrix(ids, W, alpha, beta)


# --------------------------------------------------------------------------
# correlation clustering


@dataclass
class GroupPartition:
    groups: list[tuple[int, ...]]
    objective: float = 0.0
    diagnostics: list = field(default_factory=list)

    @property
    def members(self) -> set[int]:
        return {m for g in self.groups for m in g}

    def group_of(self, track_id: int) -> tuple[int, ...] | None:
        for g in self.groups:
            if track_id in g:
                return g
        return None


def partition_objective(W: np.ndarray, labels: Sequence[int]) -> float:
    """Sum of W over ordered pairs i != j sharing a cluster label."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return float(np.sum(np.asarray(W)[same]))


def _canonical(labels: Sequence[int]) -> list[int]:
    remap: dict[int, int] = {}
    return [remap.setdefault(lab, len(remap)) for lab in labels]


def _exact(W: np.ndarray) -> tuple[list[int], float]:
    """Branch and bound over set partitions in restricted-growth order."""
    n = len(W)
    pos = np.clip(W, 0, None)
    # best possible gain of element k against any earlier elements
    gain_cap = np.array([2 * pos[k, :k].sum() for k in range(n)])
    rest_cap = np.r_[np.cumsum(gain_cap[::-1])[::-1], 0.0]

    best_labels, best_val = _greedy(W)
    best_val_box = [best_val, list(best_labels)]
    labels = [0] * n
    cluster_members: list[list[int]] = []

    def recurse(k: int, value: float):
        if value + rest_cap[k] <= best_val_box[0] + 1e-12:
            return
        if k == n:
            best_val_box[0] = value
            best_val_box[1] = list(labels)
            return
        options = []
        for c, mem in enumerate(cluster_members):
            options.append((2 * float(W[k, mem].sum()), c))
        options.append((0.0, len(cluster_members)))
        options.sort(key=lambda o: -o[0])
        for gain, c in options:
            labels[k] = c
            if c == len(cluster_members):
                cluster_members.append([k])
                recurse(k + 1, value + gain)
                cluster_members.pop()
            else:
                cluster_members[c].append(k)
                recurse(k + 1, value + gain)
                cluster_members[c].pop()

    recurse(0, 0.0)
    return _canonical(best_val_box[1]), float(best_val_box[0])


def _greedy(W: np.ndarray) -> tuple[list[int], float]:
    n = len(W)
    clusters = [[k] for k in range(n)]
    while True:
        best, pair = 0.0, None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            gain = 2 * float(W[np.ix_(clusters[a], clusters[b])].sum())
            if gain > best + 1e-12:
                best, pair = gain, (a, b)
        if pair is None:
            break
        a, b = pair
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    labels = [0] * n
    for c, mem in enumerate(clusters):
        for k in mem:
            labels[k] = c
    labels = _local_search(W, labels)
    return labels, partition_objective(W, labels)


def _local_search(W: np.ndarray, labels: list[int]) -> list[int]:
    """Move single elements (to another cluster or a new one) while it helps."""
    n = len(W)
    labels = list(labels)
    improved = True
    while improved:
        improved = False
        for k in range(n):
            current = labels[k]
            mates = [m for m in range(n) if labels[m] == current and m != k]
            stay = 2 * float(W[k, mates].sum()) if mates else 0.0
            best_gain, best_label = 1e-12, None
            for lab in sorted(set(labels)):
                if lab == current:
                    continue
                mem = [m for m in range(n) if labels[m] == lab]
                gain = 2 * float(W[k, mem].sum()) - stay
                if gain > best_gain:
                    best_gain, best_label = gain, lab
            if mates and -stay > best_gain:
                best_gain, best_label = -stay, max(labels) + 1
            if best_label is not None:
                labels[k] = best_label
                labels = _canonical(labels)
                improved = True
    return labels


def single_move_improvement(W: np.ndarray, labels: Sequence[int]) -> float:
    """Largest objective gain of relocating one element; <= 0 at a local optimum."""
    base = partition_objective(W, labels)
    best = -np.inf
    n = len(labels)
    targets = sorted(set(labels)) + [max(labels) + 1 if n else 0]
    for k in range(n):
        for lab in targets:
            if lab == labels[k]:
                continue
            trial = list(labels)
            trial[k] = lab
            best = max(best, partition_objective(W, trial) - base)
    return float(best) if n else 0.0


def correlation_clustering(
    W: AffinityMatrix | np.ndarray,
    ids: Sequence[int] | None = None,
    exact_limit: int = 12,
    method: str = "auto",
) -> GroupPartition:
    """Maximise the within-cluster affinity sum.

    Exact branch-and-bound search for up to ``exact_limit`` members,
    greedy merging plus single-element local search beyond.
    """
    if isinstance(W, AffinityMatrix):
        ids = W.ids
        mat = W.W
    else:
        mat = np.asarray(W, float)
        ids = list(range(len(mat))) if ids is None else list(ids)
    n = len(ids)
    if n == 0:
        return GroupPartition([], 0.0)
    use_exact = method == "exact" or (method == "auto" and n <= exact_limit)
    if method not in ("auto", "exact", "greedy"):
        raise ValueError(f"unknown method {method!r}")
    labels, value = _exact(mat) if use_exact else _greedy(mat)
    groups: dict[int, list[int]] = {}
    for k, lab in enumerate(labels):
        groups.setdefault(lab, []).append(ids[k])
    out = sorted((tuple(sorted(g)) for g in groups.values()), key=lambda g: g[0])
    return GroupPartition(out, value)

