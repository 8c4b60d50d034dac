from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

_KEY_SCALE = 1e6  # timestamps are aligned on the microsecond grid


@dataclass(frozen=True)
class MemberSamples:
    t: np.ndarray  # (n,)
    s: np.ndarray  # (n, 2) metres
    v: np.ndarray  # (n, 2) m/s

    @property
    def keys(self) -> np.ndarray:
        return np.round(self.t * _KEY_SCALE).astype(np.int64)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class TrajectoryWindow:
    window_id: int
    start: float
    end: float
    members: Mapping[int, MemberSamples] = field(default_factory=dict)

    @property
    def member_ids(self) -> list[int]:
        return sorted(self.members)

    def cooccurrence(self, i: int, j: int):
        """Index arrays into i's and j's samples for their shared timestamps."""
        _, ia, ja = np.intersect1d(self.members[i].keys, self.members[j].keys, return_indices=True)
        return ia, ja

    def translated(self, offset) -> "TrajectoryWindow":
        off = np.asarray(offset, float)
        return TrajectoryWindow(
            self.window_id,
            self.start,
            self.end,
            {k: MemberSamples(m.t, m.s + off, m.v) for k, m in self.members.items()},
        )


def member_from_samples(t, xy) -> MemberSamples:
    """Velocities by central differences, one-sided at the ends."""
    t = np.asarray(t, float)
    xy = np.asarray(xy, float).reshape(-1, 2)
    if len(t) < 2:
        raise ValueError("need at least two samples to estimate velocity")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample timestamps must strictly increase")
    v = np.column_stack([np.gradient(xy[:, 0], t), np.gradient(xy[:, 1], t)])
    return MemberSamples(t, xy, v)


def build_windows(
    tracks: Mapping[int, np.ndarray],
    window_seconds: float = 10.0,
    stride_seconds: float | None = None,
    origin: float = 0.0,
) -> list[TrajectoryWindow]:
    """Slice world trajectories ``{id: array[(t, x, y), ...]}`` into windows.

    Windows are half-open ``[start, start + window)`` except the last, which
    also takes a sample sitting exactly on its end. Members need at least two
    samples inside a window.
    """
    if not window_seconds > 0:
        raise ValueError("window_seconds must be positive")
    stride = window_seconds if stride_seconds is None else stride_seconds
    if not 0 < stride <= window_seconds:
        raise ValueError("stride must be in (0, window_seconds]")
    arrays = {k: np.asarray(v, float).reshape(-1, 3) for k, v in tracks.items()}
    arrays = {k: a[np.argsort(a[:, 0], kind="stable")] for k, a in arrays.items() if len(a)}
    if not arrays:
        return []
    t_end = max(a[-1, 0] for a in arrays.values())
    span = t_end - origin
    n = max(1, math.ceil((span - window_seconds) / stride - 1e-9) + 1)

    windows = []
    for k in range(n):
        start = origin + k * stride
        end = start + window_seconds
        last = k == n - 1
        members = {}
        for tid, a in sorted(arrays.items()):
            t = a[:, 0]
            mask = (t >= start) & ((t <= end) if last else (t < end))
            if mask.sum() >= 2:
                members[tid] = member_from_samples(t[mask], a[mask, 1:3])
        windows.append(TrajectoryWindow(k, start, end, members))
    return windows
