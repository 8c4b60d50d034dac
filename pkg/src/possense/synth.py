"""Deterministic scenario generator with planted groups and ground truth.

Randomness comes from numpy's PCG64 bit generator seeded with the
scenario seed, so a scenario reproduces byte-for-byte on any platform
with the same numpy stream.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grouping import build_windows
from .grouping.features import TAU_S_DEFAULT
from .mapping import CameraModel, camera_from_dict, camera_to_dict, look_at, project_points
from .model import (
    APPEARANCE_DIM,
    ClassLabel,
    Detection,
    format_mot_line,
    normalize,
    write_appearance_sidecar,
    write_detection_file,
)

log = logging.getLogger(__name__)

RNG_NAME = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def default_camera() -> CameraModel:
    """1280x720 camera 12 m above the ground, looking 20 m ahead."""
    R, t = look_at((0.0, 0.0, 12.0), (0.0, 20.0, 0.0))
    return CameraModel(1000.0, 1000.0, 640.0, 360.0, (0.0,) * 5, R, t, (1280, 720))


@dataclass
class Agent:
    agent_id: int
    waypoints: list[tuple[float, float]]
    speed: float = 1.3
    group_id: Optional[int] = None
    body_size: tuple[float, float] = (0.5, 1.7)
    start_time: float = 0.0
    end_time: Optional[float] = None
    mode: str = "once"  # once | pingpong (eased reversals at the path ends)
    lateral_offset: Optional[float] = None
    class_label: str = "pedestrian"


@dataclass
class Noise:
    pixel_sigma: float = 0.0
    dropout_prob: float = 0.0
    fp_rate: float = 0.0


@dataclass
class AppearanceSpec:
    jitter_sigma: float = 0.01


@dataclass
class Scenario:
    seed: int
    duration_s: float
    fps: float = 7.0
    camera: CameraModel = field(default_factory=default_camera)
    agents: list[Agent] = field(default_factory=list)
    noise: Noise = field(default_factory=Noise)
    appearance: AppearanceSpec = field(default_factory=AppearanceSpec)
    window_seconds: float = 10.0

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))


def scenario_from_dict(d: dict) -> Scenario:
    agents = []
    for a in d.get("agents", []):
        a = dict(a)
        a["waypoints"] = [tuple(map(float, p)) for p in a["waypoints"]]
        if "body_size" in a:
            a["body_size"] = tuple(map(float, a["body_size"]))
        agents.append(Agent(**a))
    return Scenario(
        seed=int(d["seed"]),
        duration_s=float(d["duration_s"]),
        fps=float(d.get("fps", 7.0)),
        camera=camera_from_dict(d["camera"]) if "camera" in d else default_camera(),
        agents=agents,
        noise=Noise(**d.get("noise", {})),
        appearance=AppearanceSpec(**d.get("appearance", {})),
        window_seconds=float(d.get("window_seconds", 10.0)),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "seed": sc.seed,
        "duration_s": sc.duration_s,
        "fps": sc.fps,
        "camera": camera_to_dict(sc.camera),
        "agents": [asdict(a) for a in sc.agents],
        "noise": asdict(sc.noise),
        "appearance": asdict(sc.appearance),
        "window_seconds": sc.window_seconds,
    }


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def demo_scenario() -> Scenario:
    text = resources.files("possense").joinpath("data/demo_scenario.json").read_text()
    return scenario_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# kinematics


def _polyline_point(waypoints: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Point at arclength s and the unit direction of its segment."""
    if len(waypoints) == 1:
        return waypoints[0].copy(), np.array([1.0, 0.0])
    seg = np.diff(waypoints, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.r_[0.0, np.cumsum(lengths)]
    s = min(max(s, 0.0), cum[-1])
    k = int(np.searchsorted(cum, s, side="right") - 1)
    k = min(k, len(seg) - 1)
    direction = seg[k] / lengths[k]
    return waypoints[k] + (s - cum[k]) * direction, direction


def _path_length(waypoints: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(waypoints, axis=0), axis=1))) if len(waypoints) > 1 else 0.0


def _group_layout(sc: Scenario, rng: np.random.Generator) -> dict[int, tuple[Agent, float]]:
    """agent_id -> (path-defining agent, lateral offset)."""
    layout = {}
    groups: dict[int, list[Agent]] = {}
    for a in sorted(sc.agents, key=lambda a: a.agent_id):
        if a.group_id is None:
            layout[a.agent_id] = (a, a.lateral_offset or 0.0)
        else:
            groups.setdefault(a.group_id, []).append(a)
    for gid in sorted(groups):
        members = groups[gid]
        leader = members[0]
        if all(m.lateral_offset is not None for m in members):
            offsets = [m.lateral_offset for m in members]
        else:
            gaps = rng.uniform(0.4, 1.2, size=len(members) - 1)
            pos = np.r_[0.0, np.cumsum(gaps)]
            offsets = list(pos - pos.mean())
        for m, off in zip(members, offsets):
            layout[m.agent_id] = (leader, float(off))
    return layout


def agent_position(leader: Agent, offset: float, t: float) -> Optional[np.ndarray]:
    """Ground position at time t, or None when the agent is not active."""
    if t < leader.start_time - 1e-9 or (leader.end_time is not None and t > leader.end_time + 1e-9):
        return None
    wp = np.asarray(leader.waypoints, float)
    L = _path_length(wp)
    s = leader.speed * (t - leader.start_time)
    if leader.mode == "pingpong" and L > 0:
        # back and forth with a cosine speed profile, so turnarounds are smooth
        phase = (s / L) % 2.0
        s = L * (1.0 - math.cos(math.pi * phase)) / 2.0
    elif s > L + 1e-9 and L > 0:
        return None
    p, d = _polyline_point(wp, s)
    normal = np.array([-d[1], d[0]])
    return p + offset * normal


# --------------------------------------------------------------------------
# generation


@dataclass
class SynthResult:
    scenario: Scenario
    world: dict[int, np.ndarray]  # agent_id -> (n, 4) frame, t, x, y (visible frames)
    world_all: dict[int, np.ndarray]  # including frames outside the image
    detections: list[Detection]
    detection_agents: list[Optional[int]]  # agent id per detection, None for false positives
    gt: dict[int, list[tuple[int, tuple[float, float, float, float]]]]
    group_windows: list[dict]
    excluded_agents: list[int]

    @property
    def groups(self) -> dict[int, Optional[int]]:
        return {a.agent_id: a.group_id for a in self.scenario.agents}


def _agent_bbox(cam: CameraModel, xy: np.ndarray, body: tuple[float, float]):
    foot = np.array([xy[0], xy[1], 0.0])
    head = np.array([xy[0], xy[1], body[1]])
    zc = (cam.R @ foot + cam.t)[2]
    if zc <= 0.1 or (cam.R @ head + cam.t)[2] <= 0.1:
        return None
    (uf, vf), (_, vh) = project_points(cam, np.vstack([foot, head]))
    h = vf - vh
    w = body[0] * cam.fx / zc
    if h <= 0:
        return None
    return (uf - w / 2.0, vf - h, w, h)


def _inside(bbox, image_size) -> bool:
    l, t, w, h = bbox
    W, H = image_size
    return l >= 0 and t >= 0 and l + w <= W and t + h <= H


def generate(sc: Scenario) -> SynthResult:
    rng = make_rng(sc.seed)
    cam = sc.camera
    layout = _group_layout(sc, rng)
    agents = sorted(sc.agents, key=lambda a: a.agent_id)
    latents = {a.agent_id: normalize(rng.normal(size=APPEARANCE_DIM)) for a in agents}

    world: dict[int, list] = {a.agent_id: [] for a in agents}
    world_all: dict[int, list] = {a.agent_id: [] for a in agents}
    dets: list[tuple[Detection, Optional[int]]] = []
    gt: dict[int, list] = {}
    W, H = cam.image_size
    for frame in range(1, sc.n_frames + 1):
        t = (frame - 1) / sc.fps
        for a in agents:
            leader, offset = layout[a.agent_id]
            xy = agent_position(leader, offset, t)
            # draw the per-observation noise unconditionally so streams stay aligned
            corner_noise = rng.normal(0.0, 1.0, size=4) * sc.noise.pixel_sigma
            drop = rng.random() < sc.noise.dropout_prob
            jitter = rng.normal(0.0, 1.0, size=APPEARANCE_DIM) * sc.appearance.jitter_sigma
            if xy is None:
                continue
            world_all[a.agent_id].append((frame, t, xy[0], xy[1]))
            bbox = _agent_bbox(cam, xy, a.body_size)
            if bbox is None or not _inside(bbox, cam.image_size):
                continue
            world[a.agent_id].append((frame, t, xy[0], xy[1]))
            gt.setdefault(frame, []).append((a.agent_id, bbox))
            if drop:
                continue
            l, tp, w, h = bbox
            x1, y1 = l + corner_noise[0], tp + corner_noise[1]
            x2, y2 = l + w + corner_noise[2], tp + h + corner_noise[3]
            x1, y1 = max(0.0, x1), max(0.0, y1)
            x2, y2 = min(float(W), x2), min(float(H), y2)
            if x2 - x1 <= 1 or y2 - y1 <= 1:
                continue
            det = Detection(
                frame,
                (x1, y1, x2 - x1, y2 - y1),
                0.9,
                ClassLabel.parse(a.class_label),
                appearance=normalize(latents[a.agent_id] + jitter),
            )
            dets.append((det, a.agent_id))
        n_fp = rng.poisson(sc.noise.fp_rate) if sc.noise.fp_rate > 0 else 0
        for _ in range(n_fp):
            h = rng.uniform(40, 160)
            w = h * rng.uniform(0.3, 0.5)
            l = rng.uniform(0, W - w)
            tp = rng.uniform(0, H - h)
            app = normalize(rng.normal(size=APPEARANCE_DIM))
            dets.append((Detection(frame, (l, tp, w, h), 0.5, ClassLabel.PEDESTRIAN, appearance=app), None))

    dets.sort(key=lambda da: (da[0].frame_index, da[0].left))
    excluded = [aid for aid, rows in world.items() if not rows]
    for aid in excluded:
        log.warning("agent %d is never inside the camera view; excluded from detections", aid)

    world_np = {aid: np.array(rows, float).reshape(-1, 4) for aid, rows in world.items() if rows}
    world_all_np = {aid: np.array(rows, float).reshape(-1, 4) for aid, rows in world_all.items() if rows}
    for frame in gt:
        gt[frame].sort(key=lambda r: r[0])
    group_windows = ground_truth_groups(world_np, {a.agent_id: a.group_id for a in agents}, sc.window_seconds)
    return SynthResult(
        sc,
        world_np,
        world_all_np,
        [d for d, _ in dets],
        [a for _, a in dets],
        gt,
        group_windows,
        excluded,
    )


def ground_truth_groups(world: dict[int, np.ndarray], group_of: dict[int, Optional[int]], window_seconds: float) -> list[dict]:
    """Planted partition per window, restricted to agents with >= 2 visible samples."""
    windows = build_windows({aid: rows[:, 1:4] for aid, rows in world.items()}, window_seconds)
    out = []
    for win in windows:
        buckets: dict = {}
        for aid in win.member_ids:
            gid = group_of.get(aid)
            key = ("g", gid) if gid is not None else ("s", aid)
            buckets.setdefault(key, []).append(aid)
        groups = sorted((sorted(v) for v in buckets.values()), key=lambda g: g[0])
        out.append({"window": win.window_id, "start": win.start, "end": win.end, "groups": groups})
    return out


def check_plantedness(result: SynthResult, tau_s: float = TAU_S_DEFAULT, min_share: float = 0.8) -> bool:
    """Each grouped agent is within tau_s of some group-mate for >= min_share of its active time."""
    groups: dict[int, list[int]] = {}
    for a in result.scenario.agents:
        if a.group_id is not None:
            groups.setdefault(a.group_id, []).append(a.agent_id)
    for members in groups.values():
        for aid in members:
            rows = result.world_all.get(aid)
            if rows is None:
                continue
            ok = 0
            for frame, _, x, y in rows:
                near = False
                for other in members:
                    if other == aid or other not in result.world_all:
                        continue
                    o = result.world_all[other]
                    hit = o[o[:, 0] == frame]
                    if len(hit) and math.hypot(hit[0, 2] - x, hit[0, 3] - y) <= tau_s:
                        near = True
                        break
                ok += near
            if ok < min_share * len(rows):
                return False
    return True


# --------------------------------------------------------------------------
# ID perturbation


def perturb_ids(gt: dict[int, list[tuple[int, tuple]]], k: int, seed: int = 0) -> dict[int, list[tuple[int, tuple]]]:
    """Copy of ``gt`` with exactly ``k`` planted identity relabelings.

    A relabeling at (id, frame) gives that identity a fresh id from that
    frame on (until the next relabeling of the same identity).
    """
    frames_of: dict[int, list[int]] = {}
    for frame in sorted(gt):
        for ident, _ in gt[frame]:
            frames_of.setdefault(ident, []).append(frame)
    boundaries = [(ident, f) for ident in sorted(frames_of) for f in frames_of[ident][1:]]
    if k > len(boundaries):
        raise ValueError(f"cannot plant {k} relabelings; only {len(boundaries)} track-frame boundaries exist")
    rng = make_rng(seed)
    chosen = sorted(boundaries[i] for i in rng.choice(len(boundaries), size=k, replace=False)) if k else []
    next_id = max(frames_of, default=0) + 1
    cuts: dict[int, list[tuple[int, int]]] = {}
    for ident, f in chosen:
        cuts.setdefault(ident, []).append((f, next_id))
        next_id += 1

    def label(ident: int, frame: int) -> int:
        current = ident
        for f, new in cuts.get(ident, []):
            if frame >= f:
                current = new
        return current

    return {frame: [(label(i, frame), b) for i, b in rows] for frame, rows in gt.items()}


# --------------------------------------------------------------------------
# scenario builders


def crossing_scenario(seed: int = 0, duration_s: float = 12.0, noise: Noise | None = None) -> Scenario:
    """Two pedestrians on an X-shaped crossing in front of the camera."""
    agents = [
        Agent(1, [(-7.0, 14.0), (7.0, 24.0)], speed=1.4),
        Agent(2, [(7.0, 14.0), (-7.0, 24.0)], speed=1.4),
    ]
    return Scenario(seed, duration_s, agents=agents, noise=noise or Noise())


_GROUP_COMBOS = [(2, 2, 2, 2), (3, 3, 2, 2), (3, 2, 2), (3, 3, 2), (3, 3, 3), (3, 3)]


def planted_scenario(
    seed: int,
    n_agents: int = 10,
    duration_s: float = 60.0,
    noise: Noise | None = None,
) -> Scenario:
    """Groups and singletons walking back and forth on well-separated paths.

    Entities (groups or singletons) use three depth-wise columns 9 m apart,
    two per column 13 m apart in depth and moving in lockstep, so members of
    different entities never come within 3 * tau_s of each other.
    """
    rng = make_rng(seed + 1_000_003)
    combos = [c for c in _GROUP_COMBOS if sum(c) <= n_agents and len(c) + n_agents - sum(c) <= 6]
    if not combos:
        raise ValueError(f"cannot lay out {n_agents} agents")
    sizes = list(combos[int(rng.integers(len(combos)))])
    sizes += [1] * (n_agents - sum(sizes))
    rng.shuffle(sizes)
    columns = [-9.0, 0.0, 9.0]
    agents: list[Agent] = []
    next_id = 1
    for e, size in enumerate(sizes):
        col, slot = e % 3, e // 3
        x = columns[col] + rng.uniform(-0.5, 0.5)
        y0 = 13.0 + 13.0 * slot
        length = 9.0
        speed = float(rng.uniform(1.0, 1.4)) if slot == 0 else None
        waypoints = [(x, y0), (x, y0 + length)]
        gid = e + 1 if size > 1 else None
        for _ in range(size):
            agents.append(Agent(next_id, waypoints, speed=speed or 0.0, group_id=gid, mode="pingpong"))
            next_id += 1
    # column mates move in lockstep with the front entity
    front_speed: dict[float, float] = {}
    for a in agents:
        col = round(a.waypoints[0][0] / 9.0)
        if a.speed:
            front_speed[col] = a.speed
    for a in agents:
        if not a.speed:
            a.speed = front_speed[round(a.waypoints[0][0] / 9.0)]
    return Scenario(seed, duration_s, agents=agents, noise=noise or Noise())


def fig7_scenario(seed: int = 0, noise: Noise | None = None) -> Scenario:
    """Side-by-side pair walking away, a standing singleton, two joggers coming back.

    The pair is 1.1 m wide; the joggers pass 1.2 m from its nearer member.
    """
    agents = [
        Agent(1, [(0.0, 12.0), (0.0, 40.0)], speed=1.3, group_id=1, lateral_offset=0.55),
        Agent(2, [(0.0, 12.0), (0.0, 40.0)], speed=1.3, group_id=1, lateral_offset=-0.55),
        Agent(3, [(6.0, 20.0)], speed=0.0),
        Agent(4, [(-2.2, 35.0), (-2.2, 10.0)], speed=3.0, group_id=3, start_time=3.0, lateral_offset=0.45),
        Agent(10, [(-2.2, 35.0), (-2.2, 10.0)], speed=3.0, group_id=3, start_time=3.0, lateral_offset=-0.45),
    ]
    return Scenario(seed, 20.0, agents=agents, noise=noise or Noise())


# --------------------------------------------------------------------------
# files


def write_bundle(result: SynthResult, outdir: str | Path) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    header = f"possense synth seed={sc.seed} rng={RNG_NAME}"
    paths = {
        "scenario": out / "scenario.json",
        "world": out / "world_truth.csv",
        "detections": out / "det.txt",
        "appearance": out / "appearance.bin",
        "gt": out / "gt.txt",
        "groups": out / "groups_gt.jsonl",
        "calibration": out / "calibration.json",
    }
    paths["scenario"].write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")
    paths["calibration"].write_text(json.dumps(camera_to_dict(sc.camera), indent=2) + "\n")
    group_of = {a.agent_id: a.group_id for a in sc.agents}
    lines = [f"# {header}", "frame,time,agent_id,group_id,x,y"]
    rows = []
    for aid, arr in result.world.items():
        for frame, t, x, y in arr:
            rows.append((int(frame), aid, t, x, y))
    rows.sort()
    for frame, aid, t, x, y in rows:
        gid = group_of.get(aid)
        lines.append(f"{frame},{t:.6f},{aid},{'' if gid is None else gid},{x:.9f},{y:.9f}")
    paths["world"].write_text("\n".join(lines) + "\n")
    write_detection_file(paths["detections"], result.detections, "mot")
    write_appearance_sidecar(paths["appearance"], [d.appearance for d in result.detections])
    gt_lines = []
    for frame in sorted(result.gt):
        for ident, bbox in result.gt[frame]:
            gt_lines.append(format_mot_line(frame, ident, bbox, 1))
    paths["gt"].write_text("".join(line + "\n" for line in gt_lines))
    group_lines = [f"# {header}"] + [json.dumps({"window": g["window"], "groups": g["groups"]}) for g in result.group_windows]
    paths["groups"].write_text("\n".join(group_lines) + "\n")
    return paths


def read_group_file(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            out.append(json.loads(line))
    return out


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
