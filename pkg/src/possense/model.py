"""Shared domain types and detection-file ingestion."""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

APPEARANCE_DIM = 128


class DetectionFormatError(ValueError):
    """Raised when a detection file or its appearance sidecar is unusable."""


class ClassLabel(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    SCOOTER = "scooter"
    SKATER = "skater"
    SITTER = "sitter"
    PEOPLE_OTHER = "people_other"
    NON_PERSON = "non_person"

    @classmethod
    def parse(cls, value: str) -> "ClassLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            log.warning("unknown class label %r mapped to people_other", value)
            return cls.PEOPLE_OTHER


PERSON_CLASSES = frozenset(c for c in ClassLabel if c is not ClassLabel.NON_PERSON)


def class_is_person(label: ClassLabel | str) -> bool:
    if not isinstance(label, ClassLabel):
        label = ClassLabel(label)
    return label in PERSON_CLASSES


@dataclass(frozen=True)
class Detection:
    """One per-frame observation from the upstream detector."""

    frame_index: int
    bbox: tuple[float, float, float, float]  # left, top, width, height
    confidence: float = 1.0
    class_label: ClassLabel = ClassLabel.PEDESTRIAN
    contour: Optional[tuple[tuple[float, float], ...]] = None
    appearance: Optional[np.ndarray] = field(default=None, compare=False)
    clamped: bool = False

    def __post_init__(self):
        if self.frame_index < 1:
            raise ValueError(f"frame_index must be >= 1, got {self.frame_index}")
        w, h = self.bbox[2], self.bbox[3]
        if not (w > 0 and h > 0):
            raise ValueError(f"bbox width/height must be positive, got {self.bbox}")

    @property
    def left(self) -> float:
        return self.bbox[0]

    @property
    def top(self) -> float:
        return self.bbox[1]

    @property
    def width(self) -> float:
        return self.bbox[2]

    @property
    def height(self) -> float:
        return self.bbox[3]

    def to_xyah(self) -> np.ndarray:
        """Measurement vector (center x, center y, aspect w/h, height)."""
        l, t, w, h = self.bbox
        return np.array([l + w / 2.0, t + h / 2.0, w / h, h], dtype=float)


@dataclass(frozen=True)
class WorldPoint:
    X: float
    Y: float
    Z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.X, self.Y, self.Z)):
            raise ValueError("world point components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z], dtype=float)


@dataclass(frozen=True)
class FrameClock:
    fps: float = 7.0
    n_skip: int = 1

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if self.n_skip < 1:
            raise ValueError("n_skip must be >= 1")

    @property
    def step_seconds(self) -> float:
        return self.n_skip / self.fps

    def time_of(self, frame_index: int) -> float:
        """Seconds since frame 1."""
        return (frame_index - 1) / self.fps


def normalize(vec: Sequence[float]) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


# --------------------------------------------------------------------------
# detection files


@dataclass
class DetectionFile:
    """Parsed detections, sorted by (frame, left), plus ingestion issues."""

    detections: list[Detection]
    issues: list[str] = field(default_factory=list)

    @property
    def frames(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {}
        for det in self.detections:
            out.setdefault(det.frame_index, []).append(det)
        return out

    def __len__(self):
        return len(self.detections)


def _clamp_bbox(bbox, image_size):
    if image_size is None:
        return bbox, False
    W, H = image_size
    l, t, w, h = bbox
    x1, y1 = max(0.0, l), max(0.0, t)
    x2, y2 = min(float(W), l + w), min(float(H), t + h)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"bbox {bbox} lies outside the image extent")
    new = (x1, y1, x2 - x1, y2 - y1)
    return new, new != tuple(bbox)


def _clamp_conf(conf: float, lineno: int) -> float:
    if 0.0 <= conf <= 1.0:
        return conf
    if 1.0 < conf <= 100.0:
        log.warning("line %d: confidence %g looks like a percentage, rescaled", lineno, conf)
        return conf / 100.0
    clamped = min(1.0, max(0.0, conf))
    log.warning("line %d: confidence %g clamped to %g", lineno, conf, clamped)
    return clamped


def read_appearance_sidecar(path: str | Path) -> np.ndarray:
    """Little-endian float32 records of APPEARANCE_DIM values each."""
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise DetectionFormatError("appearance length mismatch: sidecar size is not a multiple of 4 bytes")
    flat = np.frombuffer(raw, dtype="<f4")
    if flat.size % APPEARANCE_DIM:
        raise DetectionFormatError(
            f"appearance length mismatch: {flat.size} values is not a multiple of {APPEARANCE_DIM}"
        )
    return flat.reshape(-1, APPEARANCE_DIM).astype(float)


def write_appearance_sidecar(path: str | Path, vectors: Iterable[np.ndarray]) -> None:
    rows = [np.asarray(v, dtype="<f4") for v in vectors]
    for v in rows:
        if v.shape != (APPEARANCE_DIM,):
            raise DetectionFormatError(f"appearance length mismatch: got {v.shape[0]}, expected {APPEARANCE_DIM}")
    data = np.stack(rows).astype("<f4").tobytes() if rows else b""
    Path(path).write_bytes(data)


def _parse_mot_line(line: str):
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < 7:
        raise ValueError(f"expected at least 7 comma-separated fields, got {len(parts)}")
    frame = int(float(parts[0]))
    bbox = tuple(float(p) for p in parts[2:6])
    conf = float(parts[6])
    return frame, bbox, conf, ClassLabel.PEDESTRIAN, None


def _parse_jsonl_line(line: str):
    rec = json.loads(line)
    frame = int(rec["frame"])
    bbox = tuple(float(v) for v in rec["bbox"])
    if len(bbox) != 4:
        raise ValueError("bbox must have 4 values")
    conf = float(rec.get("conf", 1.0))
    label = ClassLabel.parse(rec["class"]) if rec.get("class") is not None else ClassLabel.PEDESTRIAN
    contour = rec.get("contour")
    if contour is not None:
        contour = tuple((float(u), float(v)) for u, v in contour)
        if not contour:
            contour = None
    return frame, bbox, conf, label, contour


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".json", ".ndjson") else "mot"


def parse_detection_file(
    path: str | Path,
    format: str | None = None,
    sidecar: str | Path | None = None,
    image_size: tuple[int, int] | None = None,
) -> DetectionFile:
    """Read a MOT-16 style or JSON-lines detection file.

    Malformed records are skipped and listed in ``issues`` with their line
    numbers. Frame indices that go backwards, an unreadable file and a
    sidecar whose record count or vector length disagrees are hard errors.
    """
    path = Path(path)
    fmt = format or detect_format(path)
    if fmt not in ("mot", "jsonl"):
        raise ValueError(f"unknown detection format {fmt!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise DetectionFormatError(f"cannot read detection file {path}: {exc}") from exc

    parse_line = _parse_mot_line if fmt == "mot" else _parse_jsonl_line
    issues: list[str] = []
    records = []  # (ordinal, Detection)
    last_frame = 0
    ordinal = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            frame, bbox, conf, label, contour = parse_line(line)
        except (ValueError, KeyError, TypeError) as exc:
            issues.append(f"line {lineno}: {exc}")
            log.warning("line %d: malformed detection record skipped (%s)", lineno, exc)
            # the record still occupies a sidecar slot
            ordinal += 1
            continue
        if frame < last_frame:
            raise DetectionFormatError(
                f"line {lineno}: frame index {frame} after {last_frame} (non-monotone frame indices)"
            )
        last_frame = frame
        try:
            bbox_c, clamped = _clamp_bbox(bbox, image_size)
            det = Detection(
                frame_index=frame,
                bbox=bbox_c,
                confidence=_clamp_conf(conf, lineno),
                class_label=label,
                contour=contour,
                clamped=clamped,
            )
        except ValueError as exc:
            issues.append(f"line {lineno}: {exc}")
            log.warning("line %d: invalid detection skipped (%s)", lineno, exc)
            ordinal += 1
            continue
        if clamped:
            issues.append(f"line {lineno}: bbox clamped to image extent")
        records.append((ordinal, det))
        ordinal += 1

    if sidecar is not None:
        vectors = read_appearance_sidecar(sidecar)
        if vectors.shape[0] != ordinal:
            raise DetectionFormatError(
                f"appearance sidecar has {vectors.shape[0]} records, detection file has {ordinal}"
            )
        records = [
            (k, _with_appearance(det, vectors[k])) for k, det in records
        ]

    dets = [det for _, det in records]
    dets.sort(key=lambda d: (d.frame_index, d.left))
    return DetectionFile(dets, issues)


def _with_appearance(det: Detection, vec: np.ndarray) -> Detection:
    from dataclasses import replace

    return replace(det, appearance=normalize(vec))


def format_number(x: float) -> str:
    """Shortest text that round-trips; integral values lose the trailing .0."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_mot_line(frame: int, ident: int, bbox, conf: float) -> str:
    l, t, w, h = bbox
    fields = [str(frame), str(ident), *(format_number(v) for v in (l, t, w, h)), format_number(conf), "-1", "-1", "-1"]
    return ",".join(fields)


def write_detection_file(path: str | Path, detections: Sequence[Detection], format: str = "mot") -> None:
    lines = []
    for det in detections:
        if format == "mot":
            lines.append(format_mot_line(det.frame_index, -1, det.bbox, det.confidence))
        elif format == "jsonl":
            rec = {
                "frame": det.frame_index,
                "bbox": [float(v) for v in det.bbox],
                "class": det.class_label.value,
                "conf": float(det.confidence),
                "contour": [list(p) for p in det.contour] if det.contour else None,
            }
            lines.append(json.dumps(rec))
        else:
            raise ValueError(f"unknown detection format {format!r}")
    Path(path).write_text("".join(line + "\n" for line in lines))


@dataclass(frozen=True)
class WorldTrack:
    """Ground-plane trajectory of one identity with its image boxes."""

    track_id: int
    frames: np.ndarray  # (n,) int
    t: np.ndarray  # (n,) seconds
    xy: np.ndarray  # (n, 2) metres
    bboxes: Optional[np.ndarray] = None  # (n, 4) pixels
    class_label: ClassLabel = ClassLabel.PEDESTRIAN

    def __len__(self):
        return len(self.t)

    def samples(self) -> np.ndarray:
        """(n, 3) array of (t, x, y)."""
        return np.column_stack([self.t, self.xy])


WORLD_TRACK_HEADER = "frame,time,track_id,x,y,left,top,width,height,class"


def write_world_tracks(path: str | Path, tracks: Sequence[WorldTrack], header_comment: str | None = None) -> None:
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append(WORLD_TRACK_HEADER)
    rows = []
    for trk in tracks:
        for k in range(len(trk)):
            box = trk.bboxes[k] if trk.bboxes is not None else (float("nan"),) * 4
            rows.append((int(trk.frames[k]), trk.track_id, float(trk.t[k]), *trk.xy[k], *box, trk.class_label.value))
    rows.sort(key=lambda r: (r[0], r[1]))
    for f, tid, t, x, y, l, tp, w, h, cls in rows:
        lines.append(",".join([str(f), f"{t:.6f}", str(tid), f"{x:.6f}", f"{y:.6f}",
                               *(format_number(round(v, 6)) if math.isfinite(v) else "nan" for v in (l, tp, w, h)), cls]))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_world_tracks(path: str | Path) -> list[WorldTrack]:
    per: dict[int, list] = {}
    labels: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#") or line.startswith("frame,"):
            continue
        parts = line.split(",")
        if len(parts) < 5:
            raise DetectionFormatError(f"{path}:{lineno}: expected at least 5 fields")
        f, t, tid, x, y = int(parts[0]), float(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])
        box = tuple(float(v) for v in parts[5:9]) if len(parts) >= 9 else (float("nan"),) * 4
        per.setdefault(tid, []).append((f, t, x, y, *box))
        if len(parts) >= 10:
            labels[tid] = parts[9]
    out = []
    for tid in sorted(per):
        a = np.array(sorted(per[tid]), dtype=float)
        out.append(
            WorldTrack(
                tid,
                a[:, 0].astype(int),
                a[:, 1],
                a[:, 2:4],
                a[:, 4:8],
                ClassLabel.parse(labels[tid]) if tid in labels else ClassLabel.PEDESTRIAN,
            )
        )
    return out
