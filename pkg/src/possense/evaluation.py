"""MOT-challenge tracking metrics and pairwise grouping precision/recall."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tracking.assignment import INFTY_COST, hungarian_assign, iou_matrix


class MetricUndefined(ArithmeticError):
    pass


# frame -> list of (identity, (left, top, width, height))
FrameBoxes = Mapping[int, Sequence[tuple[int, tuple[float, float, float, float]]]]


def read_mot_file(path: str | Path) -> dict[int, list[tuple[int, tuple[float, float, float, float]]]]:
    """Read a MOT-16 ground-truth or result file keeping identities."""
    out: dict[int, list] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) < 6:
            raise ValueError(f"{path}:{lineno}: expected at least 6 fields")
        frame, ident = int(float(parts[0])), int(float(parts[1]))
        bbox = tuple(float(p) for p in parts[2:6])
        out.setdefault(frame, []).append((ident, bbox))
    return out


@dataclass
class FrameMatch:
    matches: list[tuple[int, int, float]]  # (gt_id, pred_id, iou)
    fn: list[int]
    fp: list[int]


def match_frame(
    gt: Sequence[tuple[int, tuple]],
    pred: Sequence[tuple[int, tuple]],
    iou_min: float = 0.5,
    previous: Mapping[int, int] | None = None,
) -> FrameMatch:
    """Match one frame's boxes, keeping still-valid earlier correspondences first.

    ``previous`` maps gt id to the pred id it was last matched with.
    """
    gt_ids = [g for g, _ in gt]
    pr_ids = [p for p, _ in pred]
    if not gt or not pred:
        return FrameMatch([], gt_ids, pr_ids)
    ious = iou_matrix([b for _, b in gt], [b for _, b in pred])
    matches = []
    used_g, used_p = set(), set()
    if previous:
        col = {p: c for c, p in enumerate(pr_ids)}
        for r, g in enumerate(gt_ids):
            p = previous.get(g)
            if p is None or p not in col or col[p] in used_p:
                continue
            c = col[p]
            if ious[r, c] >= iou_min:
                matches.append((g, p, float(ious[r, c])))
                used_g.add(r)
                used_p.add(c)
    rows = [r for r in range(len(gt_ids)) if r not in used_g]
    cols = [c for c in range(len(pr_ids)) if c not in used_p]
    if rows and cols:
        sub = ious[np.ix_(rows, cols)]
        cost = np.where(sub >= iou_min, 1.0 - sub, INFTY_COST)
        for r, c in hungarian_assign(cost).matches:
            matches.append((gt_ids[rows[r]], pr_ids[cols[c]], float(sub[r, c])))
            used_g.add(rows[r])
            used_p.add(cols[c])
    return FrameMatch(
        matches,
        [g for r, g in enumerate(gt_ids) if r not in used_g],
        [p for c, p in enumerate(pr_ids) if c not in used_p],
    )


def mota(fn: int, fp: int, ids: int, gt_total: int) -> float:
    if gt_total <= 0:
        raise MetricUndefined("MOTA is undefined without ground-truth objects")
    return 1.0 - (fn + fp + ids) / gt_total


def motp(match_ious: Sequence[float]) -> float:
    """Mean IoU over all matches (higher is better)."""
    if len(match_ious) == 0:
        raise MetricUndefined("MOTP is undefined without matches")
    return float(np.mean(match_ious))


def track_coverage(gt_frame_counts: Mapping[int, int], matched_counts: Mapping[int, int]) -> tuple[int, int, int]:
    mt = pt = ml = 0
    for gid, total in gt_frame_counts.items():
        ratio = matched_counts.get(gid, 0) / total if total else 0.0
        if ratio >= 0.8:
            mt += 1
        elif ratio <= 0.2:
            ml += 1
        else:
            pt += 1
    return mt, pt, ml


def id_switches(correspondences: Iterable[Iterable[tuple[int, int]]]) -> int:
    """Count switches in a per-frame sequence of (gt_id, pred_id) matches."""
    last: dict[int, int] = {}
    switches = 0
    for frame_matches in correspondences:
        for g, p in frame_matches:
            if g in last and last[g] != p:
                switches += 1
            last[g] = p
    return switches


@dataclass
class MotReport:
    MOTA: float
    MOTP: float
    Prcn: float
    Rcll: float
    GT: int
    MT: int
    PT: int
    ML: int
    IDs: int
    id_count: int
    FP: int = 0
    FN: int = 0
    n_gt_boxes: int = 0

    COLUMNS = ("MOTA", "MOTP", "Prcn", "Rcll", "GT", "MT", "PT", "ML", "IDs", "id_count")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}

    def table(self) -> str:
        head = ["MOTA", "MOTP", "Prcn", "Rcll", "GT", "MT", "PT", "ML", "IDs", "ID Ct."]
        vals = [
            *(f"{100 * getattr(self, k):.1f}%" if not math.isnan(getattr(self, k)) else "n/a" for k in ("MOTA", "MOTP", "Prcn", "Rcll")),
            *(str(getattr(self, k)) for k in ("GT", "MT", "PT", "ML", "IDs", "id_count")),
        ]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        fmt = lambda row: "  ".join(s.rjust(w) for s, w in zip(row, widths))
        return fmt(head) + "\n" + fmt(vals) + "\n"


def evaluate_mot(gt: FrameBoxes, pred: FrameBoxes, iou_min: float = 0.5) -> MotReport:
    last: dict[int, int] = {}
    fn = fp = ids = n_gt = n_pred = 0
    ious: list[float] = []
    gt_counts: dict[int, int] = {}
    matched: dict[int, int] = {}
    for frame in sorted(set(gt) | set(pred)):
        g, p = gt.get(frame, []), pred.get(frame, [])
        for gid, _ in g:
            gt_counts[gid] = gt_counts.get(gid, 0) + 1
        fm = match_frame(g, p, iou_min, last)
        for gid, pid, v in fm.matches:
            if gid in last and last[gid] != pid:
                ids += 1
            last[gid] = pid
            matched[gid] = matched.get(gid, 0) + 1
            ious.append(v)
        fn += len(fm.fn)
        fp += len(fm.fp)
        n_gt += len(g)
        n_pred += len(p)
    mt, pt, ml = track_coverage(gt_counts, matched)
    tp = len(ious)
    pred_ids = {pid for boxes in pred.values() for pid, _ in boxes}
    return MotReport(
        MOTA=mota(fn, fp, ids, n_gt),
        MOTP=motp(ious) if ious else float("nan"),
        Prcn=tp / n_pred if n_pred else float("nan"),
        Rcll=tp / n_gt if n_gt else float("nan"),
        GT=len(gt_counts),
        MT=mt,
        PT=pt,
        ML=ml,
        IDs=ids,
        id_count=len(pred_ids),
        FP=fp,
        FN=fn,
        n_gt_boxes=n_gt,
    )


def write_mot_report(report: MotReport, csv_path: str | Path, table_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(MotReport.COLUMNS))
        w.writeheader()
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in report.as_row().items()})
    if table_path is not None:
        Path(table_path).write_text(report.table())


# --------------------------------------------------------------------------
# grouping


@dataclass
class GroupReport:
    precision: float | None
    recall: float | None
    f1: float | None
    window_size_s: float | None = None
    true_pairs: int = 0
    pred_pairs: int = 0
    gt_pairs: int = 0


def co_member_pairs(partition: Iterable[Iterable[int]]) -> set[tuple[int, int]]:
    pairs = set()
    for group in partition:
        for a, b in itertools.combinations(sorted(group), 2):
            pairs.add((a, b))
    return pairs


def _prf(tp: int, n_pred: int, n_gt: int, window_size_s=None) -> GroupReport:
    precision = tp / n_pred if n_pred else None
    recall = tp / n_gt if n_gt else None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    else:
        f1 = None
    return GroupReport(precision, recall, f1, window_size_s, tp, n_pred, n_gt)


def grouping_prf(gt_partition, pred_partition, window_size_s: float | None = None) -> GroupReport:
    """Pairwise precision/recall/F1 over unordered co-member pairs.

    Undefined ratios (no predicted or no true pairs) are reported as None.
    """
    gt_members = {m for g in gt_partition for m in g}
    pred_members = {m for g in pred_partition for m in g}
    if gt_members != pred_members:
        raise ValueError("partitions must cover the same member universe")
    gt_pairs = co_member_pairs(gt_partition)
    pred_pairs = co_member_pairs(pred_partition)
    return _prf(len(gt_pairs & pred_pairs), len(pred_pairs), len(gt_pairs), window_size_s)


def grouping_prf_pooled(pairs: Iterable[tuple[Iterable, Iterable]], window_size_s: float | None = None) -> GroupReport:
    """Micro-averaged pairwise scores over several (gt, pred) window partitions."""
    tp = n_pred = n_gt = 0
    for gt_part, pred_part in pairs:
        r = grouping_prf(gt_part, pred_part)
        tp += r.true_pairs
        n_pred += r.pred_pairs
        n_gt += r.gt_pairs
    return _prf(tp, n_pred, n_gt, window_size_s)


def write_group_report(report: GroupReport, csv_path: str | Path) -> None:
    row = asdict(report)
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in row.items()})
