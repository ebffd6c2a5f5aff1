"""Detection and tracking metrics on BEV center points.

Matching is Euclidean in world meters with an inclusive radius: a pair at
exactly distance r counts.  Per frame, pairs carried over from the
previous frame are kept first when still within r (the CLEAR continuity
rule); the remaining points get a minimum-total-distance assignment that
maximizes the number of matches within r.

Detection metrics (default r = 0.5 m): MODA = 1 - (FN+FP)/GT, MODP = mean
of (1 - dist/r) over matches, precision, recall.  Tracking metrics
(default r = 1.0 m): MOTA = 1 - (FN+FP+IDSW)/GT with identity switches
counted when a ground-truth id's matched hypothesis id changes between its
consecutive matched frames; MOTP = mean match distance in meters; IDF1
from one global trajectory-level assignment maximizing identity overlap;
MT/ML = fractions of ground-truth trajectories covered >= 80% / <= 20%.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import FormatError, NoGroundTruth

_FORBIDDEN = 1e9


@dataclass(frozen=True)
class FrameAnnotations:
    """Ground-truth and hypothesis point sets of one frame."""

    frame: int
    gt_xy: np.ndarray                     # (n, 2) meters
    hyp_xy: np.ndarray                    # (m, 2) meters
    gt_ids: np.ndarray | None = None      # (n,) int, unique per frame
    hyp_ids: np.ndarray | None = None     # (m,) int, unique per frame
    hyp_scores: np.ndarray | None = None  # (m,) float

    def __post_init__(self):
        gt = np.asarray(self.gt_xy, dtype=np.float64).reshape(-1, 2)
        hyp = np.asarray(self.hyp_xy, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "gt_xy", gt)
        object.__setattr__(self, "hyp_xy", hyp)
        for name, ids, n in (("gt_ids", self.gt_ids, len(gt)), ("hyp_ids", self.hyp_ids, len(hyp))):
            if ids is None:
                continue
            arr = np.asarray(ids, dtype=np.int64).reshape(-1)
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} points")
            if len(np.unique(arr)) != len(arr):
                raise ValueError(f"{name} must be unique within frame {self.frame}")
            object.__setattr__(self, name, arr)
        if self.hyp_scores is not None:
            object.__setattr__(
                self, "hyp_scores", np.asarray(self.hyp_scores, dtype=np.float64).reshape(-1)
            )


@dataclass
class MatchResult:
    """Matched (gt_index, hyp_index, distance) triples plus error counts."""

    pairs: list[tuple[int, int, float]]
    fp: int
    fn: int
    idsw: int = 0


def _distance_matrix(gt_xy: np.ndarray, hyp_xy: np.ndarray) -> np.ndarray:
    diff = gt_xy[:, None, :] - hyp_xy[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def match_frame(
    gt: FrameAnnotations | np.ndarray,
    hyp: np.ndarray | None = None,
    r: float = 0.5,
    carry: dict[int, int] | None = None,
) -> MatchResult:
    """Match one frame's points within radius r (inclusive).

    `carry` maps gt id -> hyp id pairs from the previous frame; such pairs
    are kept first whenever both ids are present and still within r.  The
    rest get a max-cardinality, minimum-total-distance assignment.
    """
    if isinstance(gt, FrameAnnotations):
        ann = gt
        gt_xy, hyp_xy = ann.gt_xy, ann.hyp_xy
        gt_ids, hyp_ids = ann.gt_ids, ann.hyp_ids
    else:
        gt_xy = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
        hyp_xy = np.asarray(hyp, dtype=np.float64).reshape(-1, 2)
        gt_ids = hyp_ids = None
    if r <= 0:
        raise ValueError(f"radius must be > 0, got {r}")
    n, m = len(gt_xy), len(hyp_xy)
    pairs: list[tuple[int, int, float]] = []
    free_gt = list(range(n))
    free_hyp = list(range(m))
    if carry and gt_ids is not None and hyp_ids is not None:
        gt_pos = {int(g): i for i, g in enumerate(gt_ids)}
        hyp_pos = {int(h): i for i, h in enumerate(hyp_ids)}
        for g_id, h_id in carry.items():
            gi = gt_pos.get(g_id)
            hi = hyp_pos.get(h_id)
            if gi is None or hi is None:
                continue
            dist = float(np.linalg.norm(gt_xy[gi] - hyp_xy[hi]))
            if dist <= r:
                pairs.append((gi, hi, dist))
                free_gt.remove(gi)
                free_hyp.remove(hi)
    if free_gt and free_hyp:
        dmat = _distance_matrix(gt_xy[free_gt], hyp_xy[free_hyp])
        cost = np.where(dmat <= r, dmat, _FORBIDDEN)
        rows, cols = linear_sum_assignment(cost)
        for ri, ci in zip(rows, cols):
            if dmat[ri, ci] <= r:
                pairs.append((free_gt[ri], free_hyp[ci], float(dmat[ri, ci])))
    matched_gt = {gi for gi, _, _ in pairs}
    matched_hyp = {hi for _, hi, _ in pairs}
    return MatchResult(
        pairs=sorted(pairs),
        fp=m - len(matched_hyp),
        fn=n - len(matched_gt),
    )


@dataclass(frozen=True)
class DetectionReport:
    moda: float
    modp: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    gt: int

    def to_dict(self) -> dict:
        return {
            "mode": "detection",
            "moda": self.moda, "modp": self.modp,
            "precision": self.precision, "recall": self.recall,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "gt": self.gt,
        }


@dataclass(frozen=True)
class TrackingReport:
    mota: float
    motp: float
    idf1: float
    mt: float
    ml: float
    tp: int
    fp: int
    fn: int
    idsw: int
    gt: int

    def to_dict(self) -> dict:
        return {
            "mode": "tracking",
            "mota": self.mota, "motp": self.motp, "idf1": self.idf1,
            "mt": self.mt, "ml": self.ml,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "idsw": self.idsw, "gt": self.gt,
        }


def detection_metrics(frames: Sequence[FrameAnnotations], r: float = 0.5) -> DetectionReport:
    """Aggregate per-frame matching (no identity carry-over) into MODA/MODP."""
    if not frames:
        raise ValueError("need at least one frame")
    tp = fp = fn = gt_total = 0
    quality = 0.0
    for ann in frames:
        gt_total += len(ann.gt_xy)
        result = match_frame(ann, r=r)
        tp += len(result.pairs)
        fp += result.fp
        fn += result.fn
        quality += sum(1.0 - dist / r for _, _, dist in result.pairs)
    if gt_total == 0:
        raise NoGroundTruth("detection metrics undefined with zero ground-truth points")
    return DetectionReport(
        moda=1.0 - (fn + fp) / gt_total,
        modp=quality / tp if tp else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / gt_total,
        tp=tp, fp=fp, fn=fn, gt=gt_total,
    )


def _idf1(frames: Sequence[FrameAnnotations], r: float) -> float:
    """Identity F1 from one global trajectory-to-trajectory assignment."""
    gt_traj: dict[int, dict[int, np.ndarray]] = {}
    hyp_traj: dict[int, dict[int, np.ndarray]] = {}
    for ann in frames:
        for gid, xy in zip(ann.gt_ids, ann.gt_xy):
            gt_traj.setdefault(int(gid), {})[ann.frame] = xy
        for hid, xy in zip(ann.hyp_ids, ann.hyp_xy):
            hyp_traj.setdefault(int(hid), {})[ann.frame] = xy
    total_gt = sum(len(t) for t in gt_traj.values())
    total_hyp = sum(len(t) for t in hyp_traj.values())
    if not gt_traj or not hyp_traj:
        return 0.0
    gids = sorted(gt_traj)
    hids = sorted(hyp_traj)
    overlap = np.zeros((len(gids), len(hids)))
    for a, gid in enumerate(gids):
        g = gt_traj[gid]
        for b, hid in enumerate(hids):
            h = hyp_traj[hid]
            count = 0
            for frame, gxy in g.items():
                hxy = h.get(frame)
                if hxy is not None and float(np.linalg.norm(gxy - hxy)) <= r:
                    count += 1
            overlap[a, b] = count
    size = max(len(gids), len(hids))
    padded = np.zeros((size, size))
    padded[: len(gids), : len(hids)] = overlap
    rows, cols = linear_sum_assignment(-padded)
    idtp = float(padded[rows, cols].sum())
    idfn = total_gt - idtp
    idfp = total_hyp - idtp
    denom = 2.0 * idtp + idfn + idfp
    return 2.0 * idtp / denom if denom else 0.0


def tracking_metrics(frames: Sequence[FrameAnnotations], r: float = 1.0) -> TrackingReport:
    """CLEAR procedure with carry-over matching, plus IDF1 and MT/ML."""
    if not frames:
        raise ValueError("need at least one frame")
    for ann in frames:
        if ann.gt_ids is None or ann.hyp_ids is None:
            raise ValueError(f"frame {ann.frame}: tracking metrics need ids on both sides")
    ordered = sorted(frames, key=lambda a: a.frame)
    tp = fp = fn = idsw = gt_total = 0
    dist_sum = 0.0
    carry: dict[int, int] = {}
    last_hyp_for_gt: dict[int, int] = {}
    gt_frames: dict[int, int] = {}
    gt_matched: dict[int, int] = {}
    for ann in ordered:
        gt_total += len(ann.gt_xy)
        for gid in ann.gt_ids:
            gt_frames[int(gid)] = gt_frames.get(int(gid), 0) + 1
        result = match_frame(ann, r=r, carry=carry)
        tp += len(result.pairs)
        fp += result.fp
        fn += result.fn
        carry = {}
        for gi, hi, dist in result.pairs:
            gid = int(ann.gt_ids[gi])
            hid = int(ann.hyp_ids[hi])
            dist_sum += dist
            gt_matched[gid] = gt_matched.get(gid, 0) + 1
            prev = last_hyp_for_gt.get(gid)
            if prev is not None and prev != hid:
                idsw += 1
            last_hyp_for_gt[gid] = hid
            carry[gid] = hid
    if gt_total == 0:
        raise NoGroundTruth("tracking metrics undefined with zero ground-truth points")
    coverage = [gt_matched.get(gid, 0) / n for gid, n in gt_frames.items()]
    n_traj = len(coverage)
    return TrackingReport(
        mota=1.0 - (fn + fp + idsw) / gt_total,
        motp=dist_sum / tp if tp else 0.0,
        idf1=_idf1(ordered, r),
        mt=sum(c >= 0.8 for c in coverage) / n_traj if n_traj else 0.0,
        ml=sum(c <= 0.2 for c in coverage) / n_traj if n_traj else 0.0,
        tp=tp, fp=fp, fn=fn, idsw=idsw, gt=gt_total,
    )


def _parse_rows(path: str | Path, expected_header: list[str]) -> list[list[float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise FormatError(
                f"{path}: line 1: expected header {','.join(expected_header)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise FormatError(f"{path}: line {lineno}: expected "
                                  f"{len(expected_header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: malformed row {row}") from exc
    return rows


def _positions_f32(values: list[float]) -> np.ndarray:
    # Positions are serialized with 9 significant digits; routing the parse
    # through float32 restores the writer's values bit for bit.
    return np.float64(np.float32(np.asarray(values, dtype=np.float64)))


def load_points_csv(
    gt_path: str | Path, hyp_path: str | Path
) -> list[FrameAnnotations]:
    """Load `frame,id,x,y` ground truth and `frame,id,x,y,score` hypotheses."""
    gt_rows = _parse_rows(gt_path, ["frame", "id", "x", "y"])
    hyp_rows = _parse_rows(hyp_path, ["frame", "id", "x", "y", "score"])
    per_frame: dict[int, dict[str, list]] = {}

    def slot(frame: int) -> dict[str, list]:
        return per_frame.setdefault(
            frame, {"gt_ids": [], "gt_xy": [], "hyp_ids": [], "hyp_xy": [], "scores": []}
        )

    for frame, oid, x, y in gt_rows:
        s = slot(int(frame))
        s["gt_ids"].append(int(oid))
        s["gt_xy"].append([x, y])
    for frame, oid, x, y, score in hyp_rows:
        s = slot(int(frame))
        s["hyp_ids"].append(int(oid))
        s["hyp_xy"].append([x, y])
        s["scores"].append(score)
    out = []
    for frame in sorted(per_frame):
        s = per_frame[frame]
        out.append(
            FrameAnnotations(
                frame=frame,
                gt_xy=_positions_f32(s["gt_xy"]).reshape(-1, 2),
                hyp_xy=_positions_f32(s["hyp_xy"]).reshape(-1, 2),
                gt_ids=np.asarray(s["gt_ids"], dtype=np.int64),
                hyp_ids=np.asarray(s["hyp_ids"], dtype=np.int64),
                hyp_scores=np.asarray(s["scores"], dtype=np.float64),
            )
        )
    return out


def write_report_json(report, path: str | Path, provenance: dict | None = None) -> None:
    """Serialize a report (plus optional provenance block) with stable keys."""
    payload = report.to_dict()
    if provenance:
        payload["provenance"] = provenance
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
