"""Heatmap encoding/decoding, offset and motion decoding, training losses.

Field layout follows the CenterNet family: the center heatmap is a
(Hg, Wg) float32 array in [0, 1]; offset and motion fields are
(2, Hg, Wg) with channel 0 = x displacement and channel 1 = y
displacement, both in cell units.  The motion field points from a cell to
the object's position in the previous frame.

The three losses are pure functions returning (value, d/d_pred); every
gradient is validated against central finite differences in the tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bev import OUT_OF_GRID, BevGrid, cell_to_world, world_to_cell
from .errors import EmptyMask, FormatError, ShapeMismatch

_CLAMP = 1e-6


@dataclass(frozen=True)
class Detection:
    """Decoded ground-plane detection with its predicted previous position."""

    x: float
    y: float
    score: float
    prev_x: float
    prev_y: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def prev_position(self) -> np.ndarray:
        return np.array([self.prev_x, self.prev_y])


def encode_heatmap(
    centers: Iterable[Sequence[float]], grid: BevGrid, sigma: float = 2.0
) -> tuple[np.ndarray, int]:
    """Splat a unit-peak Gaussian (std `sigma` cells) around each center cell.

    Overlapping responses combine by elementwise max.  Centers outside the
    grid are skipped; their count is the second return value.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    heat = np.zeros((grid.height, grid.width), dtype=np.float32)
    radius = int(math.ceil(3.0 * sigma))
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    patch = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    skipped = 0
    for center in centers:
        cell = world_to_cell(grid, center)
        if cell is OUT_OF_GRID:
            skipped += 1
            continue
        i0, j0 = cell
        top = max(0, i0 - radius)
        bottom = min(grid.height, i0 + radius + 1)
        left = max(0, j0 - radius)
        right = min(grid.width, j0 + radius + 1)
        window = patch[
            top - (i0 - radius): bottom - (i0 - radius),
            left - (j0 - radius): right - (j0 - radius),
        ].astype(np.float32)
        np.maximum(heat[top:bottom, left:right], window, out=heat[top:bottom, left:right])
    return heat, skipped


def _local_maxima(heat: np.ndarray) -> np.ndarray:
    """3x3 local maxima with ties broken toward the smaller (i, j)."""
    padded = np.full((heat.shape[0] + 2, heat.shape[1] + 2), -np.inf)
    padded[1:-1, 1:-1] = heat
    center = padded[1:-1, 1:-1]
    # Neighbors preceding (i, j) in row-major order must be strictly smaller
    # for (i, j) to win a tie; later neighbors only need to not exceed it.
    earlier = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
    later = [(0, 1), (1, -1), (1, 0), (1, 1)]
    keep = np.ones(heat.shape, dtype=bool)
    for di, dj in earlier:
        keep &= center > padded[1 + di: 1 + di + heat.shape[0], 1 + dj: 1 + dj + heat.shape[1]]
    for di, dj in later:
        keep &= center >= padded[1 + di: 1 + di + heat.shape[0], 1 + dj: 1 + dj + heat.shape[1]]
    return keep


def decode_detections(
    heatmap: np.ndarray,
    offsets: np.ndarray,
    motion: np.ndarray,
    grid: BevGrid,
    threshold: float = 0.4,
    max_k: int = 200,
) -> list[Detection]:
    """Peak-pick the heatmap and decode world positions.

    Keeps 3x3 local maxima with score >= threshold, the strongest `max_k`
    of them; position = cell center + offset * cell_size, previous
    position = position + motion * cell_size.
    """
    heat = np.asarray(heatmap, dtype=np.float64)
    if heat.shape != (grid.height, grid.width):
        raise ShapeMismatch(f"heatmap {heat.shape} does not match grid "
                            f"({grid.height}, {grid.width})")
    for name, field in (("offsets", offsets), ("motion", motion)):
        if np.asarray(field).shape != (2, grid.height, grid.width):
            raise ShapeMismatch(f"{name} must be (2, {grid.height}, {grid.width})")
    keep = _local_maxima(heat) & (heat >= threshold)
    ii, jj = np.nonzero(keep)
    if ii.size == 0:
        return []
    scores = heat[ii, jj]
    order = np.lexsort((jj, ii, -scores))[:max_k]
    out = []
    for idx in order:
        i, j = int(ii[idx]), int(jj[idx])
        cx, cy, _ = cell_to_world(grid, i, j)
        x = cx + float(offsets[0, i, j]) * grid.cell_size
        y = cy + float(offsets[1, i, j]) * grid.cell_size
        out.append(
            Detection(
                x=x,
                y=y,
                score=float(heat[i, j]),
                prev_x=x + float(motion[0, i, j]) * grid.cell_size,
                prev_y=y + float(motion[1, i, j]) * grid.cell_size,
            )
        )
    return out


def focal_loss(
    pred: np.ndarray, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0
) -> tuple[float, np.ndarray]:
    """Penalty-reduced focal loss over a Gaussian-encoded target heatmap.

    Cells with target exactly 1 are positives; everything else is a
    distance-weighted negative.  Normalized by the positive count
    (floor 1).  Returns (loss, d loss / d pred).
    """
    p = np.clip(np.asarray(pred, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs target {t.shape}")
    pos = t == 1.0
    neg = ~pos
    n_pos = max(1, int(pos.sum()))
    one_minus_p = 1.0 - p
    log_p = np.log(p)
    log_1mp = np.log(one_minus_p)
    neg_w = (1.0 - t) ** beta
    loss_pos = -(one_minus_p[pos] ** alpha) * log_p[pos]
    loss_neg = -neg_w[neg] * (p[neg] ** alpha) * log_1mp[neg]
    loss = (loss_pos.sum() + loss_neg.sum()) / n_pos
    grad = np.zeros_like(p)
    grad[pos] = (
        alpha * one_minus_p[pos] ** (alpha - 1.0) * log_p[pos]
        - one_minus_p[pos] ** alpha / p[pos]
    )
    grad[neg] = -neg_w[neg] * (
        alpha * p[neg] ** (alpha - 1.0) * log_1mp[neg]
        - p[neg] ** alpha / one_minus_p[neg]
    )
    grad /= n_pos
    # Clamped cells sit on a flat edge of the loss surface.
    raw = np.asarray(pred, dtype=np.float64)
    grad[(raw < _CLAMP) | (raw > 1.0 - _CLAMP)] = 0.0
    return float(loss), grad


def _masked_pairs(pred, target, mask):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if p.shape != t.shape or p.shape[0] != 2 or p.shape[1:] != m.shape:
        raise ShapeMismatch(f"pred {p.shape}, target {t.shape}, mask {m.shape}")
    if not m.any():
        raise EmptyMask("loss evaluated with an empty mask")
    return p, t, m


def l1_offset_loss(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean absolute error over masked cells and both components."""
    p, t, m = _masked_pairs(pred, target, mask)
    diff = p - t
    denom = 2.0 * int(m.sum())
    loss = np.abs(diff[:, m]).sum() / denom
    grad = np.zeros_like(p)
    grad[:, m] = np.sign(diff[:, m]) / denom
    return float(loss), grad


def smooth_l1_loss(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray, delta: float = 1.0
) -> tuple[float, np.ndarray]:
    """Huber loss: quadratic within delta, linear outside, masked mean."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    p, t, m = _masked_pairs(pred, target, mask)
    diff = (p - t)[:, m]
    denom = 2.0 * int(m.sum())
    small = np.abs(diff) < delta
    terms = np.where(small, 0.5 * diff * diff / delta, np.abs(diff) - 0.5 * delta)
    loss = terms.sum() / denom
    grad = np.zeros_like(p)
    grad[:, m] = np.where(small, diff / delta, np.sign(diff)) / denom
    return float(loss), grad


def write_detections_csv(path: str | Path, rows: Iterable[tuple[int, Detection]]) -> None:
    """Write `frame,x,y,score,prev_x,prev_y` rows (meters, header required)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x", "y", "score", "prev_x", "prev_y"])
        for frame, det in rows:
            writer.writerow([
                frame,
                format(det.x, ".9g"), format(det.y, ".9g"),
                format(det.score, ".9g"),
                format(det.prev_x, ".9g"), format(det.prev_y, ".9g"),
            ])


def read_detections_csv(path: str | Path) -> list[tuple[int, Detection]]:
    rows: list[tuple[int, Detection]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "x", "y", "score", "prev_x", "prev_y"]:
            raise FormatError(f"{path}: line 1: bad detection CSV header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                frame = int(row[0])
                x, y, score, px, py = (float(v) for v in row[1:6])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}: line {lineno}: malformed row {row}") from exc
            rows.append((frame, Detection(x=x, y=y, score=score, prev_x=px, prev_y=py)))
    return rows
