"""Numpy implementations of the hot sampling kernels.

These mirror ``_core.pyx`` operation for operation: every arithmetic chain
is evaluated in float64 in the same order, so both backends produce
bit-identical outputs (the extension is compiled with FP contraction off
to keep that true).
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def bilinear_sample(feat: np.ndarray, us: np.ndarray, vs: np.ndarray,
                    valid: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) float32 features at N continuous pixel locations.

    Coordinates are clamped to the sampleable region [0, W-1] x [0, H-1];
    invalid samples yield 0.  Returns (C, N) float32.
    """
    C, H, W = feat.shape
    n = us.shape[0]
    if n == 0:
        return np.zeros((C, 0), dtype=np.float32)
    u = np.clip(us, 0.0, W - 1.0)
    v = np.clip(vs, 0.0, H - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = u - x0
    ay = v - y0
    w00 = (1.0 - ay) * (1.0 - ax)
    w01 = (1.0 - ay) * ax
    w10 = ay * (1.0 - ax)
    w11 = ay * ax
    f00 = feat[:, y0, x0].astype(np.float64)
    f01 = feat[:, y0, x1].astype(np.float64)
    f10 = feat[:, y1, x0].astype(np.float64)
    f11 = feat[:, y1, x1].astype(np.float64)
    val = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11
    out = val.astype(np.float32)
    out[:, ~(np.asarray(valid, dtype=bool))] = 0.0
    return np.ascontiguousarray(out)


def depth_splat(feat: np.ndarray, prob: np.ndarray, vox: np.ndarray,
                n_voxels: int) -> np.ndarray:
    """Scatter-add depth-weighted features into flat voxel bins.

    feat: (C, H, W) float32; prob: (D, H, W) float32; vox: (D, H, W) int64
    flat voxel index per (bin, pixel), -1 for dropped points.  Returns the
    (C, n_voxels) float64 accumulator; contributions are added in (d, y, x)
    row-major order.
    """
    C = feat.shape[0]
    out = np.zeros((C, n_voxels), dtype=np.float64)
    keep = vox >= 0
    if not keep.any():
        return out
    idx = vox[keep]
    p = prob.astype(np.float64)[keep]
    feat64 = feat.astype(np.float64)
    D = prob.shape[0]
    for c in range(C):
        contrib = np.broadcast_to(feat64[c], (D,) + feat64[c].shape)[keep] * p
        np.add.at(out[c], idx, contrib)
    return out
