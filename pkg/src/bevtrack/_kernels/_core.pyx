# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels.

Arithmetic mirrors ``fallback.py`` exactly (same float64 chains, same
accumulation order) so both backends are bit-identical.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

NAME = "compiled"


def bilinear_sample(const cnp.float32_t[:, :, ::1] feat,
                    const cnp.float64_t[::1] us,
                    const cnp.float64_t[::1] vs,
                    const cnp.uint8_t[::1] valid):
    """Sample (C, H, W) features at N pixel locations; (C, N) float32."""
    cdef Py_ssize_t C = feat.shape[0]
    cdef Py_ssize_t H = feat.shape[1]
    cdef Py_ssize_t W = feat.shape[2]
    cdef Py_ssize_t N = us.shape[0]
    out_arr = np.zeros((C, N), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, x0, y0, x1, y1
    cdef double u, v, ax, ay, w00, w01, w10, w11, val
    for n in range(N):
        if not valid[n]:
            continue
        u = us[n]
        if u < 0.0:
            u = 0.0
        elif u > W - 1.0:
            u = W - 1.0
        v = vs[n]
        if v < 0.0:
            v = 0.0
        elif v > H - 1.0:
            v = H - 1.0
        x0 = <Py_ssize_t>floor(u)
        y0 = <Py_ssize_t>floor(v)
        x1 = x0 + 1
        if x1 > W - 1:
            x1 = W - 1
        y1 = y0 + 1
        if y1 > H - 1:
            y1 = H - 1
        ax = u - x0
        ay = v - y0
        w00 = (1.0 - ay) * (1.0 - ax)
        w01 = (1.0 - ay) * ax
        w10 = ay * (1.0 - ax)
        w11 = ay * ax
        for c in range(C):
            val = (w00 * <double>feat[c, y0, x0]
                   + w01 * <double>feat[c, y0, x1]
                   + w10 * <double>feat[c, y1, x0]
                   + w11 * <double>feat[c, y1, x1])
            out[c, n] = <cnp.float32_t>val
    return out_arr


def depth_splat(const cnp.float32_t[:, :, ::1] feat,
                const cnp.float32_t[:, :, ::1] prob,
                const cnp.int64_t[:, :, ::1] vox,
                Py_ssize_t n_voxels):
    """Scatter-add depth-weighted features; (C, n_voxels) float64 accumulator."""
    cdef Py_ssize_t C = feat.shape[0]
    cdef Py_ssize_t H = feat.shape[1]
    cdef Py_ssize_t W = feat.shape[2]
    cdef Py_ssize_t D = prob.shape[0]
    out_arr = np.zeros((C, n_voxels), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t d, y, x, c, j
    cdef double p
    for c in range(C):
        for d in range(D):
            for y in range(H):
                for x in range(W):
                    j = vox[d, y, x]
                    if j < 0:
                        continue
                    p = <double>prob[d, y, x]
                    out[c, j] = out[c, j] + <double>feat[c, y, x] * p
    return out_arr
