"""Image-to-BEV lifting kernels and cross-camera aggregation.

Four ways to move per-camera image features into the shared BEV frame:

* ``lift_perspective`` — push pixels to the ground plane through the z=0
  homography; height is not modeled, so elevated targets smear away from
  the camera like a shadow.
* ``lift_bilinear`` — every voxel pulls one bilinear tap from each image.
  The voxel's eight corners are projected, and the tap is placed at the
  center of their bounding box; the voxel counts as visible iff that box
  intersects the image.
* ``lift_depth_splat`` — push each pixel along its ray at a set of
  discrete depths, weighting the feature by the per-pixel depth
  probability, and sum into the voxels hit.
* ``lift_deformable`` — sample at K offset locations around each voxel's
  reference point and blend with normalized weights.  The reference point
  and visibility rule are shared with ``lift_bilinear``, so a K=1,
  zero-offset spec reproduces it bit-exactly.

Feature maps live at 1/downsample of the camera resolution; sampling uses
intrinsics scaled by that factor.  All lifts are linear in the feature map
and deterministic: camera order and depth-bin order fix every reduction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .bev import BevGrid, FeatureMap, VoxelVolume
from .errors import GridMismatch, ShapeMismatch
from .geometry import MIN_DEPTH, Camera, Intrinsics, ground_homography

_CORNER_SIGNS = [
    (-1, -1, -1), (-1, -1, 1), (-1, 1, -1), (-1, 1, 1),
    (1, -1, -1), (1, -1, 1), (1, 1, -1), (1, 1, 1),
]


@dataclass(frozen=True)
class DepthDistribution:
    """Per-pixel probabilities over |D| discrete depths d0 + (k+1)*delta."""

    d0: float
    delta: float
    probs: np.ndarray  # (D, Hf, Wf) float32, normalized per pixel

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if probs.ndim != 3 or probs.shape[0] < 1:
            raise ShapeMismatch(f"depth probs must be (D, H, W), got {probs.shape}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if probs.min() < 0:
            raise ValueError("depth probabilities must be >= 0")
        sums = probs.sum(axis=0, dtype=np.float64)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("depth probabilities must sum to 1 per pixel")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def bins(self) -> int:
        return self.probs.shape[0]

    def bin_depths(self) -> np.ndarray:
        return self.d0 + (np.arange(self.bins) + 1.0) * self.delta

    @classmethod
    def uniform(cls, d0: float, delta: float, bins: int, height: int, width: int):
        probs = np.full((bins, height, width), 1.0 / bins, dtype=np.float32)
        return cls(d0=d0, delta=delta, probs=probs)


@dataclass(frozen=True)
class DeformableSpec:
    """K sampling offsets (feature pixels) with normalized blend weights.

    offsets: (K, 2) shared by all voxels, or (K, N, 2) per voxel; columns
    are (du, dv).  weights: (K,) or (K, N), summing to 1 per voxel.
    """

    offsets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if off.ndim not in (2, 3) or off.shape[-1] != 2:
            raise ShapeMismatch(f"offsets must be (K, 2) or (K, N, 2), got {off.shape}")
        if w.shape[0] != off.shape[0] or w.ndim != off.ndim - 1:
            raise ShapeMismatch(f"weights {w.shape} inconsistent with offsets {off.shape}")
        sums = w.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("deformable weights must sum to 1 per voxel")
        if w.min() < 0:
            raise ValueError("deformable weights must be >= 0")
        off.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "weights", w)

    @property
    def taps(self) -> int:
        return self.offsets.shape[0]

    @classmethod
    def single_center_tap(cls) -> "DeformableSpec":
        """Degenerate spec: one zero-offset tap with full weight."""
        return cls(offsets=np.zeros((1, 2)), weights=np.ones(1))


@dataclass(frozen=True)
class VisibilityMask:
    """Per-voxel visibility of one camera, consistent with projection."""

    data: np.ndarray  # (Z, Hg, Wg) bool
    camera_id: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)


def feature_camera(camera: Camera, downsample: int) -> Camera:
    """Camera whose pixel frame is the downsampled feature grid."""
    if downsample < 1:
        raise ValueError(f"downsample must be >= 1, got {downsample}")
    if camera.width % downsample or camera.height % downsample:
        raise ShapeMismatch(
            f"image {camera.width}x{camera.height} not divisible by downsample {downsample}"
        )
    intr = camera.intrinsics
    f = 1.0 / downsample
    scaled = Intrinsics(
        fx=intr.fx * f, fy=intr.fy * f, cx=intr.cx * f, cy=intr.cy * f,
        width=camera.width // downsample, height=camera.height // downsample,
    )
    return Camera(intrinsics=scaled, extrinsics=camera.extrinsics, id=camera.id)


def _check_feature(feature: FeatureMap, fcam: Camera) -> None:
    if (feature.height, feature.width) != (fcam.height, fcam.width):
        raise ShapeMismatch(
            f"feature {feature.height}x{feature.width} does not match "
            f"downsampled camera {fcam.height}x{fcam.width}"
        )


@dataclass(frozen=True)
class SamplePlan:
    """Precomputed sampling locations for one (camera, grid, downsample).

    `us`/`vs` are feature-pixel coordinates per voxel (or per ground cell),
    zeroed where invalid; `valid` is uint8.  Plans depend only on static
    rig geometry, so pipelines build them once and reuse them every frame.
    """

    us: np.ndarray
    vs: np.ndarray
    valid: np.ndarray
    shape: tuple[int, ...]  # (Z, Hg, Wg) for voxel plans, (Hg, Wg) for ground


def build_voxel_plan(camera: Camera, grid: BevGrid, downsample: int = 4) -> SamplePlan:
    """Bounding-box-center sampling locations for every voxel of the grid."""
    fcam = feature_camera(camera, downsample)
    M = fcam.projection_matrix()
    xs = grid.x_centers()
    ys = grid.y_centers()
    zs = grid.z_centers()
    # Homogeneous coordinates of the voxel centers, built separably.
    bx = (M[0, 0] * xs)[None, None, :] + (M[0, 1] * ys)[None, :, None] \
        + (M[0, 2] * zs)[:, None, None] + M[0, 3]
    by = (M[1, 0] * xs)[None, None, :] + (M[1, 1] * ys)[None, :, None] \
        + (M[1, 2] * zs)[:, None, None] + M[1, 3]
    bw = (M[2, 0] * xs)[None, None, :] + (M[2, 1] * ys)[None, :, None] \
        + (M[2, 2] * zs)[:, None, None] + M[2, 3]
    hx = 0.5 * grid.cell_size
    hz = 0.5 * grid.z_step
    shape = (grid.z_bins, grid.height, grid.width)
    umin = np.full(shape, np.inf)
    umax = np.full(shape, -np.inf)
    vmin = np.full(shape, np.inf)
    vmax = np.full(shape, -np.inf)
    front = np.ones(shape, dtype=bool)
    # Corners are center + a fixed homogeneous offset (projection is linear).
    for sx, sy, sz in _CORNER_SIGNS:
        off = M[:, :3] @ np.array([sx * hx, sy * hx, sz * hz])
        w = bw + off[2]
        front &= w > MIN_DEPTH
        safe = np.where(w > MIN_DEPTH, w, 1.0)
        u = (bx + off[0]) / safe
        v = (by + off[1]) / safe
        np.minimum(umin, u, out=umin)
        np.maximum(umax, u, out=umax)
        np.minimum(vmin, v, out=vmin)
        np.maximum(vmax, v, out=vmax)
    valid = front & (umax >= 0.0) & (umin <= fcam.width - 1.0) \
        & (vmax >= 0.0) & (vmin <= fcam.height - 1.0)
    us = np.where(valid, 0.5 * (umin + umax), 0.0)
    vs = np.where(valid, 0.5 * (vmin + vmax), 0.0)
    return SamplePlan(
        us=np.ascontiguousarray(us.ravel()),
        vs=np.ascontiguousarray(vs.ravel()),
        valid=np.ascontiguousarray(valid.ravel().astype(np.uint8)),
        shape=shape,
    )


def build_ground_plan(camera: Camera, grid: BevGrid, downsample: int = 4) -> SamplePlan:
    """Homography-route sampling locations for every ground cell center."""
    fcam = feature_camera(camera, downsample)
    H0 = ground_homography(fcam)
    xs = grid.x_centers()
    ys = grid.y_centers()
    hu = (H0[0, 0] * xs)[None, :] + (H0[0, 1] * ys)[:, None] + H0[0, 2]
    hv = (H0[1, 0] * xs)[None, :] + (H0[1, 1] * ys)[:, None] + H0[1, 2]
    hw = (H0[2, 0] * xs)[None, :] + (H0[2, 1] * ys)[:, None] + H0[2, 2]
    front = hw > MIN_DEPTH
    safe = np.where(front, hw, 1.0)
    u = hu / safe
    v = hv / safe
    valid = front & (u >= 0.0) & (u <= fcam.width - 1.0) \
        & (v >= 0.0) & (v <= fcam.height - 1.0)
    us = np.where(valid, u, 0.0)
    vs = np.where(valid, v, 0.0)
    return SamplePlan(
        us=np.ascontiguousarray(us.ravel()),
        vs=np.ascontiguousarray(vs.ravel()),
        valid=np.ascontiguousarray(valid.ravel().astype(np.uint8)),
        shape=(grid.height, grid.width),
    )


def apply_plan(feature: FeatureMap, plan: SamplePlan) -> np.ndarray:
    """Sample a feature map at a plan's locations -> (C, *plan.shape) float32."""
    out = _kernels.bilinear_sample(feature.data, plan.us, plan.vs, plan.valid)
    return out.reshape((feature.channels,) + plan.shape)


def apply_deformable(feature: FeatureMap, spec: DeformableSpec,
                     plan: SamplePlan) -> np.ndarray:
    """Weighted multi-tap sampling around a plan's reference points."""
    n = plan.us.shape[0]
    if spec.offsets.ndim == 3 and spec.offsets.shape[1] != n:
        raise ShapeMismatch(
            f"per-voxel offsets cover {spec.offsets.shape[1]} voxels, grid has {n}"
        )
    acc = np.zeros((feature.channels, n), dtype=np.float64)
    for k in range(spec.taps):
        if spec.offsets.ndim == 2:
            us = plan.us + spec.offsets[k, 0]
            vs = plan.vs + spec.offsets[k, 1]
        else:
            us = plan.us + spec.offsets[k, :, 0]
            vs = plan.vs + spec.offsets[k, :, 1]
        sample = _kernels.bilinear_sample(feature.data, us, vs, plan.valid)
        acc += spec.weights[k] * sample.astype(np.float64)
    return acc.astype(np.float32).reshape((feature.channels,) + plan.shape)


def lift_perspective(
    feature: FeatureMap, camera: Camera, grid: BevGrid, downsample: int = 4
) -> tuple[FeatureMap, np.ndarray]:
    """Pull ground-plane features through the z=0 homography.

    Returns the (C, Hg, Wg) map and the (Hg, Wg) visibility mask; cells
    projecting outside the image or behind the camera are zero.
    """
    fcam = feature_camera(camera, downsample)
    _check_feature(feature, fcam)
    plan = build_ground_plan(camera, grid, downsample)
    data = apply_plan(feature, plan)
    mask = plan.valid.reshape(plan.shape).astype(bool)
    return FeatureMap(data), mask


def lift_bilinear(
    feature: FeatureMap, camera: Camera, grid: BevGrid, downsample: int = 4
) -> tuple[VoxelVolume, VisibilityMask]:
    """One bilinear tap per voxel at the projected-corner box center."""
    fcam = feature_camera(camera, downsample)
    _check_feature(feature, fcam)
    plan = build_voxel_plan(camera, grid, downsample)
    data = apply_plan(feature, plan)
    mask = VisibilityMask(plan.valid.reshape(plan.shape).astype(bool), camera.id)
    return VoxelVolume(data, grid), mask


def lift_depth_splat(
    feature: FeatureMap,
    depth: DepthDistribution,
    camera: Camera,
    grid: BevGrid,
    downsample: int = 4,
) -> VoxelVolume:
    """Push pixels along their rays at discrete depths, summing into voxels."""
    fcam = feature_camera(camera, downsample)
    _check_feature(feature, fcam)
    if depth.probs.shape[1:] != (feature.height, feature.width):
        raise ShapeMismatch(
            f"depth probs {depth.probs.shape[1:]} do not match "
            f"feature {feature.height}x{feature.width}"
        )
    intr = fcam.intrinsics
    u = np.arange(fcam.width, dtype=np.float64)
    v = np.arange(fcam.height, dtype=np.float64)
    # Unit-depth ray directions in camera coordinates, then world frame.
    dir_cam = np.empty((3, fcam.height, fcam.width))
    dir_cam[0] = ((u - intr.cx) / intr.fx)[None, :]
    dir_cam[1] = ((v - intr.cy) / intr.fy)[:, None]
    dir_cam[2] = 1.0
    R = camera.extrinsics.R
    rays = np.einsum("ab,bhw->ahw", R.T, dir_cam)
    center = camera.position()
    depths = depth.bin_depths()
    pts_x = center[0] + depths[:, None, None] * rays[0][None]
    pts_y = center[1] + depths[:, None, None] * rays[1][None]
    pts_z = center[2] + depths[:, None, None] * rays[2][None]
    j = np.floor((pts_x - grid.origin[0]) / grid.cell_size).astype(np.int64)
    i = np.floor((pts_y - grid.origin[1]) / grid.cell_size).astype(np.int64)
    k = np.floor((pts_z - grid.z_min) / grid.z_step).astype(np.int64)
    inside = (i >= 0) & (i < grid.height) & (j >= 0) & (j < grid.width) \
        & (k >= 0) & (k < grid.z_bins)
    flat = (k * grid.height + i) * grid.width + j
    vox = np.where(inside, flat, -1).astype(np.int64)
    n_vox = grid.z_bins * grid.height * grid.width
    acc = _kernels.depth_splat(feature.data, depth.probs, np.ascontiguousarray(vox), n_vox)
    data = acc.reshape(feature.channels, grid.z_bins, grid.height, grid.width)
    return VoxelVolume(data.astype(np.float32), grid)


def lift_deformable(
    feature: FeatureMap,
    spec: DeformableSpec,
    camera: Camera,
    grid: BevGrid,
    downsample: int = 4,
) -> tuple[VoxelVolume, VisibilityMask]:
    """Weighted sum of K offset taps around each voxel's reference point."""
    fcam = feature_camera(camera, downsample)
    _check_feature(feature, fcam)
    plan = build_voxel_plan(camera, grid, downsample)
    data = apply_deformable(feature, spec, plan)
    mask = VisibilityMask(plan.valid.reshape(plan.shape).astype(bool), camera.id)
    return VoxelVolume(data, grid), mask


def aggregate_cameras(
    per_camera: Sequence[tuple[VoxelVolume, VisibilityMask]],
) -> tuple[VoxelVolume, np.ndarray]:
    """Visibility-normalized mean over cameras, in the order given.

    Each voxel averages only the cameras that see it; voxels seen by none
    are zero.  Also returns the per-voxel view count.
    """
    if not per_camera:
        raise GridMismatch("aggregate_cameras needs at least one camera")
    grid = per_camera[0][0].grid
    channels = per_camera[0][0].channels
    shape = (grid.z_bins, grid.height, grid.width)
    acc = np.zeros((channels,) + shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.uint16)
    for volume, mask in per_camera:
        if volume.grid != grid:
            raise GridMismatch("volumes defined on different grids")
        if volume.channels != channels:
            raise GridMismatch("volumes have different channel counts")
        if mask.data.shape != shape:
            raise GridMismatch(f"mask shape {mask.data.shape} does not match grid {shape}")
        m = mask.data
        acc += volume.data.astype(np.float64) * m
        count += m
    seen = count > 0
    safe = np.where(seen, count, 1).astype(np.float64)
    data = (acc / safe * seen).astype(np.float32)
    return VoxelVolume(data, grid), count


def aggregate_planes(
    per_camera: Sequence[tuple[FeatureMap, np.ndarray]],
) -> tuple[FeatureMap, np.ndarray]:
    """Visibility-normalized mean of ground-plane maps (perspective route)."""
    if not per_camera:
        raise GridMismatch("aggregate_planes needs at least one camera")
    first = per_camera[0][0]
    shape = (first.height, first.width)
    acc = np.zeros((first.channels,) + shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.uint16)
    for fm, mask in per_camera:
        if (fm.channels, fm.height, fm.width) != (first.channels,) + shape:
            raise GridMismatch("ground maps have inconsistent shapes")
        if mask.shape != shape:
            raise GridMismatch(f"mask shape {mask.shape} does not match map {shape}")
        acc += fm.data.astype(np.float64) * mask
        count += mask
    seen = count > 0
    safe = np.where(seen, count, 1).astype(np.float64)
    data = (acc / safe * seen).astype(np.float32)
    return FeatureMap(data), count
