"""Pinhole camera model, ground-plane homography, calibration IO, augmentation.

Coordinate conventions
----------------------
World frame: right-handed, z up, ground plane at z = 0, units meters.
Camera frame: computer-vision convention, x right, y down, z forward along
the optical axis.  A world point maps through ``x_cam = R @ x_world + t``.
Image frame: u right, v down, units pixels, sub-pixel real valued.

The full projection is the 3x4 matrix ``P = K [R|t]``; the homogeneous
scale of the projected point is the depth along the optical axis.  For
points on the ground plane the z column of P drops out, leaving a 3x3
homography between the plane and the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import CalibrationError, InvalidCrop, SingularHomography

# Depth below this is treated as "behind the camera" to avoid division
# blow-up near the principal plane.
MIN_DEPTH = 1e-9

_ROTATION_TOL = 1e-9
_LOADER_ROTATION_TOL = 1e-6
_HOMOGRAPHY_DET_TOL = 1e-12


class WorldPoint(NamedTuple):
    x: float
    y: float
    z: float = 0.0


class ImagePoint(NamedTuple):
    u: float
    v: float
    depth: float | None = None


class BehindCamera:
    """Marker value: the point does not lie in front of the camera."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "BehindCamera"


BEHIND_CAMERA = BehindCamera()

ProjectionResult = Union[ImagePoint, BehindCamera]


def _rotation_error(R: np.ndarray) -> float:
    return max(
        float(np.abs(R.T @ R - np.eye(3)).max()),
        abs(float(np.linalg.det(R)) - 1.0),
    )


def _frozen_array(values, shape, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).reshape(shape).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got ({self.width}, {self.height})")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Extrinsics:
    R: np.ndarray  # (3, 3) world-to-camera rotation
    t: np.ndarray  # (3,) translation, meters

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen_array(self.R, (3, 3)))
        object.__setattr__(self, "t", _frozen_array(self.t, (3,)))
        err = _rotation_error(self.R)
        if err > _ROTATION_TOL:
            raise ValueError(f"R is not a rotation matrix (error {err:.3e})")

    def matrix(self) -> np.ndarray:
        """[R|t] as a 3x4 matrix."""
        out = np.empty((3, 4), dtype=np.float64)
        out[:, :3] = self.R
        out[:, 3] = self.t
        return out


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    id: int = 0

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def projection_matrix(self) -> np.ndarray:
        """K [R|t] as a 3x4 matrix."""
        return self.intrinsics.matrix() @ self.extrinsics.matrix()

    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        ext = self.extrinsics
        return -(ext.R.T @ ext.t)


def project(camera: Camera, p: WorldPoint | Sequence[float]) -> ProjectionResult:
    """Project one world point; BEHIND_CAMERA if its depth is <= MIN_DEPTH."""
    P = camera.projection_matrix()
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    hom = P @ np.array([x, y, z, 1.0])
    depth = float(hom[2])
    if depth <= MIN_DEPTH:
        return BEHIND_CAMERA
    return ImagePoint(float(hom[0]) / depth, float(hom[1]) / depth, depth)


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns (uv, depth) where uv is (N, 2) and depth is (N,).  Entries with
    depth <= MIN_DEPTH hold uv = 0; callers must mask on depth.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    P = camera.projection_matrix()
    hom = pts @ P[:, :3].T + P[:, 3]
    depth = hom[:, 2]
    front = depth > MIN_DEPTH
    safe = np.where(front, depth, 1.0)
    uv = hom[:, :2] / safe[:, None]
    uv[~front] = 0.0
    return uv, depth


def ground_homography(camera: Camera) -> np.ndarray:
    """3x3 map from ground-plane (x, y, 1) to homogeneous image coordinates.

    This is the projection matrix with its z column deleted; it agrees with
    project() for any point at z = 0.
    """
    P = camera.projection_matrix()
    H = P[:, [0, 1, 3]]
    if abs(float(np.linalg.det(H))) < _HOMOGRAPHY_DET_TOL:
        raise SingularHomography(
            f"ground homography of camera {camera.id} is singular "
            "(camera lies in the ground plane?)"
        )
    return H


def adjust_for_resize_crop(
    camera: Camera,
    scale: float,
    crop_origin: tuple[float, float] = (0.0, 0.0),
    crop_size: tuple[int, int] | None = None,
) -> Camera:
    """Camera for an image resized by `scale` then cropped at `crop_origin`.

    `crop_size` is the (width, height) of the crop window; by default the
    window extends to the far corner of the scaled image.  Extrinsics are
    unchanged: only the pixel mapping moves.
    """
    if not (0.5 <= scale <= 2.0):
        raise ValueError(f"scale {scale} outside supported range [0.5, 2.0]")
    intr = camera.intrinsics
    sw = intr.width * scale
    sh = intr.height * scale
    ox, oy = float(crop_origin[0]), float(crop_origin[1])
    if ox < 0 or oy < 0 or ox >= sw or oy >= sh:
        raise InvalidCrop(f"crop origin {crop_origin} outside scaled image {sw:.1f}x{sh:.1f}")
    if crop_size is None:
        cw = int(round(sw - ox))
        ch = int(round(sh - oy))
    else:
        cw, ch = int(crop_size[0]), int(crop_size[1])
        if cw < 1 or ch < 1:
            raise InvalidCrop(f"crop size {crop_size} must be >= 1x1")
        if ox + cw > sw + 1e-9 or oy + ch > sh + 1e-9:
            raise InvalidCrop(
                f"crop window {crop_origin}+{crop_size} exits scaled image {sw:.1f}x{sh:.1f}"
            )
    new_intr = Intrinsics(
        fx=intr.fx * scale,
        fy=intr.fy * scale,
        cx=intr.cx * scale - ox,
        cy=intr.cy * scale - oy,
        width=max(1, cw),
        height=max(1, ch),
    )
    return replace(camera, intrinsics=new_intr)


def perturb_extrinsics(camera: Camera, sigma: float, seed: int) -> Camera:
    """Add seeded Gaussian noise (std `sigma`, meters) to the translation."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=3)
    ext = camera.extrinsics
    return replace(camera, extrinsics=Extrinsics(R=ext.R, t=ext.t + noise))


def look_at_camera(
    position: Sequence[float],
    target: Sequence[float],
    intrinsics: Intrinsics,
    cam_id: int = 0,
) -> Camera:
    """Camera at `position` with its optical axis through `target`, z-up roll."""
    pos = np.asarray(position, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    forward = tgt - pos
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position and target coincide")
    z = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(z, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise ValueError("camera looking straight up/down has no z-up roll")
    x = right / rnorm
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    t = -(R @ pos)
    return Camera(intrinsics=intrinsics, extrinsics=Extrinsics(R=R, t=t), id=cam_id)


def save_calibration(cameras: Sequence[Camera], path: str | Path) -> None:
    """Write a rig as a JSON array of {id, K, R, t, width, height} entries."""
    entries = []
    for cam in cameras:
        entries.append(
            {
                "id": cam.id,
                "K": [float(v) for v in cam.intrinsics.matrix().ravel()],
                "R": [float(v) for v in cam.extrinsics.R.ravel()],
                "t": [float(v) for v in cam.extrinsics.t],
                "width": cam.width,
                "height": cam.height,
            }
        )
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def load_calibration(path: str | Path) -> list[Camera]:
    """Load a rig saved by save_calibration.

    Rejects rotation matrices with orthonormality error above 1e-6; matrices
    within (1e-9, 1e-6] are projected onto the nearest rotation so mildly
    noisy calibrations still load, while exact ones pass through verbatim.
    """
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise CalibrationError(f"{path}: expected a JSON array of cameras")
    cameras = []
    seen_ids: set[int] = set()
    for idx, entry in enumerate(entries):
        try:
            cam_id = int(entry["id"])
            K = np.asarray(entry["K"], dtype=np.float64).reshape(3, 3)
            R = np.asarray(entry["R"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(entry["t"], dtype=np.float64).reshape(3)
            width = int(entry["width"])
            height = int(entry["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CalibrationError(f"{path}: camera #{idx} malformed ({exc})") from exc
        if cam_id in seen_ids:
            raise CalibrationError(f"{path}: duplicate camera id {cam_id}")
        seen_ids.add(cam_id)
        off_diag = [K[0, 1], K[1, 0], K[2, 0], K[2, 1]]
        if max(abs(v) for v in off_diag) > 1e-9 or abs(K[2, 2] - 1.0) > 1e-9:
            raise CalibrationError(f"{path}: camera {cam_id} K has unsupported skew terms")
        err = _rotation_error(R)
        if err > _LOADER_ROTATION_TOL:
            raise CalibrationError(
                f"{path}: camera {cam_id} R is not a rotation (error {err:.3e})"
            )
        if err > _ROTATION_TOL:
            U, _, Vt = np.linalg.svd(R)
            R = U @ Vt
            if np.linalg.det(R) < 0:
                U[:, -1] *= -1.0
                R = U @ Vt
        intr = Intrinsics(
            fx=float(K[0, 0]), fy=float(K[1, 1]),
            cx=float(K[0, 2]), cy=float(K[1, 2]),
            width=width, height=height,
        )
        cameras.append(Camera(intrinsics=intr, extrinsics=Extrinsics(R=R, t=t), id=cam_id))
    return cameras
