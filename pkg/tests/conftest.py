"""Shared fixtures: simple cameras and small grids used across modules."""

from __future__ import annotations

import numpy as np
import pytest

from bevtrack.bev import BevGrid
from bevtrack.geometry import Camera, Extrinsics, Intrinsics, look_at_camera


@pytest.fixture
def identity_camera() -> Camera:
    """Unit focal length, principal point at origin, camera at world origin."""
    return Camera(
        intrinsics=Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=100, height=100),
        extrinsics=Extrinsics(R=np.eye(3), t=np.zeros(3)),
        id=0,
    )


@pytest.fixture
def hd_camera() -> Camera:
    """1080p-style camera at the origin looking down +z."""
    return Camera(
        intrinsics=Intrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0,
                              width=1920, height=1080),
        extrinsics=Extrinsics(R=np.eye(3), t=np.zeros(3)),
        id=0,
    )


@pytest.fixture
def overhead_camera() -> Camera:
    """Camera 6 m above the center of a small grid, looking at the ground."""
    intr = Intrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)
    return look_at_camera((2.0, 1.9, 6.0), (2.0, 2.0, 0.0), intr, cam_id=0)


@pytest.fixture
def small_grid() -> BevGrid:
    """4 x 4 m area, 10 cm cells, two vertical bins up to 2 m."""
    return BevGrid(origin=(0.0, 0.0), cell_size=0.1, width=40, height=40,
                   z_min=0.0, z_max=2.0, z_bins=2)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR decomposition."""
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1.0
    return Q


def demo_scene_dict(agents: list[dict], frames: int = 10, seed: int = 0,
                    noise: float = 0.0, n_cameras: int = 4) -> dict:
    """Small 6x6 m scene with a camera ring; feature maps are 80x60."""
    return {
        "seed": seed,
        "frames": frames,
        "grid": {"origin": [0.0, 0.0], "cell_size": 0.1, "width": 60, "height": 60,
                 "z_min": 0.0, "z_max": 2.0, "z_bins": 4},
        "cameras": {"ring": {"extent": [0.0, 6.0, 0.0, 6.0], "n_cameras": n_cameras,
                             "image_size": [320, 240], "focal": 260.0,
                             "height": 4.0, "margin": 1.0}},
        "feature": {"noise_sigma": noise, "blob_scale": 20.0},
        "agents": agents,
    }
