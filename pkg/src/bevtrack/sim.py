"""Synthetic multi-camera world with oracle features.

Agents are cylinders moving on the ground plane.  Each camera renders an
oracle feature map instead of an encoded image: every visible agent paints
a unit-peak Gaussian blob at the projection of its center (at half its
height) into the downsampled feature grid, with blob width scaled by
inverse depth; seeded pixel noise is added on top.  Visibility combines
the in-front/in-image test with cylinder occlusion: an agent is hidden
from a camera when another agent's cylinder crosses its line of sight
closer to the camera.

Determinism: one scene seed fixes everything.  Per-frame motion noise and
per-camera pixel noise draw from child generators keyed by (seed, stream,
frame, index), so rendering order never changes the result.

Agent positions are quantized to float32 precision when a frame is
emitted; the ground-truth CSV serializes them with 9 significant digits,
which round-trips that precision bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bev import OUT_OF_GRID, BevGrid, FeatureMap, wildtrack_grid, multiviewx_grid, \
    world_to_cell, write_feature_map
from .errors import ConfigError
from .geometry import Camera, Intrinsics, look_at_camera, project, save_calibration, \
    BehindCamera
from .lifting import feature_camera

_MOTION_STREAM = 1
_PIXEL_STREAM = 2


@dataclass(frozen=True)
class AgentSpec:
    """Motion plan: straight line (start + velocity) or waypoint following."""

    id: int
    start: tuple[float, float] | None = None
    velocity: tuple[float, float] = (0.0, 0.0)  # meters per frame
    waypoints: tuple[tuple[float, float], ...] | None = None
    speed: float = 0.0                           # meters per frame, waypoint mode
    radius: float = 0.3
    height: float = 1.7
    spawn_frame: int = 0
    motion_noise: float = 0.0                    # std of per-frame position noise

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ConfigError(f"agent {self.id}: radius and height must be > 0")
        if self.waypoints is not None:
            if len(self.waypoints) < 2:
                raise ConfigError(f"agent {self.id}: waypoint mode needs >= 2 waypoints")
            if self.speed <= 0:
                raise ConfigError(f"agent {self.id}: waypoint mode needs speed > 0")
        elif self.start is None:
            raise ConfigError(f"agent {self.id}: needs either start or waypoints")


@dataclass(frozen=True)
class FeatureConfig:
    channels: int = 1
    downsample: int = 4
    noise_sigma: float = 0.0
    blob_scale: float = 40.0     # sigma in feature pixels = blob_scale / depth
    blob_min_sigma: float = 1.0
    blob_max_sigma: float = 8.0


@dataclass(frozen=True)
class SceneConfig:
    grid: BevGrid
    cameras: tuple[Camera, ...]
    agents: tuple[AgentSpec, ...]
    frames: int
    fps: float = 2.0
    seed: int = 0
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if not self.cameras:
            raise ConfigError("scene needs at least one camera")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate camera ids in rig: {ids}")
        agent_ids = [a.id for a in self.agents]
        if len(set(agent_ids)) != len(agent_ids):
            raise ConfigError(f"duplicate agent ids: {agent_ids}")
        object.__setattr__(self, "cameras", tuple(sorted(self.cameras, key=lambda c: c.id)))
        object.__setattr__(self, "agents", tuple(self.agents))


@dataclass(frozen=True)
class OracleFrame:
    """One simulated frame: per-camera features, ground truth, visibility."""

    index: int
    features: tuple[FeatureMap, ...]   # ordered like SceneConfig.cameras
    gt_ids: np.ndarray                 # (n,) agent ids inside the grid
    gt_xy: np.ndarray                  # (n, 2) meters, float32-exact values
    visibility: np.ndarray             # (n, n_cameras) bool


@dataclass
class _AgentState:
    spec: AgentSpec
    position: np.ndarray
    waypoint_index: int = 1
    alive: bool = True


def ring_rig(
    extent: tuple[float, float, float, float],
    n_cameras: int,
    height: float = 5.0,
    image_size: tuple[int, int] = (1280, 720),
    focal: float = 900.0,
    margin: float = 1.0,
    target_height: float = 0.8,
) -> list[Camera]:
    """Evenly spaced perimeter cameras aimed at the center of `extent`."""
    x_min, x_max, y_min, y_max = extent
    cx = 0.5 * (x_min + x_max)
    cy = 0.5 * (y_min + y_max)
    rx = 0.5 * (x_max - x_min) + margin
    ry = 0.5 * (y_max - y_min) + margin
    width, height_px = image_size
    intr = Intrinsics(fx=focal, fy=focal, cx=width / 2.0, cy=height_px / 2.0,
                      width=width, height=height_px)
    cameras = []
    for k in range(n_cameras):
        angle = 2.0 * math.pi * k / n_cameras
        pos = (cx + rx * math.cos(angle), cy + ry * math.sin(angle), height)
        cameras.append(look_at_camera(pos, (cx, cy, target_height), intr, cam_id=k))
    return cameras


def wildtrack_like_rig(**kwargs) -> tuple[BevGrid, list[Camera]]:
    """Seven ring cameras over the 12x36 m area."""
    grid = wildtrack_grid(**kwargs) if kwargs else wildtrack_grid()
    return grid, ring_rig(grid.extent(), n_cameras=7)


def multiviewx_like_rig(**kwargs) -> tuple[BevGrid, list[Camera]]:
    """Six ring cameras over the 16x25 m area."""
    grid = multiviewx_grid(**kwargs) if kwargs else multiviewx_grid()
    return grid, ring_rig(grid.extent(), n_cameras=6)


def _advance(state: _AgentState, frame: int, seed: int) -> None:
    spec = state.spec
    if spec.waypoints is not None:
        remaining = spec.speed
        pos = state.position.copy()
        while remaining > 0 and state.waypoint_index < len(spec.waypoints):
            target = np.asarray(spec.waypoints[state.waypoint_index], dtype=np.float64)
            gap = float(np.linalg.norm(target - pos))
            if gap <= remaining:
                pos = target
                remaining -= gap
                state.waypoint_index += 1
            else:
                pos = pos + (target - pos) * (remaining / gap)
                remaining = 0.0
        state.position = pos
    else:
        state.position = state.position + np.asarray(spec.velocity, dtype=np.float64)
    if spec.motion_noise > 0:
        rng = np.random.default_rng([seed, _MOTION_STREAM, frame, spec.id])
        state.position = state.position + rng.normal(0.0, spec.motion_noise, size=2)


def _occluded(anchor: np.ndarray, cam_pos: np.ndarray,
              blockers: list[tuple[np.ndarray, float, float]]) -> bool:
    """Does any cylinder cross the camera->anchor segment closer than the anchor?"""
    seg = anchor - cam_pos
    seg_xy = seg[:2]
    denom = float(seg_xy @ seg_xy)
    if denom < 1e-12:
        return False
    for center_xy, radius, height in blockers:
        t = float((center_xy - cam_pos[:2]) @ seg_xy) / denom
        if not (0.0 < t < 1.0):
            continue
        closest_xy = cam_pos[:2] + t * seg_xy
        if float(np.linalg.norm(center_xy - closest_xy)) >= radius:
            continue
        z_at_t = cam_pos[2] + t * seg[2]
        if 0.0 <= z_at_t <= height:
            return True
    return False


def render_oracle_features(
    agents: Sequence[tuple[int, float, float, float, float]],
    camera: Camera,
    noise_sigma: float,
    rng: np.random.Generator | None = None,
    feature: FeatureConfig = FeatureConfig(),
) -> tuple[FeatureMap, np.ndarray]:
    """Render one camera's oracle features for (id, x, y, radius, height) agents.

    Returns the feature map and the per-agent visibility flags.  Blobs are
    painted into channel 0 with elementwise max; `noise_sigma` Gaussian
    noise is then added to every channel.
    """
    fcam = feature_camera(camera, feature.downsample)
    hf, wf = fcam.height, fcam.width
    data = np.zeros((feature.channels, hf, wf), dtype=np.float64)
    cam_pos = camera.position()
    visible = np.zeros(len(agents), dtype=bool)
    for idx, (agent_id, x, y, radius, height) in enumerate(agents):
        anchor = np.array([x, y, 0.5 * height])
        point = project(fcam, anchor)
        if isinstance(point, BehindCamera):
            continue
        if not (0.0 <= point.u <= wf - 1.0 and 0.0 <= point.v <= hf - 1.0):
            continue
        blockers = [
            (np.array([ox, oy]), orad, oheight)
            for other_idx, (oid, ox, oy, orad, oheight) in enumerate(agents)
            if other_idx != idx
        ]
        if _occluded(anchor, cam_pos, blockers):
            continue
        visible[idx] = True
        sigma = min(max(feature.blob_scale / point.depth, feature.blob_min_sigma),
                    feature.blob_max_sigma)
        reach = int(math.ceil(3.0 * sigma))
        u0 = max(0, int(math.floor(point.u)) - reach)
        u1 = min(wf, int(math.ceil(point.u)) + reach + 1)
        v0 = max(0, int(math.floor(point.v)) - reach)
        v1 = min(hf, int(math.ceil(point.v)) + reach + 1)
        uu = np.arange(u0, u1, dtype=np.float64) - point.u
        vv = np.arange(v0, v1, dtype=np.float64) - point.v
        blob = np.exp(-(vv[:, None] ** 2 + uu[None, :] ** 2) / (2.0 * sigma * sigma))
        np.maximum(data[0, v0:v1, u0:u1], blob, out=data[0, v0:v1, u0:u1])
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        data += rng.normal(0.0, noise_sigma, size=data.shape)
    return FeatureMap(data.astype(np.float32)), visible


def simulate(config: SceneConfig) -> list[OracleFrame]:
    """Run the scene; agents leaving the grid despawn permanently."""
    states = {
        spec.id: _AgentState(spec=spec, position=np.asarray(
            spec.start if spec.waypoints is None else spec.waypoints[0], dtype=np.float64))
        for spec in config.agents
    }
    frames: list[OracleFrame] = []
    for frame in range(config.frames):
        active: list[tuple[int, float, float, float, float]] = []
        for spec in config.agents:
            state = states[spec.id]
            if not state.alive or frame < spec.spawn_frame:
                continue
            if frame > spec.spawn_frame:
                _advance(state, frame, config.seed)
            # Emit at float32 precision so serialization round-trips exactly.
            state.position = np.float64(np.float32(state.position))
            if world_to_cell(config.grid, state.position) is OUT_OF_GRID:
                state.alive = False
                continue
            active.append((spec.id, float(state.position[0]), float(state.position[1]),
                           spec.radius, spec.height))
        features = []
        visibility = np.zeros((len(active), len(config.cameras)), dtype=bool)
        for ci, camera in enumerate(config.cameras):
            rng = np.random.default_rng([config.seed, _PIXEL_STREAM, frame, camera.id])
            fm, visible = render_oracle_features(
                active, camera, config.feature.noise_sigma, rng, config.feature
            )
            features.append(fm)
            visibility[:, ci] = visible
        frames.append(
            OracleFrame(
                index=frame,
                features=tuple(features),
                gt_ids=np.array([a[0] for a in active], dtype=np.int64),
                gt_xy=np.array([[a[1], a[2]] for a in active], dtype=np.float64).reshape(-1, 2),
                visibility=visibility,
            )
        )
    return frames


def export_ground_truth(
    frames: Sequence[OracleFrame], cameras: Sequence[Camera], out_dir: str | Path
) -> tuple[Path, Path]:
    """Write gt.csv and calibration.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt_path = out / "gt.csv"
    lines = ["frame,id,x,y"]
    for frame in frames:
        for gid, (x, y) in zip(frame.gt_ids, frame.gt_xy):
            lines.append(f"{frame.index},{int(gid)},{format(x, '.9g')},{format(y, '.9g')}")
    gt_path.write_text("\n".join(lines) + "\n")
    calib_path = out / "calibration.json"
    save_calibration(cameras, calib_path)
    return gt_path, calib_path


def feature_filename(frame: int, camera_id: int) -> str:
    return f"f{frame:05d}_c{camera_id:02d}.bin"


def export_scene(frames: Sequence[OracleFrame], config: SceneConfig,
                 out_dir: str | Path) -> Path:
    """Write ground truth, calibration, per-frame features, and meta.json."""
    out = Path(out_dir)
    export_ground_truth(frames, config.cameras, out)
    feature_dir = out / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        for camera, fm in zip(config.cameras, frame.features):
            write_feature_map(fm, feature_dir / feature_filename(frame.index, camera.id))
    meta = {
        "frames": len(frames),
        "camera_ids": [c.id for c in config.cameras],
        "grid": _grid_to_dict(config.grid),
        "downsample": config.feature.downsample,
        "channels": config.feature.channels,
        "seed": config.seed,
        "fps": config.fps,
    }
    meta_path = out / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return out


def _grid_to_dict(grid: BevGrid) -> dict:
    return {
        "origin": list(grid.origin), "cell_size": grid.cell_size,
        "width": grid.width, "height": grid.height,
        "z_min": grid.z_min, "z_max": grid.z_max, "z_bins": grid.z_bins,
    }


def grid_from_dict(entry: dict) -> BevGrid:
    try:
        return BevGrid(
            origin=tuple(entry["origin"]), cell_size=float(entry["cell_size"]),
            width=int(entry["width"]), height=int(entry["height"]),
            z_min=float(entry.get("z_min", 0.0)), z_max=float(entry.get("z_max", 2.0)),
            z_bins=int(entry.get("z_bins", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid config: {exc}") from exc


def _agent_from_dict(entry: dict) -> AgentSpec:
    try:
        return AgentSpec(
            id=int(entry["id"]),
            start=tuple(entry["start"]) if "start" in entry else None,
            velocity=tuple(entry.get("velocity", (0.0, 0.0))),
            waypoints=tuple(tuple(w) for w in entry["waypoints"]) if "waypoints" in entry else None,
            speed=float(entry.get("speed", 0.0)),
            radius=float(entry.get("radius", 0.3)),
            height=float(entry.get("height", 1.7)),
            spawn_frame=int(entry.get("spawn_frame", 0)),
            motion_noise=float(entry.get("motion_noise", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad agent config: {exc}") from exc


def _cameras_from_config(entry) -> list[Camera]:
    from .geometry import Extrinsics  # local import to keep module top tidy

    if isinstance(entry, dict) and "preset" in entry:
        preset = entry["preset"]
        if preset == "wildtrack_like":
            return wildtrack_like_rig()[1]
        if preset == "multiviewx_like":
            return multiviewx_like_rig()[1]
        raise ConfigError(f"unknown rig preset {preset!r}")
    if isinstance(entry, dict) and "ring" in entry:
        ring = entry["ring"]
        try:
            return ring_rig(
                extent=tuple(ring["extent"]),
                n_cameras=int(ring["n_cameras"]),
                height=float(ring.get("height", 5.0)),
                image_size=tuple(ring.get("image_size", (1280, 720))),
                focal=float(ring.get("focal", 900.0)),
                margin=float(ring.get("margin", 1.0)),
                target_height=float(ring.get("target_height", 0.8)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad ring rig config: {exc}") from exc
    if isinstance(entry, list):
        cameras = []
        for item in entry:
            try:
                K = np.asarray(item["K"], dtype=np.float64).reshape(3, 3)
                cameras.append(
                    Camera(
                        intrinsics=Intrinsics(
                            fx=float(K[0, 0]), fy=float(K[1, 1]),
                            cx=float(K[0, 2]), cy=float(K[1, 2]),
                            width=int(item["width"]), height=int(item["height"]),
                        ),
                        extrinsics=Extrinsics(
                            R=np.asarray(item["R"], dtype=np.float64).reshape(3, 3),
                            t=np.asarray(item["t"], dtype=np.float64).reshape(3),
                        ),
                        id=int(item["id"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad camera entry: {exc}") from exc
        return cameras
    raise ConfigError("cameras must be a preset, a ring spec, or a calibration list")


def scene_from_dict(entry: dict) -> SceneConfig:
    try:
        grid = grid_from_dict(entry["grid"])
        cameras = _cameras_from_config(entry["cameras"])
        agents = tuple(_agent_from_dict(a) for a in entry.get("agents", []))
        feature_entry = entry.get("feature", {})
        feature = FeatureConfig(
            channels=int(feature_entry.get("channels", 1)),
            downsample=int(feature_entry.get("downsample", 4)),
            noise_sigma=float(feature_entry.get("noise_sigma", 0.0)),
            blob_scale=float(feature_entry.get("blob_scale", 40.0)),
            blob_min_sigma=float(feature_entry.get("blob_min_sigma", 1.0)),
            blob_max_sigma=float(feature_entry.get("blob_max_sigma", 8.0)),
        )
        return SceneConfig(
            grid=grid, cameras=tuple(cameras), agents=agents,
            frames=int(entry["frames"]), fps=float(entry.get("fps", 2.0)),
            seed=int(entry.get("seed", 0)), feature=feature,
        )
    except KeyError as exc:
        raise ConfigError(f"scene config missing key {exc}") from exc


def load_scene(path: str | Path) -> SceneConfig:
    try:
        entry = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot load scene config ({exc})") from exc
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: scene config must be a JSON object")
    return scene_from_dict(entry)
