"""End-to-end tracking pipeline over exported scene directories.

Per frame: load the per-camera oracle features, lift them with the
configured method, aggregate across cameras, reduce vertically, and
concatenate the previous frame's decoded map.  The detector on oracle
features is normalization plus peak decoding: the aggregated channel-0
response, scaled to [0, 1], already is the occupancy heatmap.  A motion
field is then estimated per detection by locating the strongest response
in the history channel within a search window, which feeds the tracker's
motion cue.

Sampling plans depend only on the rig and grid, so they are built once and
reused for every frame.  `BEVTRACK_THREADS` (default 1) caps how many
cameras are lifted concurrently; results are reduced in camera-id order
either way, keeping outputs bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bev import BevGrid, FeatureMap, TemporalBuffer, VoxelVolume, concat_history, \
    read_feature_map, reduce_vertical, world_to_cell_arrays
from .errors import ConfigError, FormatError
from .geometry import Camera, load_calibration
from .heads import Detection, decode_detections
from .lifting import DeformableSpec, DepthDistribution, SamplePlan, VisibilityMask, \
    aggregate_cameras, aggregate_planes, apply_deformable, apply_plan, \
    build_ground_plan, build_voxel_plan
from .metrics import detection_metrics, load_points_csv, tracking_metrics, \
    write_report_json
from .sim import feature_filename, grid_from_dict
from .tracker import Tracker, TrackerConfig, TrackRecord

LIFT_METHODS = ("perspective", "bilinear", "depth_splat", "deformable")


@dataclass(frozen=True)
class PipelineConfig:
    method: str = "bilinear"
    z_reduce: str = "mean"
    decode_threshold: float = 0.4
    decode_max_k: int = 200
    motion_search_radius: float = 1.0   # meters, history-peak search window
    motion_min_response: float = 0.2    # relative response to accept a history peak
    depth_d0: float = 0.0               # depth_splat bin layout
    depth_delta: float = 1.0
    depth_bins: int = 32
    deformable: DeformableSpec = field(default_factory=DeformableSpec.single_center_tap)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def __post_init__(self):
        if self.method not in LIFT_METHODS:
            raise ConfigError(f"unknown lifting method {self.method!r}; "
                              f"choose one of {LIFT_METHODS}")
        if self.z_reduce not in ("mean", "max"):
            raise ConfigError(f"z_reduce must be 'mean' or 'max', got {self.z_reduce!r}")


def pipeline_from_dict(entry: dict) -> PipelineConfig:
    try:
        tracker_entry = entry.get("tracker", {})
        tracker = TrackerConfig(
            gate=float(tracker_entry.get("gate", 1.0)),
            birth_min_score=float(tracker_entry.get("birth_min_score", 0.3)),
            confirm_hits=int(tracker_entry.get("confirm_hits", 2)),
            max_misses=int(tracker_entry.get("max_misses", 5)),
            use_motion_cue=bool(tracker_entry.get("use_motion_cue", True)),
        )
        deform_entry = entry.get("deformable")
        if deform_entry is None:
            deform = DeformableSpec.single_center_tap()
        else:
            deform = DeformableSpec(
                offsets=np.asarray(deform_entry["offsets"], dtype=np.float64),
                weights=np.asarray(deform_entry["weights"], dtype=np.float64),
            )
        return PipelineConfig(
            method=str(entry.get("method", "bilinear")),
            z_reduce=str(entry.get("z_reduce", "mean")),
            decode_threshold=float(entry.get("decode_threshold", 0.4)),
            decode_max_k=int(entry.get("decode_max_k", 200)),
            motion_search_radius=float(entry.get("motion_search_radius", 1.0)),
            motion_min_response=float(entry.get("motion_min_response", 0.2)),
            depth_d0=float(entry.get("depth_d0", 0.0)),
            depth_delta=float(entry.get("depth_delta", 1.0)),
            depth_bins=int(entry.get("depth_bins", 32)),
            deformable=deform,
            tracker=tracker,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad pipeline config: {exc}") from exc


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    try:
        entry = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot load pipeline config ({exc})") from exc
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: pipeline config must be a JSON object")
    return pipeline_from_dict(entry)


def _thread_count() -> int:
    raw = os.environ.get("BEVTRACK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"BEVTRACK_THREADS must be an integer, got {raw!r}")


@dataclass(frozen=True)
class SceneInputs:
    """A simulated scene directory opened for tracking."""

    root: Path
    grid: BevGrid
    cameras: tuple[Camera, ...]
    frames: int
    downsample: int
    channels: int

    def feature_path(self, frame: int, camera_id: int) -> Path:
        return self.root / "features" / feature_filename(frame, camera_id)


def open_scene(in_dir: str | Path) -> SceneInputs:
    root = Path(in_dir)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{root}: missing meta.json (not a simulated scene directory?)")
    try:
        meta = json.loads(meta_path.read_text())
        grid = grid_from_dict(meta["grid"])
        frames = int(meta["frames"])
        downsample = int(meta["downsample"])
        channels = int(meta["channels"])
        camera_ids = [int(c) for c in meta["camera_ids"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{meta_path}: malformed meta ({exc})") from exc
    cameras = load_calibration(root / "calibration.json")
    by_id = {c.id: c for c in cameras}
    missing = [cid for cid in camera_ids if cid not in by_id]
    if missing:
        raise FormatError(f"{root}: calibration missing cameras {missing}")
    ordered = tuple(by_id[cid] for cid in sorted(camera_ids))
    return SceneInputs(root=root, grid=grid, cameras=ordered, frames=frames,
                       downsample=downsample, channels=channels)


class _Lifter:
    """Per-camera plans plus the aggregation step for one lifting method."""

    def __init__(self, scene: SceneInputs, config: PipelineConfig):
        self.scene = scene
        self.config = config
        self.plans: dict[int, SamplePlan] = {}
        builder = build_ground_plan if config.method == "perspective" else build_voxel_plan
        if config.method != "depth_splat":
            for camera in scene.cameras:
                self.plans[camera.id] = builder(camera, scene.grid, scene.downsample)
        self._depth: DepthDistribution | None = None

    def _depth_distribution(self, feature: FeatureMap) -> DepthDistribution:
        if self._depth is None or self._depth.probs.shape[1:] != (feature.height, feature.width):
            cfg = self.config
            self._depth = DepthDistribution.uniform(
                cfg.depth_d0, cfg.depth_delta, cfg.depth_bins,
                feature.height, feature.width,
            )
        return self._depth

    def _lift_one(self, camera: Camera, feature: FeatureMap):
        cfg = self.config
        grid = self.scene.grid
        if cfg.method == "perspective":
            plan = self.plans[camera.id]
            data = apply_plan(feature, plan)
            return FeatureMap(data), plan.valid.reshape(plan.shape).astype(bool)
        if cfg.method == "bilinear":
            plan = self.plans[camera.id]
            data = apply_plan(feature, plan)
            return VoxelVolume(data, grid), VisibilityMask(
                plan.valid.reshape(plan.shape).astype(bool), camera.id)
        if cfg.method == "deformable":
            plan = self.plans[camera.id]
            data = apply_deformable(feature, cfg.deformable, plan)
            return VoxelVolume(data, grid), VisibilityMask(
                plan.valid.reshape(plan.shape).astype(bool), camera.id)
        # depth_splat
        from .lifting import lift_depth_splat
        depth = self._depth_distribution(feature)
        volume = lift_depth_splat(feature, depth, camera, grid, self.scene.downsample)
        mask = VisibilityMask(np.ones((grid.z_bins, grid.height, grid.width), dtype=bool),
                              camera.id)
        return volume, mask

    def lift_frame(self, features: list[FeatureMap]) -> FeatureMap:
        """Lift all cameras and fuse into one BEV feature map."""
        threads = _thread_count()
        cameras = self.scene.cameras
        if threads > 1 and len(cameras) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                lifted = list(pool.map(self._lift_one, cameras, features))
        else:
            lifted = [self._lift_one(cam, fm) for cam, fm in zip(cameras, features)]
        if self.config.method == "perspective":
            fused, _ = aggregate_planes(lifted)
            return fused
        volume, _ = aggregate_cameras(lifted)
        return reduce_vertical(volume, self.config.z_reduce)


def normalize_response(score: np.ndarray) -> np.ndarray:
    """Scale a channel response to [0, 1] (zeros when the frame is flat)."""
    clipped = np.clip(score, 0.0, None)
    peak = float(clipped.max()) if clipped.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(clipped, dtype=np.float32)
    return (clipped / peak).astype(np.float32)


def estimate_motion_field(
    detections: list[Detection],
    history: np.ndarray,
    grid: BevGrid,
    search_radius: float,
    min_response: float,
) -> np.ndarray:
    """Motion field (cells) from history-channel peaks near each detection.

    For every detection cell, the strongest history response within the
    search window becomes the previous-frame position estimate; windows
    with no response above `min_response` leave the motion at zero.
    """
    motion = np.zeros((2, grid.height, grid.width), dtype=np.float32)
    if history is None or not detections:
        return motion
    reach = max(1, int(round(search_radius / grid.cell_size)))
    positions = np.array([[d.x, d.y] for d in detections])
    cells, inside = world_to_cell_arrays(grid, positions)
    for det, (i, j), ok in zip(detections, cells, inside):
        if not ok:
            continue
        top = max(0, i - reach)
        bottom = min(grid.height, i + reach + 1)
        left = max(0, j - reach)
        right = min(grid.width, j + reach + 1)
        window = history[top:bottom, left:right]
        if window.size == 0 or float(window.max()) < min_response:
            continue
        flat = int(np.argmax(window))
        pi = top + flat // window.shape[1]
        pj = left + flat % window.shape[1]
        motion[0, i, j] = pj - j
        motion[1, i, j] = pi - i
    return motion


def run_tracking(in_dir: str | Path, config: PipelineConfig) -> list[TrackRecord]:
    """Track a simulated scene directory; returns all emitted track records."""
    scene = open_scene(in_dir)
    lifter = _Lifter(scene, config)
    buffer = TemporalBuffer(capacity=1, history_channels=1)
    tracker = Tracker(config.tracker)
    zeros_offsets = np.zeros((2, scene.grid.height, scene.grid.width), dtype=np.float32)
    records: list[TrackRecord] = []
    for frame in range(scene.frames):
        features = [read_feature_map(scene.feature_path(frame, cam.id))
                    for cam in scene.cameras]
        for cam, fm in zip(scene.cameras, features):
            expected = (scene.channels, cam.height // scene.downsample,
                        cam.width // scene.downsample)
            if fm.data.shape != expected:
                raise FormatError(
                    f"{scene.feature_path(frame, cam.id)}: feature shape "
                    f"{fm.data.shape} does not match meta {expected}"
                )
        bev_now = lifter.lift_frame(features)
        fused = concat_history(bev_now, buffer)
        heatmap = normalize_response(fused.data[0])
        history = fused.data[bev_now.channels] if len(buffer) else None
        peaks = decode_detections(heatmap, zeros_offsets, zeros_offsets, scene.grid,
                                  config.decode_threshold, config.decode_max_k)
        motion = estimate_motion_field(peaks, history, scene.grid,
                                       config.motion_search_radius,
                                       config.motion_min_response)
        detections = decode_detections(heatmap, zeros_offsets, motion, scene.grid,
                                       config.decode_threshold, config.decode_max_k)
        records.extend(tracker.step(detections))
        buffer.push(frame, FeatureMap(heatmap[None]))
    return records


def write_tracks_csv(path: str | Path, records: list[TrackRecord]) -> None:
    """Write `frame,id,x,y,score` rows (meters, header required)."""
    lines = ["frame,id,x,y,score"]
    for rec in records:
        lines.append(
            f"{rec.frame},{rec.track_id},{format(rec.x, '.9g')},"
            f"{format(rec.y, '.9g')},{format(rec.score, '.9g')}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def provenance_block(config_payload: bytes | None, seed: int | None = None) -> dict:
    return {
        "config_sha256": config_hash(config_payload) if config_payload else None,
        "seed": seed,
        "version": __version__,
    }


def run_evaluation(
    gt_path: str | Path,
    hyp_path: str | Path,
    mode: str,
    out_path: str | Path | None = None,
    r: float | None = None,
    provenance: dict | None = None,
):
    """Evaluate a hypothesis CSV against ground truth; optionally write JSON."""
    frames = load_points_csv(gt_path, hyp_path)
    if mode == "detection":
        report = detection_metrics(frames, r=0.5 if r is None else r)
    elif mode == "tracking":
        report = tracking_metrics(frames, r=1.0 if r is None else r)
    else:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if out_path is not None:
        write_report_json(report, out_path, provenance)
    return report
