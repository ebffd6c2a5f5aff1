"""Online ground-plane tracker: constant-velocity Kalman filter plus
Hungarian association over a motion/Kalman fused cost.

Association cost between a track and a detection is the smaller of two
distances: the detection's predicted previous-frame position against the
track's last position (the motion cue), and the detection's position
against the track's Kalman prediction.  Either cue being consistent is
enough to keep an identity through a crossing.  Pairs beyond the gate are
forbidden; the assignment is minimum-cost over the survivors.

Track lifecycle: tracks are born tentative, confirmed after `confirm_hits`
matches, marked lost whenever unmatched, and deleted after `max_misses`
consecutive misses.  Lost tracks keep coasting on their Kalman prediction
and stay associable, which re-initializes identities after occlusions.
Only confirmed tracks that matched in the current frame are emitted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .heads import Detection

_FORBIDDEN = 1e9


@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 1.0                # meters, maximum association distance
    birth_min_score: float = 0.3
    confirm_hits: int = 2
    max_misses: int = 5
    process_noise: tuple[float, float, float, float] = (0.1, 0.1, 0.5, 0.5)
    measurement_noise: tuple[float, float] = (0.05, 0.05)
    initial_velocity_std: float = 1.0
    use_motion_cue: bool = True      # False -> Kalman-only association cost

    def __post_init__(self):
        if self.gate <= 0:
            raise ValueError(f"gate must be > 0, got {self.gate}")
        if self.confirm_hits < 1:
            raise ValueError(f"confirm_hits must be >= 1, got {self.confirm_hits}")


_F = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
_H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


@dataclass(frozen=True)
class KalmanState:
    """(x, y, vx, vy) state, meters and meters/frame, with 4x4 covariance."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(4).copy()
        P = np.asarray(self.P, dtype=np.float64).reshape(4, 4).copy()
        if np.abs(P - P.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(P).min() < -1e-9:
            raise ValueError("covariance must be positive semi-definite")
        x.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    def position(self) -> np.ndarray:
        return self.x[:2]

    def velocity(self) -> np.ndarray:
        return self.x[2:]

    @classmethod
    def from_measurement(cls, z, config: TrackerConfig) -> "KalmanState":
        mx, my = config.measurement_noise
        v0 = config.initial_velocity_std
        x = np.array([z[0], z[1], 0.0, 0.0])
        P = np.diag([mx * mx, my * my, v0 * v0, v0 * v0])
        return cls(x=x, P=P)


def kalman_predict(
    state: KalmanState,
    process_noise: Sequence[float] = TrackerConfig().process_noise,
) -> KalmanState:
    """One constant-velocity step (dt = 1 frame) with additive process noise."""
    q = np.asarray(process_noise, dtype=np.float64)
    Q = np.diag(q * q)
    x = _F @ state.x
    P = _F @ state.P @ _F.T + Q
    P = 0.5 * (P + P.T)
    return KalmanState(x=x, P=P)


def kalman_update(
    state: KalmanState,
    z: Sequence[float],
    measurement_noise: Sequence[float] = TrackerConfig().measurement_noise,
) -> KalmanState:
    """Position-only linear-Gaussian update (Joseph-form covariance)."""
    r = np.asarray(measurement_noise, dtype=np.float64)
    R = np.diag(r * r)
    z = np.asarray(z, dtype=np.float64).reshape(2)
    y = z - _H @ state.x
    S = _H @ state.P @ _H.T + R
    K = state.P @ _H.T @ np.linalg.inv(S)
    x = state.x + K @ y
    ImKH = np.eye(4) - K @ _H
    P = ImKH @ state.P @ ImKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return KalmanState(x=x, P=P)


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class Track:
    id: int
    kalman: KalmanState
    age: int = 0
    hits: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    last_score: float = 0.0
    last_position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    predicted_position: np.ndarray = field(default_factory=lambda: np.zeros(2))


def association_cost(track: Track, detection: Detection, config: TrackerConfig) -> float:
    kalman_dist = float(np.linalg.norm(detection.position() - track.predicted_position))
    if not config.use_motion_cue:
        return kalman_dist
    motion_dist = float(np.linalg.norm(detection.prev_position() - track.last_position))
    return min(motion_dist, kalman_dist)


def associate(
    tracks: Sequence[Track],
    detections: Sequence[Detection],
    config: TrackerConfig,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Gated minimum-cost assignment between tracks and detections.

    Returns (matches as (track_idx, det_idx) pairs, unmatched track
    indices, unmatched detection indices).  Tracks are costed against the
    detections in input order, which fixes the result deterministically.
    """
    if not tracks or not detections:
        return [], list(range(len(tracks))), list(range(len(detections)))
    cost = np.empty((len(tracks), len(detections)))
    for ti, track in enumerate(tracks):
        for di, det in enumerate(detections):
            c = association_cost(track, det, config)
            cost[ti, di] = c if c <= config.gate else _FORBIDDEN
    rows, cols = linear_sum_assignment(cost)
    matches = []
    for ti, di in zip(rows, cols):
        if cost[ti, di] <= config.gate:
            matches.append((int(ti), int(di)))
    matched_t = {t for t, _ in matches}
    matched_d = {d for _, d in matches}
    unmatched_t = [i for i in range(len(tracks)) if i not in matched_t]
    unmatched_d = [i for i in range(len(detections)) if i not in matched_d]
    return matches, unmatched_t, unmatched_d


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    track_id: int
    x: float
    y: float
    score: float


class Tracker:
    """Stateful per-sequence tracker; call step() once per frame in order."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self.frame = -1
        self._next_id = 1

    def step(self, detections: Sequence[Detection]) -> list[TrackRecord]:
        """Advance one frame; returns records for confirmed, matched tracks."""
        cfg = self.config
        self.frame += 1
        for track in self.tracks:
            track.kalman = kalman_predict(track.kalman, cfg.process_noise)
            track.predicted_position = track.kalman.position().copy()
            track.age += 1
        matches, unmatched_t, unmatched_d = associate(self.tracks, detections, cfg)
        records = []
        for ti, di in matches:
            track = self.tracks[ti]
            det = detections[di]
            track.kalman = kalman_update(track.kalman, (det.x, det.y), cfg.measurement_noise)
            track.misses = 0
            track.hits += 1
            track.last_score = det.score
            track.last_position = track.kalman.position().copy()
            if track.hits >= cfg.confirm_hits:
                track.status = TrackStatus.CONFIRMED
            if track.status is TrackStatus.CONFIRMED:
                records.append(
                    TrackRecord(
                        frame=self.frame,
                        track_id=track.id,
                        x=float(track.last_position[0]),
                        y=float(track.last_position[1]),
                        score=det.score,
                    )
                )
        for ti in unmatched_t:
            track = self.tracks[ti]
            track.misses += 1
            track.status = TrackStatus.LOST
            track.last_position = track.predicted_position.copy()
        self.tracks = [t for t in self.tracks if t.misses <= cfg.max_misses]
        for di in unmatched_d:
            det = detections[di]
            if det.score < cfg.birth_min_score:
                continue
            state = KalmanState.from_measurement((det.x, det.y), cfg)
            track = Track(
                id=self._next_id,
                kalman=state,
                last_score=det.score,
                last_position=state.position().copy(),
                predicted_position=state.position().copy(),
            )
            if cfg.confirm_hits <= 1:
                track.status = TrackStatus.CONFIRMED
                records.append(
                    TrackRecord(self.frame, track.id, det.x, det.y, det.score)
                )
            self._next_id += 1
            self.tracks.append(track)
        records.sort(key=lambda r: r.track_id)
        return records
