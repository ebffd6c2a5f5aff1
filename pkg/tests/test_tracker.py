"""Kalman filter, association, and track lifecycle tests.

Assignment optimality oracle: exhaustive search over permutations, up to
7x7 cost matrices.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from bevtrack.heads import Detection
from bevtrack.tracker import (
    KalmanState,
    Track,
    TrackStatus,
    Tracker,
    TrackerConfig,
    associate,
    kalman_predict,
    kalman_update,
)


def make_detection(x, y, score=0.9, prev=None) -> Detection:
    px, py = prev if prev is not None else (x, y)
    return Detection(x=x, y=y, score=score, prev_x=px, prev_y=py)


class TestKalman:
    def test_zero_velocity_keeps_position(self):
        state = KalmanState(x=np.array([2.0, 3.0, 0.0, 0.0]), P=np.eye(4))
        out = kalman_predict(state)
        assert np.allclose(out.position(), [2.0, 3.0])
        assert np.trace(out.P) > np.trace(state.P)

    def test_linear_motion(self):
        state = KalmanState(x=np.array([0.0, 0.0, 1.0, 2.0]), P=np.eye(4))
        out = kalman_predict(state)
        assert np.allclose(out.x, [1.0, 2.0, 1.0, 2.0])

    def test_predict_grows_trace(self):
        rng = np.random.default_rng(0)
        state = KalmanState(x=rng.normal(size=4), P=np.eye(4) * 0.01)
        for _ in range(5):
            out = kalman_predict(state)
            assert np.trace(out.P) > np.trace(state.P)
            state = out

    def test_update_at_prediction_keeps_position(self):
        state = KalmanState(x=np.array([1.0, -1.0, 0.0, 0.0]), P=np.eye(4))
        out = kalman_update(state, (1.0, -1.0))
        assert np.allclose(out.position(), [1.0, -1.0], atol=1e-12)

    def test_update_never_grows_trace(self):
        rng = np.random.default_rng(1)
        state = KalmanState(x=np.zeros(4), P=np.eye(4))
        for _ in range(10):
            z = rng.normal(size=2)
            out = kalman_update(state, z)
            assert np.trace(out.P) <= np.trace(state.P) + 1e-12
            state = kalman_predict(out)

    def test_converges_to_fixed_point(self):
        cfg = TrackerConfig()
        state = KalmanState.from_measurement((5.0, 5.0), cfg)
        for _ in range(20):
            state = kalman_update(kalman_predict(state, cfg.process_noise),
                                  (0.0, 0.0), cfg.measurement_noise)
        assert np.linalg.norm(state.position()) < 1e-3

    def test_velocity_estimate_on_straight_line(self):
        cfg = TrackerConfig()
        v = np.array([1.0, -0.5])
        state = KalmanState.from_measurement((0.0, 0.0), cfg)
        for k in range(1, 11):
            state = kalman_update(kalman_predict(state, cfg.process_noise),
                                  k * v, cfg.measurement_noise)
        assert np.linalg.norm(state.velocity() - v) < 1e-2

    def test_covariance_psd_through_interleavings(self):
        rng = np.random.default_rng(2)
        state = KalmanState.from_measurement((0.0, 0.0), TrackerConfig())
        for _ in range(200):
            if rng.random() < 0.6:
                state = kalman_predict(state)
            else:
                state = kalman_update(state, rng.normal(scale=3.0, size=2))
            P = state.P
            assert np.abs(P - P.T).max() < 1e-9
            assert np.linalg.eigvalsh(P).min() > -1e-9

    def test_invalid_covariance_rejected(self):
        with pytest.raises(ValueError):
            KalmanState(x=np.zeros(4), P=-np.eye(4))


def _track_at(pos, track_id=1, prev=None, velocity=(0.0, 0.0)) -> Track:
    state = KalmanState(x=np.array([pos[0], pos[1], velocity[0], velocity[1]]),
                        P=np.eye(4) * 0.01)
    track = Track(id=track_id, kalman=state)
    track.predicted_position = np.asarray(pos, dtype=float)
    track.last_position = np.asarray(prev if prev is not None else pos, dtype=float)
    return track


class TestAssociate:
    def test_single_obvious_match(self):
        config = TrackerConfig()
        tracks = [_track_at((1.0, 1.0))]
        dets = [make_detection(1.1, 1.0, prev=(1.0, 1.0))]
        matches, ut, ud = associate(tracks, dets, config)
        assert matches == [(0, 0)] and not ut and not ud

    def test_gate_excludes_far_pair(self):
        config = TrackerConfig(gate=1.0)
        tracks = [_track_at((0.0, 0.0))]
        dets = [make_detection(5.0, 0.0, prev=(4.0, 0.0))]
        matches, ut, ud = associate(tracks, dets, config)
        assert not matches and ut == [0] and ud == [0]

    def test_crossing_disambiguated_by_motion_cue(self):
        # Both detections sit between the two Kalman predictions, but their
        # previous-frame estimates point back to distinct tracks.  Oracle:
        # brute force over both assignments with the same fused cost.
        config = TrackerConfig(gate=2.0)
        t1 = _track_at((0.0, 0.0), track_id=1, prev=(-0.5, 0.0))
        t2 = _track_at((1.0, 0.0), track_id=2, prev=(1.5, 0.0))
        d_for_t1 = make_detection(0.55, 0.0, prev=(-0.5, 0.0))
        d_for_t2 = make_detection(0.45, 0.0, prev=(1.5, 0.0))
        tracks, dets = [t1, t2], [d_for_t1, d_for_t2]
        from bevtrack.tracker import association_cost
        cost = np.array([[association_cost(t, d, config) for d in dets] for t in tracks])
        straight = cost[0, 0] + cost[1, 1]
        swapped = cost[0, 1] + cost[1, 0]
        assert straight < swapped  # motion cue makes identity assignment optimal
        matches, _, _ = associate(tracks, dets, config)
        assert sorted(matches) == [(0, 0), (1, 1)]

    def test_kalman_only_mode_uses_position_distance(self):
        config = TrackerConfig(gate=2.0, use_motion_cue=False)
        t1 = _track_at((0.0, 0.0), track_id=1, prev=(-0.5, 0.0))
        dets = [make_detection(0.4, 0.0, prev=(10.0, 10.0))]
        matches, _, _ = associate([t1], dets, config)
        assert matches == [(0, 0)]

    def test_gate_monotonicity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            tracks = [_track_at(rng.uniform(0, 5, 2), track_id=k + 1) for k in range(4)]
            dets = [make_detection(*rng.uniform(0, 5, 2)) for _ in range(5)]
            tight = TrackerConfig(gate=0.8)
            loose = TrackerConfig(gate=1.6)
            m_tight, _, _ = associate(tracks, dets, tight)
            m_loose, _, _ = associate(tracks, dets, loose)
            assert set(m_tight) <= set(m_loose) or len(m_tight) <= len(m_loose)

    def test_assignment_cost_optimal_vs_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(1, 8))
            cost = rng.uniform(0, 10, size=(n, n))
            rows, cols = linear_sum_assignment(cost)
            got = cost[rows, cols].sum()
            best = min(
                sum(cost[i, perm[i]] for i in range(n))
                for perm in itertools.permutations(range(n))
            )
            assert got == pytest.approx(best, rel=1e-12)


class TestTrackerLifecycle:
    def test_all_tracks_deleted_after_max_misses(self):
        config = TrackerConfig(confirm_hits=1, max_misses=3)
        tracker = Tracker(config)
        tracker.step([make_detection(1.0, 1.0)])
        assert len(tracker.tracks) == 1
        for _ in range(config.max_misses + 1):
            tracker.step([])
        assert tracker.tracks == []

    def test_occlusion_then_reinit_keeps_id(self):
        config = TrackerConfig(confirm_hits=1, max_misses=5, gate=1.0)
        tracker = Tracker(config)
        records = []
        # Visible for 5 frames, occluded for 2, then re-detected on path.
        for frame in range(5):
            records += tracker.step([make_detection(0.1 * frame, 0.0,
                                                    prev=(0.1 * (frame - 1), 0.0))])
        for _ in range(2):
            tracker.step([])
        records += tracker.step([make_detection(0.7, 0.0, prev=(0.6, 0.0))])
        ids = {r.track_id for r in records}
        assert ids == {1}
        assert tracker.tracks[0].status is TrackStatus.CONFIRMED

    def test_simultaneous_births_get_distinct_increasing_ids(self):
        tracker = Tracker(TrackerConfig(confirm_hits=1))
        records = tracker.step([make_detection(0.0, 0.0), make_detection(5.0, 5.0)])
        assert [r.track_id for r in records] == [1, 2]

    def test_ids_never_reused(self):
        config = TrackerConfig(confirm_hits=1, max_misses=0)
        tracker = Tracker(config)
        tracker.step([make_detection(0.0, 0.0)])
        tracker.step([])  # track dies immediately
        records = tracker.step([make_detection(0.0, 0.0)])
        assert records[0].track_id == 2

    def test_tentative_not_emitted_until_confirmed(self):
        config = TrackerConfig(confirm_hits=2)
        tracker = Tracker(config)
        first = tracker.step([make_detection(1.0, 1.0)])
        assert first == []
        second = tracker.step([make_detection(1.05, 1.0, prev=(1.0, 1.0))])
        assert len(second) == 1

    def test_low_score_detection_does_not_create_track(self):
        config = TrackerConfig(birth_min_score=0.5)
        tracker = Tracker(config)
        tracker.step([make_detection(0.0, 0.0, score=0.4)])
        assert tracker.tracks == []

    def test_deterministic_bit_exact(self):
        rng = np.random.default_rng(7)
        frames = []
        for k in range(20):
            dets = [make_detection(*rng.uniform(0, 10, 2), score=float(rng.uniform(0.5, 1)))
                    for _ in range(int(rng.integers(0, 5)))]
            frames.append(dets)

        def run():
            tracker = Tracker(TrackerConfig(confirm_hits=1))
            out = []
            for dets in frames:
                out.extend(tracker.step(dets))
            return out

        assert run() == run()
