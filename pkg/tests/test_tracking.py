import numpy as np
import pytest

from diarlab.tracking import (
    BBox,
    Detection,
    FaceTracker,
    KalmanState,
    TrackStatus,
    associate,
    iou,
    kf_initiate,
    kf_predict,
    kf_update,
    track_step,
)

POS, VEL = 1.0 / 20, 1.0 / 160


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class KalmanOracle:
    """Plain matrix-arithmetic reference (np.linalg.inv based)."""

    F = np.eye(8)
    H = np.eye(4, 8)
    for i in range(4):
        F[i, i + 4] = 1.0

    @staticmethod
    def predict(mean, cov):
        h = mean[3]
        q = np.diag(
            np.array([POS * h, POS * h, 1e-2, POS * h, VEL * h, VEL * h, 1e-5, VEL * h]) ** 2
        )
        m = KalmanOracle.F @ mean
        p = KalmanOracle.F @ cov @ KalmanOracle.F.T + q
        return m, (p + p.T) / 2

    @staticmethod
    def update(mean, cov, z):
        h = mean[3]
        r = np.diag(np.array([POS * h, POS * h, 1e-1, POS * h]) ** 2)
        H = KalmanOracle.H
        s = H @ cov @ H.T + r
        k = cov @ H.T @ np.linalg.inv(s)
        m = mean + k @ (z - H @ mean)
        p = cov - k @ s @ k.T
        return m, (p + p.T) / 2


class TestIou:
    def test_identical(self):
        assert iou(BBox(1, 2, 3, 4), BBox(1, 2, 3, 4)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0

    def test_known_value(self):
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)) == pytest.approx(1 / 7)

    def test_symmetric(self):
        a, b = BBox(0, 0, 3, 2), BBox(1, 1, 4, 4)
        assert iou(a, b) == iou(b, a)


class TestKalman:
    def test_zero_velocity_predict_keeps_mean(self):
        s = kf_initiate(BBox(10, 20, 30, 40))
        p = kf_predict(s)
        assert np.allclose(p.mean, s.mean)
        assert np.trace(p.covariance) > np.trace(s.covariance)

    def test_velocity_moves_position(self):
        s = kf_initiate(BBox(0, 0, 20, 20))
        mean = s.mean.copy()
        mean[4] = 2.0  # vcx
        s = KalmanState(mean, s.covariance)
        assert kf_predict(s).mean[0] == pytest.approx(mean[0] + 2.0)

    def test_zero_innovation_update(self):
        s = kf_predict(kf_initiate(BBox(10, 20, 30, 40)))
        measurement = BBox.from_xyah(s.mean[:4])
        u = kf_update(s, measurement)
        assert np.allclose(u.mean[:4], s.mean[:4], atol=1e-9)
        assert np.trace(u.covariance) < np.trace(s.covariance)

    def test_update_always_contracts_trace(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = kf_predict(kf_initiate(_random_box(rng)))
            u = kf_update(s, _random_box(rng, near=s.mean))
            assert np.trace(u.covariance) < np.trace(s.covariance)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(42)
        state = kf_initiate(_random_box(rng))
        for cycle in range(2000):
            predicted = kf_predict(state)
            om, oc = KalmanOracle.predict(state.mean, state.covariance)
            assert np.allclose(predicted.mean, om, atol=1e-9)
            assert np.allclose(predicted.covariance, oc, atol=1e-9)

            z_box = _random_box(rng, near=predicted.mean)
            updated = kf_update(predicted, z_box)
            om, oc = KalmanOracle.update(predicted.mean, predicted.covariance, z_box.to_xyah())
            assert np.allclose(updated.mean, om, atol=1e-9)
            assert np.allclose(updated.covariance, oc, atol=1e-9)
            assert np.linalg.eigvalsh(updated.covariance).min() >= -1e-9
            state = updated


def _random_box(rng, near=None):
    if near is None:
        cx, cy = rng.uniform(50, 500, size=2)
        a = rng.uniform(0.5, 2.0)
        h = rng.uniform(20, 120)
    else:
        cx = near[0] + rng.normal(0, 2)
        cy = near[1] + rng.normal(0, 2)
        a = max(0.2, near[2] + rng.normal(0, 0.05))
        h = max(5.0, near[3] + rng.normal(0, 2))
    w = a * h
    return BBox(cx - w / 2, cy - h / 2, w, h)


class TestAssociate:
    def test_single_pair(self):
        tracker = FaceTracker()
        tracker.step(0, [Detection(0, BBox(10, 10, 20, 20), 0.9)])
        matches, ut, ud = associate(tracker.active_tracks, [Detection(1, BBox(10, 10, 20, 20), 0.9)])
        assert matches == [(0, 0)] and ut == [] and ud == []

    def test_iou_gate(self):
        tracker = FaceTracker()
        tracker.step(0, [Detection(0, BBox(10, 10, 20, 20), 0.9)])
        matches, ut, ud = associate(tracker.active_tracks, [Detection(1, BBox(500, 500, 20, 20), 0.9)])
        assert matches == [] and ut == [0] and ud == [0]

    def test_appearance_beats_crossed_boxes(self):
        e1, e2 = unit([1, 0, 0, 0]), unit([0, 1, 0, 0])
        tracker = FaceTracker()
        tracker.step(
            0,
            [
                Detection(0, BBox(100, 100, 60, 60), 0.9, e1),
                Detection(0, BBox(130, 100, 60, 60), 0.9, e2),
            ],
        )
        tracks = tracker.active_tracks
        # Each detection sits closest to the *other* identity's box; the
        # orthogonal embeddings must override the crossed positions.
        dets = [
            Detection(1, BBox(124, 100, 60, 60), 0.9, e1),
            Detection(1, BBox(106, 100, 60, 60), 0.9, e2),
        ]
        from diarlab.tracking import iou

        assert iou(tracks[0].predicted_box, dets[1].bbox) > iou(
            tracks[0].predicted_box, dets[0].bbox
        )
        matches, _, _ = associate(tracks, dets)
        match_map = dict(matches)
        assert match_map[0] == 0  # track with e1 takes the e1 detection
        assert match_map[1] == 1

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            associate([], [], lam=1.5)


class TestFaceTracker:
    def test_stationary_target_single_confirmed_track(self):
        tracker = FaceTracker()
        for i in range(10):
            tracker.step(i, [Detection(i, BBox(50, 50, 30, 30), 0.9)])
        confirmed = tracker.confirmed_tracks
        assert len(confirmed) == 1
        assert len(tracker.tracks) == 1
        assert len(confirmed[0].history) == 10

    def test_confirms_after_three_consecutive_hits(self):
        tracker = FaceTracker(n_init=3)
        tracker.step(0, [Detection(0, BBox(0, 0, 10, 10), 0.9)])
        assert tracker.tracks[0].status is TrackStatus.TENTATIVE
        tracker.step(1, [Detection(1, BBox(0, 0, 10, 10), 0.9)])
        assert tracker.tracks[0].status is TrackStatus.TENTATIVE
        tracker.step(2, [Detection(2, BBox(0, 0, 10, 10), 0.9)])
        assert tracker.tracks[0].status is TrackStatus.CONFIRMED

    def test_tentative_dies_on_first_miss(self):
        tracker = FaceTracker()
        tracker.step(0, [Detection(0, BBox(0, 0, 10, 10), 0.9)])
        tracker.step(1, [])
        assert tracker.tracks[0].status is TrackStatus.DELETED

    def test_max_age_deletion(self):
        tracker = FaceTracker(max_age=30)
        for i in range(3):
            tracker.step(i, [Detection(i, BBox(0, 0, 10, 10), 0.9)])
        track = tracker.tracks[0]
        assert track.status is TrackStatus.CONFIRMED
        for i in range(3, 33):
            tracker.step(i, [])
        assert track.status is TrackStatus.CONFIRMED  # 30 misses: still alive
        tracker.step(33, [])
        assert track.status is TrackStatus.DELETED  # 31st miss

    def test_two_parallel_targets_stable_ids(self):
        tracker = FaceTracker()
        for i in range(50):
            dets = [
                Detection(i, BBox(50 + 2 * i, 50, 30, 30), 0.9),
                Detection(i, BBox(50 + 2 * i, 150, 30, 30), 0.9),
            ]
            tracker.step(i, dets)
        assert len(tracker.tracks) == 2
        ids = sorted(t.track_id for t in tracker.tracks)
        assert ids == [1, 2]
        for t in tracker.tracks:
            assert len(t.history) == 50
            ys = {box.y for _, box in t.history}
            assert len(ys) == 1  # never swapped rows

    def test_crossing_targets_keep_ids_via_appearance(self):
        e1, e2 = unit([1, 0, 0]), unit([0, 1, 0])
        tracker = FaceTracker()
        for i in range(50):
            x1 = 50.0 + 4 * i
            x2 = 246.0 - 4 * i
            dets = [
                Detection(i, BBox(x1, 100, 40, 40), 0.9, e1),
                Detection(i, BBox(x2, 100, 40, 40), 0.9, e2),
            ]
            tracker.step(i, dets)
        assert len(tracker.tracks) == 2
        t1 = next(t for t in tracker.tracks if t.track_id == 1)
        t2 = next(t for t in tracker.tracks if t.track_id == 2)
        for i, box in t1.history:
            assert box.x == pytest.approx(50.0 + 4 * i)
        for i, box in t2.history:
            assert box.x == pytest.approx(246.0 - 4 * i)

    def test_non_monotonic_frame_rejected(self):
        tracker = FaceTracker()
        tracker.step(5, [])
        with pytest.raises(ValueError):
            tracker.step(5, [])
        with pytest.raises(ValueError):
            tracker.step(4, [])

    def test_detection_frame_mismatch_rejected(self):
        tracker = FaceTracker()
        with pytest.raises(ValueError):
            tracker.step(0, [Detection(1, BBox(0, 0, 1, 1), 0.5)])

    def test_ids_unique_and_never_reused(self):
        tracker = FaceTracker()
        rng = np.random.default_rng(3)
        for i in range(40):
            dets = []
            for _ in range(int(rng.integers(0, 3))):
                dets.append(Detection(i, _random_box(rng), 0.8))
            tracker.step(i, dets)
        ids = [t.track_id for t in tracker.tracks]
        assert len(ids) == len(set(ids))

    def test_determinism(self):
        def run():
            tracker = FaceTracker()
            rng = np.random.default_rng(17)
            for i in range(30):
                dets = [Detection(i, _random_box(rng), 0.8) for _ in range(int(rng.integers(0, 4)))]
                track_step(tracker, i, dets)
            return [(t.track_id, t.status, tuple(t.history)) for t in tracker.tracks]

        assert run() == run()
