"""Kalman box filter, assignment, and the single-plane tracker.

Derived expectations come from independent oracles implemented here:
an exhaustive-permutation assignment solver and a hand-rolled 2-state
Kalman filter.
"""

import itertools
import math

import numpy as np
import pytest

from dynamap.errors import DegenerateBoxError
from dynamap.geometry import Box2D
from dynamap.tracking import (
    PlaneTracker,
    TrackerConfig,
    box_to_measurement,
    hungarian_assign,
    kalman_predict,
    kalman_update,
    state_from_box,
    state_to_box,
)


def brute_force_min_cost(cost: np.ndarray) -> float:
    """Exhaustive minimum assignment cost over all permutations.

    Sums each candidate in row-sorted pair order so the result is
    bit-comparable against an implementation that does the same."""
    n, m = cost.shape
    k = min(n, m)
    best = math.inf
    if n <= m:
        for cols in itertools.permutations(range(m), k):
            total = sum(cost[r, c] for r, c in enumerate(cols))
            best = min(best, total)
    else:
        for rows in itertools.permutations(range(n), k):
            total = sum(cost[r, c]
                        for r, c in sorted(zip(rows, range(k))))
            best = min(best, total)
    return best


def square(x, y, size=1.0):
    return Box2D((x, y), (x + size, y + size))


class TestHungarian:
    def test_diagonal_cheap(self):
        cost = np.ones((3, 3)) - np.eye(3)
        assert hungarian_assign(cost) == [(0, 0), (1, 1), (2, 2)]

    def test_single_cell(self):
        assert hungarian_assign(np.array([[3.0]])) == [(0, 0)]

    def test_empty(self):
        assert hungarian_assign(np.zeros((0, 0))) == []
        assert hungarian_assign(np.zeros((0, 3))) == []

    def test_tie_break_prefers_low_indices(self):
        # All-equal costs: every assignment is optimal; the lexicographic
        # rule picks the diagonal.
        assert hungarian_assign(np.zeros((3, 3))) == [(0, 0), (1, 1), (2, 2)]
        assert hungarian_assign(np.zeros((2, 4))) == [(0, 0), (1, 1)]
        # Wide tie among rows: only one column, prefer row 0.
        assert hungarian_assign(np.zeros((3, 1))) == [(0, 0)]

    def test_rectangular_uses_min_side(self):
        cost = np.array([[5.0, 1.0, 3.0],
                         [4.0, 2.0, 9.0]])
        pairs = hungarian_assign(cost)
        assert len(pairs) == 2
        total = sum(cost[r, c] for r, c in pairs)
        assert total == brute_force_min_cost(cost)

    def test_tall_matrix_optimal_rows_chosen(self):
        cost = np.array([[5.0], [0.0], [7.0]])
        assert hungarian_assign(cost) == [(1, 0)]

    def test_random_matrices_match_brute_force(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 6))
            m = int(rng.integers(1, 6))
            cost = rng.uniform(0, 10, size=(n, m))
            pairs = hungarian_assign(cost)
            assert len(pairs) == min(n, m)
            rows = [r for r, _ in pairs]
            cols = [c for _, c in pairs]
            assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
            total = sum(cost[r, c] for r, c in pairs)
            assert total == pytest.approx(brute_force_min_cost(cost), abs=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            hungarian_assign(np.array([[np.inf, 1.0]]))


class ScalarCvKalman:
    """Independent 2-state (position, velocity) Kalman filter used as an
    oracle for one coordinate of the box filter. Mirrors the same noise
    shape: P0 diag, Q = diag(q_p, q_v) * dt, R scalar."""

    def __init__(self, z0, p0=(10.0, 1e4), q=(1.0, 0.01), r=1.0):
        self.x = np.array([z0, 0.0])
        self.P = np.diag(p0)
        self.q = np.array(q)
        self.r = r

    def predict(self, dt):
        f = np.array([[1.0, dt], [0.0, 1.0]])
        self.x = f @ self.x
        self.P = f @ self.P @ f.T + np.diag(self.q) * dt

    def update(self, z):
        h = np.array([[1.0, 0.0]])
        s = h @ self.P @ h.T + self.r
        k = (self.P @ h.T) / s
        self.x = self.x + (k * (z - h @ self.x)).ravel()
        ikh = np.eye(2) - k @ h
        self.P = ikh @ self.P @ ikh.T + k * self.r @ k.T


class TestKalman:
    cfg = TrackerConfig()

    def test_zero_velocity_predict_keeps_state(self):
        st = state_from_box(square(2, 3))
        out = kalman_predict(st, 0.7, self.cfg)
        np.testing.assert_allclose(out.x, st.x, atol=1e-12)
        # covariance grows
        assert np.trace(out.P) > np.trace(st.P)

    def test_zero_dt_is_identity(self):
        st = state_from_box(square(2, 3))
        st.x[4] = 1.5
        out = kalman_predict(st, 0.0, self.cfg)
        np.testing.assert_allclose(out.x, st.x)
        np.testing.assert_allclose(out.P, st.P)

    def test_velocity_advances_center(self):
        st = state_from_box(square(0, 0))  # center (0.5, 0.5)
        st.x[4] = 1.0  # 1 m/s in the first coordinate
        out = kalman_predict(st, 0.5, self.cfg)
        assert out.x[0] == pytest.approx(0.5 + 0.5)  # moved by v * dt
        assert out.x[1] == pytest.approx(0.5)        # other center untouched

    def test_aspect_ratio_has_no_velocity(self):
        st = state_from_box(Box2D((0, 0), (2, 1)))
        st.x[4:] = 1.0
        out = kalman_predict(st, 1.0, self.cfg)
        assert out.x[3] == pytest.approx(st.x[3])

    def test_covariance_symmetric(self):
        st = state_from_box(square(0, 0))
        for _ in range(5):
            st = kalman_predict(st, 0.3, self.cfg)
            st = kalman_update(st, square(0.01, 0.02), self.cfg)
        np.testing.assert_allclose(st.P, st.P.T, atol=1e-9)
        assert np.all(np.diag(st.P) >= 0)

    def test_update_with_predicted_box_and_tiny_noise_keeps_state(self):
        cfg = TrackerConfig(measurement_noise=1e-12)
        st = state_from_box(square(1, 1))
        out = kalman_update(st, square(1, 1), cfg)
        np.testing.assert_allclose(out.x[:4], st.x[:4], atol=1e-9)

    def test_huge_prior_posterior_snaps_to_observation(self):
        st = state_from_box(square(0, 0))
        st.P[:4, :4] *= 1e12  # prior -> infinity limit
        obs = square(5, 7, size=2.0)
        out = kalman_update(st, obs, self.cfg)
        np.testing.assert_allclose(out.x[:4], box_to_measurement(obs), rtol=1e-6)

    def test_update_rejects_degenerate_box(self):
        st = state_from_box(square(0, 0))
        with pytest.raises(DegenerateBoxError):
            kalman_update(st, Box2D((0, 0), (0, 1)), self.cfg)

    def test_matches_scalar_oracle_on_first_coordinate(self, rng):
        # The 7-state filter is block-diagonal, so its (cx, vx) marginal
        # must track an independently coded 2-state filter exactly.
        cfg = TrackerConfig(process_noise=0.02, measurement_noise=0.5)
        box0 = square(1.0, -3.0)
        st = state_from_box(box0)
        oracle = ScalarCvKalman(box_to_measurement(box0)[0],
                                q=(1.0 * 0.02, 0.01 * 0.02), r=1.0 * 0.5)
        x = 1.0
        for _ in range(10):
            dt = float(rng.uniform(0.1, 0.6))
            x += float(rng.normal(0.15, 0.05))
            st = kalman_predict(st, dt, cfg)
            oracle.predict(dt)
            st = kalman_update(st, square(x, -3.0), cfg)
            oracle.update(x + 0.5)  # measurement center = left edge + 0.5
        assert st.x[0] == pytest.approx(oracle.x[0], abs=1e-9)
        assert st.x[4] == pytest.approx(oracle.x[1], abs=1e-9)
        assert st.P[0, 0] == pytest.approx(oracle.P[0, 0], abs=1e-9)
        assert st.P[0, 4] == pytest.approx(oracle.P[0, 1], abs=1e-9)

    def test_noiseless_constant_velocity_three_observations(self):
        # After three exact observations of uniform motion the filter's
        # next prediction lands on the analytic position.
        cfg = TrackerConfig(process_noise=0.0, measurement_noise=1e-9)
        boxes = [square(0.0, 0.0), square(0.1, 0.0), square(0.2, 0.0)]
        st = state_from_box(boxes[0])
        for b in boxes[1:]:
            st = kalman_predict(st, 1.0, cfg)
            st = kalman_update(st, b, cfg)
        st = kalman_predict(st, 1.0, cfg)
        assert st.x[0] == pytest.approx(0.3 + 0.5, abs=1e-6)

    def test_convergence_improves_with_updates(self):
        cfg = TrackerConfig(process_noise=0.0, measurement_noise=0.01)
        st = state_from_box(square(0.0, 0.0))
        errors = []
        x = 0.0
        for i in range(1, 9):
            x = 0.1 * i
            st = kalman_predict(st, 1.0, cfg)
            pred_center = st.x[0]
            errors.append(abs(pred_center - (x + 0.5)))
            st = kalman_update(st, square(x, 0.0), cfg)
        assert errors[5] < errors[1]

    def test_box_roundtrip(self):
        b = Box2D((0.5, -1.0), (2.5, 3.0))
        out = state_to_box(state_from_box(b))
        np.testing.assert_allclose(
            [*out.min_corner, *out.max_corner],
            [*b.min_corner, *b.max_corner], atol=1e-12)

    def test_degenerate_box_state_is_finite(self):
        st = state_from_box(Box2D((1, 1), (1, 2)))
        assert np.all(np.isfinite(st.x))
        out = state_to_box(st)
        assert out.width >= 0 and np.isfinite(out.area)


class TestPlaneTracker:
    def test_cold_start_two_detections(self):
        tr = PlaneTracker(TrackerConfig())
        dets = [(square(0, 0), 14), (square(5, 5), 6)]
        emitted, det_to_track = tr.step(dets, 0.0)
        assert len(emitted) == 2
        assert sorted(det_to_track.keys()) == [0, 1]
        assert emitted[0].track_id != emitted[1].track_id
        for (box, label), tb in zip(dets, emitted):
            np.testing.assert_allclose(
                [*tb.box.min_corner, *tb.box.max_corner],
                [*box.min_corner, *box.max_corner], atol=1e-12)
            assert tb.label == label

    def test_two_point_velocity_within_kf_tolerance(self):
        tr = PlaneTracker(TrackerConfig(process_noise=0.0,
                                        measurement_noise=1e-9))
        tr.step([(square(0, 0), 14)], 0.0)
        tr.step([(square(0.2, 0), 14)], 1.0)
        assert tr.tracks[0].state.x[4] == pytest.approx(0.2, abs=1e-3)

    def test_coasting_emits_predicted_position(self):
        tr = PlaneTracker(TrackerConfig(process_noise=0.0,
                                        measurement_noise=1e-9))
        # three exact observations pin down the velocity
        tr.step([(square(0, 0), 14)], 0.0)
        tr.step([(square(0.2, 0), 14)], 1.0)
        tr.step([(square(0.4, 0), 14)], 1.0)
        emitted, _ = tr.step(None, 1.0)
        assert len(emitted) == 1
        cx = emitted[0].box.center[0]
        assert cx == pytest.approx(0.6 + 0.5, abs=1e-6)

    def test_coasting_motion_is_linear(self):
        tr = PlaneTracker(TrackerConfig(process_noise=0.0,
                                        measurement_noise=1e-9))
        tr.step([(square(0, 0), 14)], 0.0)
        tr.step([(square(0.3, 0.1), 14)], 1.0)
        centers = []
        for _ in range(4):
            emitted, _ = tr.step(None, 0.5)
            centers.append(emitted[0].box.center)
        steps = np.diff(np.asarray(centers), axis=0)
        np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape),
                                   atol=1e-9)

    def test_matching_keeps_ids(self):
        tr = PlaneTracker(TrackerConfig())
        e0, _ = tr.step([(square(0, 0), 14)], 0.0)
        e1, _ = tr.step([(square(0.05, 0), 14)], 1.0)
        assert e0[0].track_id == e1[0].track_id
        assert tr.tracks[0].hits == 2

    def test_unmatched_track_ages_and_dies(self):
        cfg = TrackerConfig(max_age=2)
        tr = PlaneTracker(cfg)
        tr.step([(square(0, 0), 14)], 0.0)
        # detections present but far away: track goes unmatched
        for i in range(1, 4):
            tr.step([(square(50, 50), 14)], 1.0)
        ids = {t.track_id for t in tr.tracks}
        assert 0 not in ids  # first track aged out (age > 2)

    def test_coasting_does_not_age(self):
        tr = PlaneTracker(TrackerConfig(max_age=1))
        tr.step([(square(0, 0), 14)], 0.0)
        for _ in range(10):
            emitted, _ = tr.step(None, 0.1)
        assert len(emitted) == 1  # still alive after many coast steps

    def test_min_hits_gates_emission(self):
        tr = PlaneTracker(TrackerConfig(min_hits=2))
        emitted, _ = tr.step([(square(0, 0), 14)], 0.0)
        assert emitted == []
        emitted, _ = tr.step([(square(0.02, 0), 14)], 1.0)
        assert len(emitted) == 1

    def test_no_duplicate_ids_per_step(self, rng):
        tr = PlaneTracker(TrackerConfig())
        t = 0.0
        for _ in range(15):
            t += 1.0
            dets = [(square(float(rng.uniform(0, 10)), float(rng.uniform(0, 10))), 14)
                    for _ in range(int(rng.integers(0, 5)))]
            emitted, _ = tr.step(dets if dets else None, t)
            ids = [e.track_id for e in emitted]
            assert len(ids) == len(set(ids))

    def test_track_count_bounded(self):
        tr = PlaneTracker(TrackerConfig())
        tr.step([(square(0, 0), 14), (square(3, 3), 14)], 0.0)
        before = len(tr.tracks)
        tr.step([(square(0.01, 0), 14), (square(9, 9), 14),
                 (square(12, 0), 14)], 1.0)
        assert len(tr.tracks) <= before + 3

    def test_crossing_objects_keep_identities(self):
        # Two objects with distinct sizes pass through each other; the
        # IOU gate plus motion prediction must keep ids stable.
        cfg = TrackerConfig(iou_gate=0.3, process_noise=0.0,
                            measurement_noise=1e-6)
        tr = PlaneTracker(cfg)
        ids_small = []
        ids_big = []
        for i in range(11):
            xs = 0.2 * i          # small moves right
            xb = 2.0 - 0.2 * i    # big moves left
            small = Box2D((xs, 0.0), (xs + 0.8, 0.8))
            big = Box2D((xb, 0.0), (xb + 1.8, 1.8))
            emitted, d2t = tr.step([(small, 14), (big, 6)], 1.0 if i else 0.0)
            ids_small.append(d2t[0])
            ids_big.append(d2t[1])
        assert len(set(ids_small)) == 1
        assert len(set(ids_big)) == 1
        assert ids_small[0] != ids_big[0]

    def test_degenerate_detection_does_not_fault(self):
        tr = PlaneTracker(TrackerConfig())
        emitted, _ = tr.step([(Box2D((1, 1), (1, 1)), 14)], 0.0)
        assert len(emitted) == 1
