"""SORT-style multi-object tracking on one coordinate plane.

Each tracked box carries a 7-dim constant-velocity Kalman state
[cx, cy, s, r, vx, vy, vs]: center, area, aspect ratio, and the
velocities of everything except the aspect ratio. Data association is
minimum-cost assignment on 1 - IOU, gated afterwards, exactly the
published SORT recipe — except that the filter is dt-aware (frames
arrive at irregular real timestamps) and coasting steps are first-class:
a step without detections advances every track on its constant-velocity
model and still emits the predicted boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateBoxError
from .geometry import Box2D, iou_2d

_EPS_AREA = 1e-12
_EPS_LEN = 1e-9

# Constant-velocity transition: positions and area integrate their
# velocities; aspect ratio has none.
_H = np.zeros((4, 7))
_H[:4, :4] = np.eye(4)

# Noise shape follows SORT practice: measurement diag [1,1,10,10],
# process noise small on velocities; both multiplied by the config scales
# (the plane coordinates here are meters, not pixels, hence small scales).
_R_BASE = np.diag([1.0, 1.0, 10.0, 10.0])
_Q_BASE = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4])
_P0 = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])


@dataclass
class TrackerConfig:
    iou_gate: float = 0.3
    max_age: int = 3
    min_hits: int = 1
    # SORT's published unit-pixel noise translated to meters at desk scale
    # (one pixel at a couple of meters is a few centimeters).
    process_noise: float = 1e-3
    measurement_noise: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError(f"iou_gate {self.iou_gate} outside [0, 1]")
        if self.max_age < 1 or self.min_hits < 1:
            raise ValueError("max_age and min_hits must be >= 1")


@dataclass
class KalmanBoxState:
    """Filter state: mean x (7,) and covariance P (7, 7)."""

    x: np.ndarray
    P: np.ndarray


def _transition(dt: float) -> np.ndarray:
    f = np.eye(7)
    f[0, 4] = dt
    f[1, 5] = dt
    f[2, 6] = dt
    return f


def box_to_measurement(box: Box2D) -> np.ndarray:
    """[cx, cy, area, aspect] with degenerate extents floored so a
    1-pixel box still yields a finite, positive measurement."""
    w = max(box.width, _EPS_LEN)
    h = max(box.height, _EPS_LEN)
    cx, cy = box.center
    return np.array([cx, cy, w * h, w / h])


def measurement_to_box(z) -> Box2D:
    s = max(float(z[2]), _EPS_AREA)
    r = max(float(z[3]), _EPS_AREA)
    w = np.sqrt(s * r)
    h = s / w
    return Box2D((float(z[0]) - w / 2.0, float(z[1]) - h / 2.0),
                 (float(z[0]) + w / 2.0, float(z[1]) + h / 2.0))


def state_from_box(box: Box2D) -> KalmanBoxState:
    x = np.zeros(7)
    x[:4] = box_to_measurement(box)
    return KalmanBoxState(x, _P0.copy())


def state_to_box(st: KalmanBoxState) -> Box2D:
    return measurement_to_box(st.x[:4])


def kalman_predict(st: KalmanBoxState, dt: float, cfg: TrackerConfig) -> KalmanBoxState:
    """Advance the constant-velocity model by ``dt`` seconds.

    dt = 0 is the identity (no covariance growth), which keeps repeated
    prediction at a fixed timestamp idempotent.
    """
    if dt < 0:
        raise ValueError(f"negative dt {dt}")
    f = _transition(dt)
    x = f @ st.x
    if x[2] < _EPS_AREA:
        x[2] = _EPS_AREA
    p = f @ st.P @ f.T + _Q_BASE * (cfg.process_noise * dt)
    return KalmanBoxState(x, (p + p.T) / 2.0)


def kalman_update(st: KalmanBoxState, observed: Box2D, cfg: TrackerConfig) -> KalmanBoxState:
    """Standard linear correct step on [cx, cy, s, r]; Joseph-form covariance."""
    if observed.area <= 0.0:
        raise DegenerateBoxError(f"cannot update with zero-area box {observed}")
    z = box_to_measurement(observed)
    r = _R_BASE * cfg.measurement_noise
    y = z - _H @ st.x
    s = _H @ st.P @ _H.T + r
    k = st.P @ _H.T @ np.linalg.inv(s)
    x = st.x + k @ y
    ikh = np.eye(7) - k @ _H
    p = ikh @ st.P @ ikh.T + k @ r @ k.T
    if x[2] < _EPS_AREA:
        x[2] = _EPS_AREA
    return KalmanBoxState(x, (p + p.T) / 2.0)


def hungarian_assign(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost assignment of min(n, m) (row, col) pairs.

    Among all minimum-cost assignments, returns the one whose sorted pair
    list is lexicographically smallest (lowest row index first, then
    lowest column), so tied costs resolve deterministically. Empty
    matrices yield an empty assignment.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(c)
    best_total = float(c[rows, cols].sum())
    n, m = c.shape
    k = min(n, m)

    # Lexicographic refinement: fix pairs row by row, keeping a pair only
    # if an optimal completion still exists. Ties are rare and matrices
    # are small, so the extra sub-solves are cheap.
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(m))
    budget = best_total
    tol = 1e-9 * max(1.0, abs(best_total))
    row = 0
    while len(pairs) < k and row < n:
        need_after = k - len(pairs) - 1
        rows_after = n - row - 1
        fixed = False
        if need_after <= min(rows_after, len(free_cols) - 1):
            for ci, col in enumerate(free_cols):
                rest = budget - float(c[row, col])
                if need_after == 0:
                    ok = abs(rest) <= tol
                else:
                    sub = c[np.ix_(range(row + 1, n),
                                   [cc for cc in free_cols if cc != col])]
                    sr, sc = linear_sum_assignment(sub)
                    ok = (len(sr) == need_after
                          and abs(float(sub[sr, sc].sum()) - rest) <= tol)
                if ok:
                    pairs.append((row, col))
                    budget = rest
                    del free_cols[ci]
                    fixed = True
                    break
        if not fixed and rows_after < k - len(pairs):
            # Cannot happen for a feasible problem; fall back to the
            # unrefined optimum rather than return a partial assignment.
            return sorted(zip(rows.tolist(), cols.tolist()))
        row += 1
    if len(pairs) < k:
        return sorted(zip(rows.tolist(), cols.tolist()))
    return pairs


@dataclass(frozen=True)
class TrackedBox2D:
    """A tracker emission: current box, stable id, class label."""

    box: Box2D
    track_id: int
    label: int | None = None


@dataclass
class PlaneTrack:
    track_id: int
    state: KalmanBoxState
    label: int | None
    hits: int = 1
    age_since_update: int = 0


class PlaneTracker:
    """Single-plane tracker. Instances are single-writer: calls to
    ``step`` must be externally serialized; distinct instances are
    independent."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[PlaneTrack] = []
        self._next_id = 0
        self.spawned_total = 0

    def step(
        self,
        detections: list[tuple[Box2D, int | None]] | None,
        dt: float,
    ) -> tuple[list[TrackedBox2D], dict[int, int]]:
        """Advance all tracks by ``dt`` and associate detections if given.

        ``detections = None`` is a pure coasting step: constant-velocity
        prediction only, no lifecycle aging. With detections present,
        matched tracks are corrected, unmatched detections spawn tracks,
        unmatched tracks age and are dropped past ``max_age``.

        Returns the emitted boxes (tracks with enough hits) and the
        mapping detection index -> track id for this step.
        """
        cfg = self.cfg
        for tr in self.tracks:
            tr.state = kalman_predict(tr.state, dt, cfg)

        det_to_track: dict[int, int] = {}
        if detections is not None:
            predicted = [state_to_box(tr.state) for tr in self.tracks]
            matched_tracks: set[int] = set()
            matched_dets: set[int] = set()
            if detections and self.tracks:
                cost = np.empty((len(detections), len(self.tracks)))
                for di, (box, _) in enumerate(detections):
                    for ti, pb in enumerate(predicted):
                        cost[di, ti] = 1.0 - iou_2d(box, pb)
                for di, ti in hungarian_assign(cost):
                    if 1.0 - cost[di, ti] < cfg.iou_gate:
                        continue
                    tr = self.tracks[ti]
                    tr.state = kalman_update(tr.state, detections[di][0], cfg)
                    tr.hits += 1
                    tr.age_since_update = 0
                    matched_tracks.add(ti)
                    matched_dets.add(di)
                    det_to_track[di] = tr.track_id
            for ti, tr in enumerate(self.tracks):
                if ti not in matched_tracks:
                    tr.age_since_update += 1
            for di, (box, label) in enumerate(detections):
                if di not in matched_dets:
                    tr = PlaneTrack(self._next_id, state_from_box(box), label)
                    self._next_id += 1
                    self.spawned_total += 1
                    self.tracks.append(tr)
                    det_to_track[di] = tr.track_id
            self.tracks = [tr for tr in self.tracks
                           if tr.age_since_update <= cfg.max_age]

        emitted = [TrackedBox2D(state_to_box(tr.state), tr.track_id, tr.label)
                   for tr in self.tracks if tr.hits >= cfg.min_hits]
        return emitted, det_to_track
