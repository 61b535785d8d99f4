"""Three-plane box tracking with cross-plane fusion and keypoint culling.

The engine lifts movable 2D detections at keyframes into world-frame 3D
boxes, projects them onto the three world coordinate planes, and runs an
independent constant-velocity tracker per plane. Any frame can then ask
for a 3D prediction:

  1. every plane tracker advances its boxes (pure coasting between
     keyframes, correction at keyframes),
  2. the plane holding the most boxes becomes the primary plane; its
     boxes provide two of the three coordinates,
  3. each secondary-plane box is completed into 3D by borrowing its
     missing coordinate from the latest keyframe's lifted boxes,
  4. each primary box recovers its own missing coordinate from the
     best-overlapping secondary box, re-projected into the primary plane,
  5. fused world boxes are finally expressed in the requesting frame's
     camera coordinates.

Keypoint culling projects the predicted camera-frame boxes back to pixel
hulls and drops the feature points inside them, so downstream pose
estimation sees an artificially static scene.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidDepthError, PipelineError
from .geometry import (
    PLANES,
    Box2D,
    Box3D,
    CameraIntrinsics,
    Detection2D,
    Plane,
    PoseSE3,
    iou_2d,
    lift_detection,
    project_to_plane,
    transform_box,
)
from .labels import DEFAULT_MOVABLE_CLASSES
from .tracking import PlaneTracker, TrackedBox2D, TrackerConfig


@dataclass(frozen=True)
class PredictionResult:
    """Predicted movable-object boxes for one frame.

    ``boxes_camera[i]`` is exactly ``transform_box(pose_cw, boxes_world[i])``
    for the frame's world-to-camera pose; each box carries its track id
    and class label.
    """

    boxes_world: tuple[Box3D, ...]
    boxes_camera: tuple[Box3D, ...]
    dropped: int = 0
    skipped_detections: int = 0

    def __post_init__(self):
        assert len(self.boxes_world) == len(self.boxes_camera)


_EMPTY = PredictionResult((), ())


def _interval(box: Box3D, axis: int) -> tuple[float, float]:
    return float(box.p1[axis]), float(box.p2[axis])


def _assemble(plane: Plane, b: Box2D, missing: tuple[float, float],
              label: int | None, track_id: int | None) -> Box3D:
    i, j = plane.axes
    m = plane.missing_axis
    p1 = np.empty(3)
    p2 = np.empty(3)
    p1[i], p1[j], p1[m] = b.min_corner[0], b.min_corner[1], missing[0]
    p2[i], p2[j], p2[m] = b.max_corner[0], b.max_corner[1], missing[1]
    return Box3D(p1, p2, label=label, track_id=track_id)


def _match_latest(box: Box2D, plane: Plane, latest_boxes: Sequence[Box3D]) -> Box3D | None:
    """Best-overlapping latest-keyframe box in the given plane, or None."""
    best = None
    best_iou = 0.0
    for cand in latest_boxes:
        v = iou_2d(box, project_to_plane(cand, plane))
        if v > best_iou:
            best_iou = v
            best = cand
    return best


def fuse_planes(
    per_plane: Mapping[Plane, Sequence[TrackedBox2D]],
    latest_boxes: Sequence[Box3D],
    latest_index: Mapping[Plane, Mapping[int, int]] | None = None,
) -> tuple[list[Box3D], int]:
    """Reconstruct 3D boxes from three independently tracked plane projections.

    The plane with the most boxes is primary (ties resolved in the fixed
    xOy, yOz, zOx order). Secondary boxes are lifted to 3D by filling
    their missing coordinate from the latest keyframe: by track id when
    ``latest_index`` maps this plane's track ids into ``latest_boxes``,
    otherwise by maximum overlap with the latest boxes projected into the
    same plane. Every primary box then copies its missing coordinate from
    the secondary lift that overlaps it most in the primary plane; with
    no overlapping secondary at all it falls back to its own track's
    latest-keyframe coordinate, and failing that the box is dropped.

    Returns the fused boxes and the dropped-box count.
    """
    counts = {p: len(per_plane.get(p, ())) for p in PLANES}
    primary = max(PLANES, key=lambda p: counts[p])  # max() keeps first on ties

    def latest_for(plane: Plane, tid: int, box: Box2D) -> Box3D | None:
        if latest_index is not None:
            idx = latest_index.get(plane, {}).get(tid)
            if idx is not None and 0 <= idx < len(latest_boxes):
                return latest_boxes[idx]
            return _match_latest(box, plane, latest_boxes)
        return _match_latest(box, plane, latest_boxes)

    secondary_lifted: list[Box3D] = []
    for plane in PLANES:
        if plane is primary:
            continue
        for tb in per_plane.get(plane, ()):
            ref = latest_for(plane, tb.track_id, tb.box)
            if ref is None:
                continue
            missing = _interval(ref, plane.missing_axis)
            secondary_lifted.append(_assemble(plane, tb.box, missing,
                                              tb.label, tb.track_id))

    fused: list[Box3D] = []
    dropped = 0
    m_axis = primary.missing_axis
    sec_in_primary = [project_to_plane(s, primary) for s in secondary_lifted]
    for tb in per_plane.get(primary, ()):
        best_iou = 0.0
        best: Box3D | None = None
        for s, s2d in zip(secondary_lifted, sec_in_primary):
            v = iou_2d(tb.box, s2d)
            if v > best_iou:
                best_iou = v
                best = s
        if best is None:
            best = latest_for(primary, tb.track_id, tb.box)
        if best is None:
            dropped += 1
            continue
        fused.append(_assemble(primary, tb.box, _interval(best, m_axis),
                               tb.label, tb.track_id))
    return fused, dropped


class FusionEngine:
    """Keyframe-gated movable-object predictor.

    Single-writer: ``ingest_keyframe`` and ``predict_frame`` mutate the
    tracker state and must be serialized per engine. Returned
    ``PredictionResult`` values are immutable and may be shared freely.
    """

    def __init__(
        self,
        tracker_config: TrackerConfig | None = None,
        movable_classes: Iterable[int] = DEFAULT_MOVABLE_CLASSES,
    ):
        cfg = tracker_config or TrackerConfig()
        self.movable_classes = frozenset(movable_classes)
        self.trackers: dict[Plane, PlaneTracker] = {
            p: PlaneTracker(cfg) for p in PLANES
        }
        self.latest_keyframe_pose: PoseSE3 | None = None
        self.latest_lifted_boxes: list[Box3D] = []
        self.latest_index: dict[Plane, dict[int, int]] = {p: {} for p in PLANES}
        self.last_time: float | None = None
        self.dropped_total = 0
        self.skipped_detections_total = 0

    def _dt(self, t: float) -> float:
        if self.last_time is None:
            return 0.0
        if t < self.last_time - 1e-9:
            raise PipelineError(
                f"frames must be processed in timestamp order "
                f"(got {t} after {self.last_time})")
        return max(0.0, t - self.last_time)

    def _result(self, pose_cw: PoseSE3, dropped: int, skipped: int,
                fused: list[Box3D]) -> PredictionResult:
        cam = tuple(transform_box(pose_cw, b) for b in fused)
        res = PredictionResult(tuple(fused), cam, dropped, skipped)
        if __debug__:
            for w, c in zip(res.boxes_world, res.boxes_camera):
                assert np.array_equal(transform_box(pose_cw, w).p1, c.p1)
        return res

    def ingest_keyframe(
        self,
        detections: Sequence[Detection2D],
        pose_cw: PoseSE3,
        k: CameraIntrinsics,
        t: float,
    ) -> PredictionResult:
        """Lift this keyframe's movable detections, update all plane
        trackers, and return the fused prediction for the keyframe itself.

        Detections outside the movable class set are ignored; detections
        with invalid depth are skipped and counted, never fatal. A
        keyframe with no usable movable detection degrades to a pure
        coasting step.
        """
        dt = self._dt(t)
        lifted: list[Box3D] = []
        skipped = 0
        for d in detections:
            if d.label not in self.movable_classes:
                continue
            try:
                lifted.append(lift_detection(d, pose_cw, k))
            except InvalidDepthError:
                skipped += 1
        self.skipped_detections_total += skipped

        per_plane: dict[Plane, list[TrackedBox2D]] = {}
        if not lifted:
            # No detector evidence: same coasting branch as a plain frame.
            for plane, tracker in self.trackers.items():
                per_plane[plane], _ = tracker.step(None, dt)
        else:
            for plane, tracker in self.trackers.items():
                dets = [(project_to_plane(b, plane), b.label) for b in lifted]
                emitted, det_to_track = tracker.step(dets, dt)
                per_plane[plane] = emitted
                self.latest_index[plane] = {tid: di for di, tid in det_to_track.items()}
            self.latest_lifted_boxes = lifted
            self.latest_keyframe_pose = pose_cw
        self.last_time = t

        fused, dropped = fuse_planes(per_plane, self.latest_lifted_boxes,
                                     self.latest_index)
        self.dropped_total += dropped
        return self._result(pose_cw, dropped, skipped, fused)

    def predict_frame(self, pose_cw: PoseSE3, t: float) -> PredictionResult:
        """Coast every plane tracker to time ``t`` and fuse.

        Before any keyframe has been ingested this returns an empty
        result. Calling twice at the same timestamp is idempotent.
        """
        if self.last_time is None:
            return _EMPTY
        dt = self._dt(t)
        per_plane: dict[Plane, list[TrackedBox2D]] = {}
        for plane, tracker in self.trackers.items():
            per_plane[plane], _ = tracker.step(None, dt)
        self.last_time = t
        fused, dropped = fuse_planes(per_plane, self.latest_lifted_boxes,
                                     self.latest_index)
        self.dropped_total += dropped
        return self._result(pose_cw, dropped, 0, fused)

    @property
    def active_track_counts(self) -> dict[Plane, int]:
        return {p: len(tr.tracks) for p, tr in self.trackers.items()}


def box_pixel_hull(box_world: Box3D, pose_cw: PoseSE3, k: CameraIntrinsics,
                   margin: float = 0.0) -> Box2D | None:
    """Pixel-axis-aligned hull of a world box's 8 corners, transported as
    points into the camera and projected, then inflated by ``margin``
    pixels. The corners must be moved individually (re-normalizing into a
    camera-frame box first would shrink the hull under rotation). None
    when the box is entirely behind the camera (max z <= 0); corners at
    or behind the image plane are projected from a tiny positive depth,
    which conservatively enlarges the hull."""
    corners = pose_cw.apply(box_world.corners())
    z = corners[:, 2]
    if z.max() <= 0.0:
        return None
    zc = np.clip(z, 1e-9, None)
    u = k.fx * corners[:, 0] / zc + k.cx
    v = k.fy * corners[:, 1] / zc + k.cy
    return Box2D((float(u.min()) - margin, float(v.min()) - margin),
                 (float(u.max()) + margin, float(v.max()) + margin))


def cull_keypoints(
    points: Sequence[tuple[float, float]],
    pred: PredictionResult,
    pose_cw: PoseSE3,
    k: CameraIntrinsics,
    margin: float = 0.0,
) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """Split pixel keypoints into (kept, removed) against predicted boxes.

    Each predicted world box is moved into this frame's camera, projected
    to its pixel hull and inflated by ``margin``; a point is removed iff
    it lies inside any hull (inclusive). The two lists partition the
    input in order.
    """
    pts = list(points)
    if not pts or not pred.boxes_world:
        return pts, []
    hulls = []
    for wb in pred.boxes_world:
        hull = box_pixel_hull(wb, pose_cw, k, margin)
        if hull is not None:
            hulls.append(hull)
    if not hulls:
        return pts, []
    arr = np.asarray(pts, dtype=np.float64)
    removed_mask = np.zeros(len(pts), dtype=bool)
    for h in hulls:
        (x1, y1), (x2, y2) = h.min_corner, h.max_corner
        inside = ((arr[:, 0] >= x1) & (arr[:, 0] <= x2)
                  & (arr[:, 1] >= y1) & (arr[:, 1] <= y2))
        removed_mask |= inside
    kept = [p for p, r in zip(pts, removed_mask) if not r]
    removed = [p for p, r in zip(pts, removed_mask) if r]
    return kept, removed
