"""Synthetic RGB-D scene generation and map-quality evaluation.

A scene is a handful of static axis-aligned slabs plus movable boxes on
piecewise-linear world trajectories, observed by a camera with a fixed
orientation and piecewise-linear position. Depth images are rendered by
per-pixel ray/box intersection — the single geometry oracle shared by
the generator and by map evaluation — and written out in the standard
TUM sequence layout together with a detection file, a ground-truth
trajectory, per-frame ground-truth 3D boxes, the camera calibration and
the scene description itself, so a generated directory is a completely
self-contained end-to-end fixture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError
from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    Detection2D,
    PoseSE3,
    inverse,
    lift_detection,
    rot_x,
    rot_y,
)
from .labels import CLASS_IDS, class_name
from .mapping import SemanticOctree
from .dataset import tum_fields_from_pose_cw

BACKGROUND_COLOR = (40, 40, 40)


def _interp(waypoints: list[tuple[float, np.ndarray]], t: float) -> np.ndarray:
    """Piecewise-linear interpolation, clamped at both ends."""
    if not waypoints:
        raise DatasetError("empty waypoint list")
    if t <= waypoints[0][0]:
        return np.asarray(waypoints[0][1], dtype=np.float64)
    if t >= waypoints[-1][0]:
        return np.asarray(waypoints[-1][1], dtype=np.float64)
    for (t0, p0), (t1, p1) in zip(waypoints, waypoints[1:]):
        if t0 <= t <= t1:
            w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            return (1 - w) * np.asarray(p0, dtype=np.float64) \
                + w * np.asarray(p1, dtype=np.float64)
    return np.asarray(waypoints[-1][1], dtype=np.float64)


@dataclass
class StaticSlab:
    name: str
    box: Box3D
    color: tuple[int, int, int]


@dataclass
class MovingObject:
    name: str
    label: int
    size: np.ndarray                       # full world-axis extents (3,)
    waypoints: list[tuple[float, np.ndarray]]  # (time, center)
    color: tuple[int, int, int]

    def center_at(self, t: float) -> np.ndarray:
        return _interp(self.waypoints, t)

    def box_at(self, t: float) -> Box3D:
        half = np.asarray(self.size, dtype=np.float64) / 2.0
        c = self.center_at(t)
        return Box3D(c - half, c + half, label=self.label)


@dataclass
class CameraRig:
    rotation_wc: np.ndarray                # camera-to-world rotation
    waypoints: list[tuple[float, np.ndarray]]  # (time, camera center)

    def pose_cw(self, t: float) -> PoseSE3:
        r_cw = np.asarray(self.rotation_wc, dtype=np.float64).T
        center = _interp(self.waypoints, t)
        return PoseSE3(r_cw, -r_cw @ center)


@dataclass
class DetectorModel:
    kind: str = "perfect"                  # "perfect" | "jittered"
    sigma_px: float = 0.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("perfect", "jittered"):
            raise DatasetError(f"unknown detector model {self.kind!r}")


@dataclass
class SyntheticScene:
    width: int
    height: int
    intrinsics: CameraIntrinsics
    fps: float
    n_frames: int
    statics: list[StaticSlab]
    objects: list[MovingObject]
    camera: CameraRig
    detector: DetectorModel = field(default_factory=DetectorModel)
    keyframe_every: int = 5
    start_time: float = 1000.0

    def frame_times(self) -> list[float]:
        return [self.start_time + i / self.fps for i in range(self.n_frames)]

    def keyframe_indices(self) -> list[int]:
        return [i for i in range(self.n_frames) if i % self.keyframe_every == 0]

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "intrinsics": [self.intrinsics.fx, self.intrinsics.fy,
                           self.intrinsics.cx, self.intrinsics.cy,
                           self.intrinsics.depth_scale],
            "fps": self.fps,
            "n_frames": self.n_frames,
            "start_time": self.start_time,
            "keyframe_every": self.keyframe_every,
            "statics": [
                {"name": s.name, "p1": s.box.p1.tolist(), "p2": s.box.p2.tolist(),
                 "color": list(s.color)} for s in self.statics],
            "objects": [
                {"name": o.name, "label": o.label,
                 "size": np.asarray(o.size).tolist(),
                 "waypoints": [[t, np.asarray(p).tolist()] for t, p in o.waypoints],
                 "color": list(o.color)} for o in self.objects],
            "camera": {
                "rotation_wc": np.asarray(self.camera.rotation_wc).tolist(),
                "waypoints": [[t, np.asarray(p).tolist()]
                              for t, p in self.camera.waypoints]},
            "detector": {"kind": self.detector.kind,
                         "sigma_px": self.detector.sigma_px,
                         "drop_prob": self.detector.drop_prob,
                         "seed": self.detector.seed},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        fx, fy, cx, cy, scale = d["intrinsics"]
        return cls(
            width=d["width"], height=d["height"],
            intrinsics=CameraIntrinsics(fx, fy, cx, cy, scale),
            fps=d["fps"], n_frames=d["n_frames"],
            start_time=d["start_time"], keyframe_every=d["keyframe_every"],
            statics=[StaticSlab(s["name"],
                                Box3D(np.array(s["p1"]), np.array(s["p2"])),
                                tuple(s["color"])) for s in d["statics"]],
            objects=[MovingObject(o["name"], o["label"], np.array(o["size"]),
                                  [(t, np.array(p)) for t, p in o["waypoints"]],
                                  tuple(o["color"])) for o in d["objects"]],
            camera=CameraRig(np.array(d["camera"]["rotation_wc"]),
                             [(t, np.array(p)) for t, p in d["camera"]["waypoints"]]),
            detector=DetectorModel(**d["detector"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- the shared ray/box oracle ----------------------------------------------

def ray_box_depth(origin: np.ndarray, dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Slab-method ray/box intersection for a bundle of rays.

    ``dirs`` is (..., 3) with the convention that the third component is
    1 in the camera frame, so the returned parameter is directly the
    camera z-depth of the hit. Misses come back as +inf; a ray starting
    inside the box reports its exit depth.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (box.p1 - o) / d
        t2 = (box.p2 - o) / d
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    eps = 1e-9
    hit_near = (tmax >= tmin) & (tmin > eps)
    hit_exit = (tmax >= tmin) & (tmin <= eps) & (tmax > eps)
    out = np.full(tmin.shape, np.inf)
    out[hit_near] = tmin[hit_near]
    out[hit_exit] = tmax[hit_exit]
    return out


def _pixel_dirs_world(scene: SyntheticScene) -> np.ndarray:
    k = scene.intrinsics
    us, vs = np.meshgrid(np.arange(scene.width, dtype=np.float64),
                         np.arange(scene.height, dtype=np.float64))
    dirs_cam = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy,
                         np.ones_like(us)], axis=-1)
    return dirs_cam @ np.asarray(scene.camera.rotation_wc, dtype=np.float64).T


def render_frame(scene: SyntheticScene, t: float,
                 dirs_world: np.ndarray | None = None,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render (depth_raw uint16, rgb uint8, hit_id int32) at time ``t``.

    hit_id: -1 background, 0..S-1 static slabs, S.. moving objects.
    """
    if dirs_world is None:
        dirs_world = _pixel_dirs_world(scene)
    origin = _interp(scene.camera.waypoints, t)
    depth = np.full(dirs_world.shape[:2], np.inf)
    hit = np.full(dirs_world.shape[:2], -1, dtype=np.int32)
    entities: list[tuple[Box3D, tuple[int, int, int]]] = \
        [(s.box, s.color) for s in scene.statics] \
        + [(o.box_at(t), o.color) for o in scene.objects]
    for idx, (box, _) in enumerate(entities):
        d = ray_box_depth(origin, dirs_world, box)
        closer = d < depth
        depth[closer] = d[closer]
        hit[closer] = idx
    scale = scene.intrinsics.depth_scale
    depth_raw = np.zeros(depth.shape, dtype=np.uint16)
    valid = np.isfinite(depth)
    depth_raw[valid] = np.clip(np.round(depth[valid] * scale), 1, 65535).astype(np.uint16)
    rgb = np.full((*depth.shape, 3), BACKGROUND_COLOR, dtype=np.uint8)
    for idx, (_, color) in enumerate(entities):
        rgb[hit == idx] = color
    return depth_raw, rgb, hit


def _project_hull(box: Box3D, pose_cw: PoseSE3,
                  k: CameraIntrinsics) -> Box2D | None:
    cam = pose_cw.apply(box.corners())
    if np.any(cam[:, 2] <= 0):
        return None
    u = k.fx * cam[:, 0] / cam[:, 2] + k.cx
    v = k.fy * cam[:, 1] / cam[:, 2] + k.cy
    return Box2D((float(u.min()), float(v.min())),
                 (float(u.max()), float(v.max())))


def _center_depth(scene: SyntheticScene, obj: MovingObject, t: float,
                  pixel: tuple[float, float]) -> float:
    """Front-surface z-depth of the object along the ray through ``pixel``,
    falling back to the box-center depth when the ray misses."""
    k = scene.intrinsics
    dir_cam = np.array([(pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, 1.0])
    dir_world = np.asarray(scene.camera.rotation_wc) @ dir_cam
    origin = _interp(scene.camera.waypoints, t)
    d = float(ray_box_depth(origin, dir_world[None, :], obj.box_at(t))[0])
    if math.isfinite(d):
        return d
    cam = scene.camera.pose_cw(t).apply(obj.center_at(t))
    return float(cam[2])


def perfect_detection(scene: SyntheticScene, obj: MovingObject,
                      t: float) -> Detection2D | None:
    """The noise-free detector output: pixel hull of the true 3D box's
    projected corners with the center-pixel front-surface depth."""
    pose = scene.camera.pose_cw(t)
    hull = _project_hull(obj.box_at(t), pose, scene.intrinsics)
    if hull is None:
        return None
    cx, cy = hull.center
    if not (0 <= cx < scene.width and 0 <= cy < scene.height):
        return None
    depth = _center_depth(scene, obj, t, (cx, cy))
    if depth <= 0:
        return None
    return Detection2D(label=obj.label, score=1.0, box=hull, center_depth=depth)


def ideal_lifted_box(scene: SyntheticScene, obj: MovingObject,
                     t: float) -> Box3D | None:
    """What a perfect detection at time ``t`` lifts to: the per-frame
    ground truth for scoring predicted boxes."""
    det = perfect_detection(scene, obj, t)
    if det is None:
        return None
    return lift_detection(det, scene.camera.pose_cw(t), scene.intrinsics)


def _jitter(det: Detection2D, rng: np.random.Generator,
            sigma: float) -> Detection2D:
    (x1, y1), (x2, y2) = det.box.min_corner, det.box.max_corner
    noise = rng.normal(0.0, sigma, size=4)
    box = Box2D.from_corners((x1 + noise[0], y1 + noise[1]),
                             (x2 + noise[2], y2 + noise[3]))
    return Detection2D(det.label, 0.9, box, det.center_depth)


@dataclass
class GenerationSummary:
    out_dir: Path
    n_frames: int
    n_keyframes: int
    n_detections: int


def generate_synthetic(scene: SyntheticScene, out_dir) -> GenerationSummary:
    """Render the scene into a TUM-layout dataset directory.

    Emits rgb/, depth/, rgb.txt, depth.txt, groundtruth.txt, a detection
    file (keyframes only, per the detector model), per-frame ground-truth
    lifted boxes, calibration.txt and scene.json.
    """
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    dirs_world = _pixel_dirs_world(scene)
    rng = np.random.default_rng(scene.detector.seed)
    keyframes = set(scene.keyframe_indices())

    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    det_lines = ["# timestamp label score xmin ymin xmax ymax center_depth"]
    box_lines = ["# timestamp object label x1 y1 z1 x2 y2 z2"]
    n_detections = 0

    for i, t in enumerate(scene.frame_times()):
        ts = f"{t:.6f}"
        depth_raw, rgb, _ = render_frame(scene, t, dirs_world)
        Image.fromarray(rgb, "RGB").save(out / "rgb" / f"{ts}.png")
        Image.fromarray(depth_raw).save(out / "depth" / f"{ts}.png")
        rgb_lines.append(f"{ts} rgb/{ts}.png")
        depth_lines.append(f"{ts} depth/{ts}.png")
        pose = scene.camera.pose_cw(t)
        vals = tum_fields_from_pose_cw(pose)
        gt_lines.append(ts + " " + " ".join(f"{v:.9f}" for v in vals))

        for oi, obj in enumerate(scene.objects):
            gt_box = ideal_lifted_box(scene, obj, t)
            if gt_box is not None:
                coords = " ".join(f"{c:.9f}" for c in (*gt_box.p1, *gt_box.p2))
                box_lines.append(f"{ts} {oi} {class_name(obj.label)} {coords}")
            if i not in keyframes:
                continue
            det = perfect_detection(scene, obj, t)
            if det is None:
                continue
            if scene.detector.kind == "jittered":
                if rng.random() < scene.detector.drop_prob:
                    continue
                det = _jitter(det, rng, scene.detector.sigma_px)
            (x1, y1), (x2, y2) = det.box.min_corner, det.box.max_corner
            det_lines.append(
                f"{ts} {class_name(det.label)} {det.score:.2f} "
                f"{x1:.6f} {y1:.6f} {x2:.6f} {y2:.6f} {det.center_depth:.9f}")
            n_detections += 1

    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n", encoding="utf-8")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n", encoding="utf-8")
    (out / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    (out / "detections.txt").write_text("\n".join(det_lines) + "\n", encoding="utf-8")
    (out / "gt_boxes.txt").write_text("\n".join(box_lines) + "\n", encoding="utf-8")
    k = scene.intrinsics
    (out / "calibration.txt").write_text(
        f"{k.fx} {k.fy} {k.cx} {k.cy} {k.depth_scale}\n", encoding="utf-8")
    scene.save(out / "scene.json")
    return GenerationSummary(out, scene.n_frames, len(keyframes), n_detections)


def load_gt_boxes(path) -> dict[float, list[Box3D]]:
    """Read a gt_boxes.txt file into timestamp -> true lifted boxes."""
    out: dict[float, list[Box3D]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise DatasetError(f"{path}:{lineno}: expected 9 fields")
        t = float(parts[0])
        label = CLASS_IDS[parts[2]]
        vals = [float(p) for p in parts[3:]]
        out.setdefault(t, []).append(
            Box3D(np.array(vals[:3]), np.array(vals[3:]), label=label))
    return out


# -- the default parametric scene --------------------------------------------

def standard_scene(
    n_frames: int = 90,
    fps: float = 30.0,
    keyframe_every: int = 5,
    object_speed: float = 0.1,
    width: int = 160,
    height: int = 120,
    sigma_px: float = 0.0,
    drop_prob: float = 0.0,
    seed: int = 0,
    label: str = "person",
) -> SyntheticScene:
    """One movable board sliding in front of a static back wall and floor,
    viewed by a static camera whose orientation mixes all three world
    axes (so lifted boxes are non-degenerate in every coordinate plane).
    The board is thin along the viewing direction, keeping its visible
    surface close to the center-depth plane that box lifting assumes."""
    k = CameraIntrinsics(fx=140.0, fy=140.0, cx=(width - 1) / 2.0,
                         cy=(height - 1) / 2.0, depth_scale=5000.0)
    rotation_wc = rot_y(0.45) @ rot_x(0.30)
    camera = CameraRig(rotation_wc, [(0.0, np.zeros(3))])
    t0 = 1000.0
    duration = n_frames / fps
    start_center = rotation_wc @ np.array([0.0, 0.0, 2.4])
    velocity = np.array([object_speed, 0.0, 0.0])
    obj = MovingObject(
        name="walker",
        label=CLASS_IDS[label],
        size=np.array([0.45, 0.45, 0.05]),
        waypoints=[(t0, start_center),
                   (t0 + duration, start_center + velocity * duration)],
        color=(200, 60, 60),
    )
    wall = StaticSlab(
        name="back_wall",
        box=Box3D(np.array([-4.0, -5.0, 4.2]), np.array([8.0, 4.0, 4.5])),
        color=(90, 120, 160),
    )
    floor = StaticSlab(
        name="floor",
        box=Box3D(np.array([-4.0, 1.0, -1.0]), np.array([8.0, 1.2, 4.5])),
        color=(120, 110, 90),
    )
    detector = DetectorModel(
        kind="jittered" if (sigma_px > 0 or drop_prob > 0) else "perfect",
        sigma_px=sigma_px, drop_prob=drop_prob, seed=seed)
    return SyntheticScene(
        width=width, height=height, intrinsics=k, fps=fps, n_frames=n_frames,
        statics=[wall, floor], objects=[obj], camera=camera, detector=detector,
        keyframe_every=keyframe_every, start_time=t0,
    )


# -- map evaluation -----------------------------------------------------------

@dataclass
class MapQualityReport:
    occupied_voxels: int
    occupied_in_swept: int
    swept_fraction: float          # occupied voxels inside any swept region
    static_truth_voxels: int
    static_occupied: int
    static_coverage: float         # visible static-surface voxels occupied
    labeled_voxels: int
    labels_correct: int
    label_accuracy: float

    def as_text(self) -> str:
        return (
            "[map_quality]\n"
            f"occupied_voxels={self.occupied_voxels}\n"
            f"occupied_in_swept={self.occupied_in_swept}\n"
            f"swept_fraction={self.swept_fraction:.6f}\n"
            f"static_truth_voxels={self.static_truth_voxels}\n"
            f"static_occupied={self.static_occupied}\n"
            f"static_coverage={self.static_coverage:.6f}\n"
            f"labeled_voxels={self.labeled_voxels}\n"
            f"labels_correct={self.labels_correct}\n"
            f"label_accuracy={self.label_accuracy:.6f}\n"
        )


def _swept_boxes(scene: SyntheticScene) -> list[tuple[int, Box3D]]:
    out = []
    for oi, obj in enumerate(scene.objects):
        for t in scene.frame_times():
            out.append((oi, obj.box_at(t)))
    return out


def eval_map(tree: SemanticOctree, scene: SyntheticScene,
             stride: int = 2) -> MapQualityReport:
    """Score a built map against the scene that produced its input.

    Reports: the fraction of occupied voxels inside the movable objects'
    swept region, the fraction of keyframe-visible static-surface voxels
    that are occupied (``stride`` must match the insertion stride), and
    the accuracy of voxel labels against the swept regions.
    """
    swept = _swept_boxes(scene)
    lo = np.array([b.p1 for _, b in swept]) if swept else np.zeros((0, 3))
    hi = np.array([b.p2 for _, b in swept]) if swept else np.zeros((0, 3))
    labels = [scene.objects[oi].label for oi, _ in swept]
    half = tree.cfg.voxel_size / 2.0

    def swept_labels_at(center: np.ndarray) -> set[int]:
        # A voxel falls in the swept region when its cube overlaps any
        # swept box (center containment alone misclassifies voxels that
        # straddle a thin object).
        if len(lo) == 0:
            return set()
        inside = np.all((center + half >= lo) & (center - half <= hi), axis=1)
        return {labels[i] for i in np.flatnonzero(inside)}

    occupied = 0
    occupied_in_swept = 0
    for key, _ in tree.occupied_leaves():
        occupied += 1
        if swept_labels_at(tree.voxel_center(key)):
            occupied_in_swept += 1

    # Visible static surface: re-render every keyframe with the shared
    # oracle and collect the voxels of strided static-surface hits, using
    # the same depth quantization as the mapping path.
    n_static = len(scene.statics)
    dirs_world = _pixel_dirs_world(scene)
    k = scene.intrinsics
    truth: set[tuple[int, int, int]] = set()
    times = scene.frame_times()
    for i in scene.keyframe_indices():
        t = times[i]
        depth_raw, _, hit = render_frame(scene, t, dirs_world)
        sel_hit = hit[::stride, ::stride]
        sel_depth = depth_raw[::stride, ::stride].astype(np.float64)
        static_mask = (sel_hit >= 0) & (sel_hit < n_static) & (sel_depth > 0)
        if not np.any(static_mask):
            continue
        vs, us = np.nonzero(static_mask)
        z = sel_depth[static_mask] / k.depth_scale
        u = (us * stride).astype(np.float64)
        v = (vs * stride).astype(np.float64)
        cam = np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=1)
        world = inverse(scene.camera.pose_cw(t)).apply(cam)
        for p in world:
            truth.add(tree.key_of(p))
    static_occ = sum(1 for key in truth
                     if (leaf := tree._leaves.get(key)) is not None
                     and leaf.log_odds > tree.cfg.occupancy_logit)

    labeled = 0
    correct = 0
    for key, leaf in tree.leaves():
        lab = leaf.majority_label
        if lab is None:
            continue
        labeled += 1
        if lab in swept_labels_at(tree.voxel_center(key)):
            correct += 1

    return MapQualityReport(
        occupied_voxels=occupied,
        occupied_in_swept=occupied_in_swept,
        swept_fraction=(occupied_in_swept / occupied) if occupied else 0.0,
        static_truth_voxels=len(truth),
        static_occupied=static_occ,
        static_coverage=(static_occ / len(truth)) if truth else 0.0,
        labeled_voxels=labeled,
        labels_correct=correct,
        label_accuracy=(correct / labeled) if labeled else 0.0,
    )


def score_predictions(
    predicted: dict[float, list[Box3D]],
    ground_truth: dict[float, list[Box3D]],
    exclude_times: set[float] = frozenset(),
    min_time: float = -math.inf,
) -> float:
    """Mean best 3D IOU of predictions against ground-truth boxes over the
    eligible timestamps (non-excluded, at or after ``min_time``).
    A ground-truth box with no prediction at its frame scores 0."""
    from .geometry import iou_3d

    scores = []
    for t in sorted(ground_truth):
        if t in exclude_times or t < min_time:
            continue
        preds = predicted.get(t, [])
        for gt in ground_truth[t]:
            best = 0.0
            for p in preds:
                best = max(best, iou_3d(gt, p))
            scores.append(best)
    return float(np.mean(scores)) if scores else 0.0
