"""End-to-end run: detection ingestion at keyframes, per-frame box
prediction and keypoint culling in between, semantic map insertion, and
delimited + figure reporting.

Frames are processed strictly in timestamp order. Keyframes (frames
carrying detections, or every Nth frame under the fixed policy) feed the
fusion engine and insert their labeled cloud into the octree; every
other frame only asks the engine for predicted boxes and culls the
feature points inside them. By default map insertion runs on a
background worker with a bounded queue; deterministic mode forces
everything inline in a fixed order.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    attach_detections,
    load_detections,
    load_trajectory,
    load_tum_sequence,
)
from .errors import DatasetError, PipelineError
from .fusion import FusionEngine, cull_keypoints
from .geometry import Box3D, CameraIntrinsics
from .labels import CLASS_IDS, DEFAULT_MOVABLE_CLASSES, class_name
from .mapping import MapConfig, SemanticOctree, cloud_from_depth
from .tracking import TrackerConfig

TUM_DEFAULT_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5,
                                          cy=239.5, depth_scale=5000.0)


@dataclass
class RunConfig:
    sequence_dir: Path
    detections_path: Path | None = None
    trajectory_path: Path | None = None
    intrinsics: CameraIntrinsics | None = None   # None: calibration.txt or TUM defaults
    movable_classes: frozenset[int] = DEFAULT_MOVABLE_CLASSES
    keyframe_every: int | None = None            # None: keyframes come from detections
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    map: MapConfig = field(default_factory=MapConfig)
    stride: int = 2
    margin: float = 0.0
    keypoint_step: int = 16
    deterministic: bool = False
    boxes_camera_columns: bool = False
    out_map: Path | None = None
    out_boxes: Path | None = None
    out_culled: Path | None = None       # per-frame kept/removed keypoint counts
    out_metrics: Path | None = None
    out_ply: Path | None = None
    out_figures: Path | None = None

    def __post_init__(self):
        if self.keyframe_every is not None and self.keyframe_every < 1:
            raise PipelineError("keyframe_every must be >= 1")


def load_calibration(path) -> CameraIntrinsics:
    parts = Path(path).read_text(encoding="utf-8").split()
    if len(parts) != 5:
        raise DatasetError(f"{path}: expected 'fx fy cx cy depth_scale'")
    fx, fy, cx, cy, scale = (float(p) for p in parts)
    return CameraIntrinsics(fx, fy, cx, cy, scale)


def keypoint_grid(width: int, height: int, step: int) -> list[tuple[float, float]]:
    """Deterministic uniform pixel grid standing in for a feature extractor."""
    return [(float(u), float(v))
            for v in range(step // 2, height, step)
            for u in range(step // 2, width, step)]


class StageTimer:
    """Collects per-call wall-clock durations per stage name."""

    def __init__(self):
        self.samples: dict[str, list[float]] = {}

    def add(self, stage: str, seconds: float) -> None:
        self.samples.setdefault(stage, []).append(seconds)

    def summary_ms(self) -> dict[str, dict[str, float]]:
        out = {}
        for stage, vals in sorted(self.samples.items()):
            arr = np.asarray(vals) * 1e3
            out[stage] = {
                "count": float(len(arr)),
                "mean": float(arr.mean()),
                "p50": float(np.percentile(arr, 50)),
                "p90": float(np.percentile(arr, 90)),
                "p99": float(np.percentile(arr, 99)),
                "max": float(arr.max()),
            }
        return out


@dataclass
class RunReport:
    frames_total: int = 0
    frames_processed: int = 0
    frames_skipped_no_pose: int = 0
    keyframes: int = 0
    detections_ingested: int = 0
    detections_skipped: int = 0
    boxes_emitted: int = 0
    fusion_dropped: int = 0
    keypoints_total: int = 0
    keypoints_removed: int = 0
    tracks_spawned: int = 0
    points_inserted: int = 0
    points_movable: int = 0
    points_labeled: int = 0
    map_leaves: int = 0
    map_occupied: int = 0
    final_tracks: int = 0
    timing: dict = field(default_factory=dict)
    tree: "SemanticOctree | None" = None  # in-process handle, not serialized

    def metrics_text(self) -> str:
        lines = ["# dynamap metrics v1", "[run]"]
        for key in ("frames_total", "frames_processed", "frames_skipped_no_pose",
                    "keyframes"):
            lines.append(f"{key}={getattr(self, key)}")
        lines.append("[detections]")
        for key in ("detections_ingested", "detections_skipped"):
            lines.append(f"{key}={getattr(self, key)}")
        lines.append("[tracks]")
        for key in ("boxes_emitted", "fusion_dropped", "tracks_spawned",
                    "final_tracks"):
            lines.append(f"{key}={getattr(self, key)}")
        lines.append("[culling]")
        for key in ("keypoints_total", "keypoints_removed"):
            lines.append(f"{key}={getattr(self, key)}")
        lines.append("[map]")
        for key in ("points_inserted", "points_movable", "points_labeled",
                    "map_leaves", "map_occupied"):
            lines.append(f"{key}={getattr(self, key)}")
        for stage, stats in self.timing.items():
            lines.append(f"[timing.{stage}_ms]")
            for k, v in stats.items():
                lines.append(f"{k}={v:.6f}")
        return "\n".join(lines) + "\n"


def _read_depth(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.float64)


def _read_rgb(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _format_box_line(t: float, b: Box3D, camera: Box3D | None) -> str:
    coords = " ".join(f"{c:.6f}" for c in (*b.p1, *b.p2))
    line = f"{t:.6f} {b.track_id} {class_name(b.label)} {coords}"
    if camera is not None:
        line += " " + " ".join(f"{c:.6f}" for c in (*camera.p1, *camera.p2))
    return line


def load_boxes_file(path) -> dict[float, list[Box3D]]:
    """Read a per-frame predicted-box file back into timestamp -> boxes."""
    out: dict[float, list[Box3D]] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (9, 15):
            raise DatasetError(f"{path}:{lineno}: expected 9 or 15 fields")
        t = float(parts[0])
        box = Box3D(np.array([float(p) for p in parts[3:6]]),
                    np.array([float(p) for p in parts[6:9]]),
                    label=CLASS_IDS[parts[2]], track_id=int(parts[1]))
        out.setdefault(t, []).append(box)
    return out


class _MapWorker:
    """Serialized background map insertion with a bounded queue.

    Keeps keyframe-batch order, applies backpressure instead of dropping,
    and re-raises any worker error on join."""

    def __init__(self, tree: SemanticOctree, movable: frozenset[int]):
        self.tree = tree
        self.movable = movable
        self.queue: queue.Queue = queue.Queue(maxsize=4)
        self.results: list = []
        self.error: BaseException | None = None
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        while True:
            item = self.queue.get()
            if item is None:
                return
            points, boxes = item
            try:
                self.results.append(
                    self.tree.insert_labeled_cloud(points, boxes, self.movable))
            except BaseException as e:  # surfaced on join
                self.error = e
                return

    def submit(self, points, boxes):
        if self.error is not None:
            raise self.error
        self.queue.put((points, boxes))

    def join(self):
        self.queue.put(None)
        self.thread.join()
        if self.error is not None:
            raise self.error
        return self.results


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Run the full keyframe-gated tracking + mapping pipeline.

    Any module error aborts with a frame-stamped diagnostic. Writes the
    configured outputs (boxes, map, PLY, metrics, figures) and returns
    the run report.
    """
    seq_dir = Path(cfg.sequence_dir)
    frames = load_tum_sequence(seq_dir)
    if not frames:
        raise PipelineError(f"{seq_dir}: no usable frames")
    if cfg.detections_path is not None:
        attach_detections(frames, load_detections(cfg.detections_path))
    if cfg.keyframe_every is not None:
        # Fixed policy replaces the detection-driven one entirely;
        # detections on non-selected frames are discarded so the
        # detections-imply-keyframe invariant holds.
        for i, fr in enumerate(frames):
            fr.is_keyframe = i % cfg.keyframe_every == 0
            if not fr.is_keyframe:
                fr.detections = []
    if cfg.trajectory_path is not None:
        traj = load_trajectory(cfg.trajectory_path)
        for fr in frames:
            fr.pose_cw = traj.pose_near(fr.timestamp)

    k = cfg.intrinsics
    if k is None:
        calib = seq_dir / "calibration.txt"
        k = load_calibration(calib) if calib.is_file() else TUM_DEFAULT_INTRINSICS

    engine = FusionEngine(cfg.tracker, cfg.movable_classes)
    tree = SemanticOctree(cfg.map)
    worker = None if cfg.deterministic else _MapWorker(tree, cfg.movable_classes)
    timer = StageTimer()
    report = RunReport(frames_total=len(frames))
    box_lines = ["# timestamp track_id label x1 y1 z1 x2 y2 z2"
                 + (" cx1 cy1 cz1 cx2 cy2 cz2" if cfg.boxes_camera_columns else "")]
    culled_lines = ["# timestamp kept removed"]
    keypoints: list[tuple[float, float]] | None = None
    insert_stats = []

    for fr in frames:
        try:
            if fr.pose_cw is None:
                report.frames_skipped_no_pose += 1
                continue
            if fr.is_keyframe:
                t0 = time.perf_counter()
                pred = engine.ingest_keyframe(fr.detections, fr.pose_cw, k,
                                              fr.timestamp)
                timer.add("ingest", time.perf_counter() - t0)
                report.keyframes += 1
                report.detections_ingested += len(fr.detections)

                t0 = time.perf_counter()
                rgb = _read_rgb(fr.rgb_path)
                depth = _read_depth(fr.depth_path)
                points = cloud_from_depth(rgb, depth, fr.pose_cw, k, cfg.stride)
                timer.add("cloud", time.perf_counter() - t0)
                if keypoints is None:
                    keypoints = keypoint_grid(rgb.shape[1], rgb.shape[0],
                                              cfg.keypoint_step)
                t0 = time.perf_counter()
                if worker is None:
                    insert_stats.append(tree.insert_labeled_cloud(
                        points, pred.boxes_world, cfg.movable_classes))
                else:
                    worker.submit(points, pred.boxes_world)
                timer.add("map_insert", time.perf_counter() - t0)
            else:
                t0 = time.perf_counter()
                pred = engine.predict_frame(fr.pose_cw, fr.timestamp)
                timer.add("predict", time.perf_counter() - t0)
                if keypoints is None:
                    with Image.open(fr.rgb_path) as im:
                        width, height = im.size
                    keypoints = keypoint_grid(width, height, cfg.keypoint_step)
                t0 = time.perf_counter()
                kept, removed = cull_keypoints(keypoints, pred, fr.pose_cw, k,
                                               cfg.margin)
                timer.add("cull", time.perf_counter() - t0)
                report.keypoints_total += len(keypoints)
                report.keypoints_removed += len(removed)
                culled_lines.append(
                    f"{fr.timestamp:.6f} {len(kept)} {len(removed)}")

            report.fusion_dropped += pred.dropped
            report.detections_skipped += pred.skipped_detections
            report.boxes_emitted += len(pred.boxes_world)
            for wb, cb in zip(pred.boxes_world, pred.boxes_camera):
                box_lines.append(_format_box_line(
                    fr.timestamp, wb, cb if cfg.boxes_camera_columns else None))
            report.frames_processed += 1
        except Exception as e:
            raise PipelineError(
                f"frame {fr.timestamp:.6f}: {e}") from e

    if worker is not None:
        insert_stats = worker.join()
    for st in insert_stats:
        report.points_inserted += st.inserted
        report.points_movable += st.marked_movable
        report.points_labeled += st.labeled
    report.map_leaves = len(tree)
    report.map_occupied = sum(1 for _ in tree.occupied_leaves())
    report.final_tracks = max(engine.active_track_counts.values(), default=0)
    report.timing = timer.summary_ms()

    if cfg.out_boxes is not None:
        Path(cfg.out_boxes).write_text("\n".join(box_lines) + "\n",
                                       encoding="utf-8")
    if cfg.out_map is not None:
        from .mapping import save_map
        save_map(tree, cfg.out_map)
    if cfg.out_ply is not None:
        from .mapping import export_ply
        export_ply(tree, cfg.out_ply)
    if cfg.out_metrics is not None:
        Path(cfg.out_metrics).write_text(report.metrics_text(), encoding="utf-8")
    if cfg.out_figures is not None:
        from .report import render_run_figures
        render_run_figures(report, tree, frames, Path(cfg.out_figures))
    report.tree = tree
    return report
