"""TUM RGB-D sequence, trajectory and detection-file I/O, plus the
absolute-trajectory-error metric.

File grammars (all plain text, '#' starts a comment line):

  rgb.txt / depth.txt   "timestamp filename"
  groundtruth.txt and trajectory files
                        "timestamp tx ty tz qx qy qz qw"  (camera-to-world)
  detections            "timestamp label score xmin ymin xmax ymax center_depth"

Trajectory files on disk follow the TUM camera-to-world convention;
in memory every pose is world-to-camera (``pose_cw``). The inversion
happens exactly once, at load/save — never invert twice.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

from .errors import DatasetError
from .geometry import Box2D, Detection2D, PoseSE3, inverse
from .labels import CLASS_IDS, CLASS_NAMES

ASSOCIATION_TOLERANCE = 0.02  # seconds, TUM benchmark convention


@dataclass
class FrameRecord:
    timestamp: float
    rgb_path: Path
    depth_path: Path
    pose_cw: PoseSE3 | None = None
    is_keyframe: bool = False
    detections: list[Detection2D] = field(default_factory=list)


@dataclass
class Trajectory:
    """Time-ordered world-to-camera poses."""

    times: list[float]
    poses: list[PoseSE3]

    def __post_init__(self):
        if len(self.times) != len(self.poses):
            raise DatasetError("timestamp/pose count mismatch")
        for a, b in zip(self.times, self.times[1:]):
            if b <= a:
                raise DatasetError(f"timestamps not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.times)

    def camera_centers(self) -> np.ndarray:
        """World positions of the camera, one row per pose."""
        return np.array([inverse(p).translation for p in self.poses]).reshape(-1, 3)

    def pose_near(self, t: float,
                  tolerance: float = ASSOCIATION_TOLERANCE) -> PoseSE3 | None:
        i = _nearest_index(self.times, t)
        if i is None or abs(self.times[i] - t) > tolerance:
            return None
        return self.poses[i]


def _nearest_index(sorted_times: Sequence[float], t: float) -> int | None:
    if not sorted_times:
        return None
    i = bisect.bisect_left(sorted_times, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(sorted_times):
            if best is None or abs(sorted_times[j] - t) < abs(sorted_times[best] - t):
                best = j
    return best


def pose_cw_from_tum(tx, ty, tz, qx, qy, qz, qw) -> PoseSE3:
    """Convert a TUM camera-to-world record into a world-to-camera pose."""
    rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
    return inverse(PoseSE3(rot, np.array([tx, ty, tz], dtype=np.float64)))


def tum_fields_from_pose_cw(pose_cw: PoseSE3) -> tuple[float, ...]:
    """Camera-to-world (tx ty tz qx qy qz qw) of an internal pose."""
    wc = inverse(pose_cw)
    q = Rotation.from_matrix(wc.rotation).as_quat()
    t = wc.translation
    return (t[0], t[1], t[2], q[0], q[1], q[2], q[3])


def _parse_index_file(path: Path) -> list[tuple[float, str]]:
    if not path.is_file():
        raise DatasetError(f"missing index file {path}")
    out = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DatasetError(f"{path}:{lineno}: expected 'timestamp filename'")
        try:
            out.append((float(parts[0]), parts[1]))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad timestamp {parts[0]!r}") from None
    out.sort(key=lambda x: x[0])
    return out


def load_trajectory(path) -> Trajectory:
    """Read a TUM-format trajectory file into world-to-camera poses."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing trajectory file {path}")
    times: list[float] = []
    poses: list[PoseSE3] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DatasetError(f"{path}:{lineno}: expected 8 columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric field") from None
        times.append(vals[0])
        poses.append(pose_cw_from_tum(*vals[1:]))
    order = np.argsort(times)
    return Trajectory([times[i] for i in order], [poses[i] for i in order])


def write_trajectory(traj: Trajectory, path) -> None:
    """Write TUM 8-column format; 9 decimal places so poses reload within 1e-6."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for t, pose in zip(traj.times, traj.poses):
            vals = tum_fields_from_pose_cw(pose)
            f.write(f"{t:.6f} " + " ".join(f"{v:.9f}" for v in vals) + "\n")


def load_tum_sequence(
    directory,
    tolerance: float = ASSOCIATION_TOLERANCE,
) -> list[FrameRecord]:
    """Read a TUM-layout sequence directory into frame records.

    rgb and depth entries are paired by nearest timestamp within the
    tolerance (unmatched rgb frames are dropped), ground-truth poses are
    attached the same way when ``groundtruth.txt`` exists.
    """
    directory = Path(directory)
    rgb = _parse_index_file(directory / "rgb.txt")
    depth = _parse_index_file(directory / "depth.txt")
    gt_path = directory / "groundtruth.txt"
    traj = load_trajectory(gt_path) if gt_path.is_file() else None

    depth_times = [t for t, _ in depth]
    frames: list[FrameRecord] = []
    skipped = 0
    for t, rgb_name in rgb:
        di = _nearest_index(depth_times, t)
        if di is None or abs(depth_times[di] - t) > tolerance:
            skipped += 1
            continue
        pose = traj.pose_near(t, tolerance) if traj is not None else None
        frames.append(FrameRecord(
            timestamp=t,
            rgb_path=directory / rgb_name,
            depth_path=directory / depth[di][1],
            pose_cw=pose,
        ))
    if skipped:
        logger.warning("%s: skipped %d rgb frames with no depth match within "
                       "%.0f ms", directory, skipped, tolerance * 1e3)
    frames.sort(key=lambda fr: fr.timestamp)
    for a, b in zip(frames, frames[1:]):
        if b.timestamp <= a.timestamp:
            raise DatasetError(f"duplicate frame timestamp {b.timestamp}")
    return frames


def load_detections(path) -> dict[float, list[Detection2D]]:
    """Parse a detection file into timestamp -> detections.

    Grammar per line: ``timestamp label score xmin ymin xmax ymax
    center_depth`` with the label being one of the 20 detector class
    names. Timestamps appearing in this file mark keyframes downstream.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing detection file {path}")
    out: dict[float, list[Detection2D]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DatasetError(
                f"{path}:{lineno}: expected 8 fields "
                f"'timestamp label score xmin ymin xmax ymax center_depth', "
                f"got {len(parts)}")
        label_name = parts[1]
        if label_name not in CLASS_IDS:
            raise DatasetError(
                f"{path}:{lineno}: unknown label {label_name!r}; accepted labels: "
                + ", ".join(CLASS_NAMES))
        try:
            t = float(parts[0])
            score = float(parts[2])
            x1, y1, x2, y2 = (float(p) for p in parts[3:7])
            depth = float(parts[7])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric field") from None
        det = Detection2D(
            label=CLASS_IDS[label_name],
            score=score,
            box=Box2D.from_corners((x1, y1), (x2, y2)),
            center_depth=depth,
        )
        out.setdefault(t, []).append(det)
    return out


def attach_detections(
    frames: list[FrameRecord],
    detections: dict[float, list[Detection2D]],
    tolerance: float = ASSOCIATION_TOLERANCE,
) -> int:
    """Attach detections to the nearest frame within tolerance and flag it
    as a keyframe. Returns the number of detection timestamps that found
    no frame."""
    times = [fr.timestamp for fr in frames]
    unmatched = 0
    for t in sorted(detections):
        i = _nearest_index(times, t)
        if i is None or abs(times[i] - t) > tolerance:
            unmatched += 1
            continue
        frames[i].detections.extend(detections[t])
        frames[i].is_keyframe = True
    return unmatched


def align_rigid(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form least-squares rigid alignment of source points onto
    target points (rotation + translation, no scale): centroid
    subtraction and SVD of the cross-covariance, reflection-corrected."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    cov = (tgt - mu_t).T @ (src - mu_s)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    s = np.diag([1.0, 1.0, d])
    rot = u @ s @ vt
    trans = mu_t - rot @ mu_s
    return rot, trans


def ate_rmse(estimated: Trajectory, ground_truth: Trajectory,
             align: bool = True,
             tolerance: float = ASSOCIATION_TOLERANCE) -> float:
    """Root-mean-square absolute trajectory error in meters.

    Poses are associated by nearest timestamp within the tolerance; with
    ``align`` the estimated camera positions are first rigidly aligned
    onto the ground truth.
    """
    gt_times = ground_truth.times
    est_pts = []
    gt_pts = []
    est_centers = estimated.camera_centers()
    gt_centers = ground_truth.camera_centers()
    for i, t in enumerate(estimated.times):
        j = _nearest_index(gt_times, t)
        if j is None or abs(gt_times[j] - t) > tolerance:
            continue
        est_pts.append(est_centers[i])
        gt_pts.append(gt_centers[j])
    if len(est_pts) < 2:
        raise DatasetError(
            f"need at least 2 associated pose pairs, got {len(est_pts)}")
    est = np.array(est_pts)
    gt = np.array(gt_pts)
    if align:
        rot, trans = align_rigid(est, gt)
        est = est @ rot.T + trans
    residuals = est - gt
    return float(np.sqrt(np.mean(np.sum(residuals ** 2, axis=1))))
