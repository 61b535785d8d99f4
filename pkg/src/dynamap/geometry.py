"""Rigid-body poses, the pinhole camera, and axis-aligned box types.

Coordinate conventions used throughout the package:

  World frame: right-handed, meters. All 3D boxes are axis-aligned in
  this frame.

  Camera frame: right-handed computer-vision convention — x right,
  y down, z forward along the optical axis. A ``PoseSE3`` named
  ``pose_cw`` maps world points into this frame (world-to-camera).

  Image frame: pixels, u right, v down, origin at the top-left.

  Coordinate planes: boxes are projected onto the three axis-aligned
  world planes with a fixed in-plane ordering —
  xOy -> (x, y), yOz -> (y, z), zOx -> (z, x).
  Cross-plane matching depends on this ordering; do not change it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InvalidDepthError

_ORTHONORMAL_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform x -> rotation @ x + translation.

    Immutable after construction; safe to share between threads.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _readonly(np.asarray(self.rotation, dtype=np.float64))
        t = _readonly(np.asarray(self.translation, dtype=np.float64).reshape(3))
        if r.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise GeometryError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "PoseSE3":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Pose applying ``b`` first, then ``a``."""
    return PoseSE3(a.rotation @ b.rotation,
                   a.rotation @ b.translation + a.translation)


def inverse(p: PoseSE3) -> PoseSE3:
    rt = p.rotation.T
    return PoseSE3(rt, -rt @ p.translation)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model. ``depth_scale`` divides raw depth units into meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 5000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise GeometryError("depth_scale must be positive")


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned rectangle in a named planar coordinate (pixels or meters)."""

    min_corner: tuple[float, float]
    max_corner: tuple[float, float]

    def __post_init__(self):
        (x1, y1), (x2, y2) = self.min_corner, self.max_corner
        if x1 > x2 or y1 > y2:
            raise GeometryError(f"Box2D corners not ordered: {self.min_corner} > {self.max_corner}")

    @classmethod
    def from_corners(cls, a, b) -> "Box2D":
        """Build from two arbitrary corners, normalizing the ordering."""
        return cls((min(a[0], b[0]), min(a[1], b[1])),
                   (max(a[0], b[0]), max(a[1], b[1])))

    @property
    def width(self) -> float:
        return self.max_corner[0] - self.min_corner[0]

    @property
    def height(self) -> float:
        return self.max_corner[1] - self.min_corner[1]

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.min_corner[0] + self.max_corner[0]) / 2.0,
                (self.min_corner[1] + self.max_corner[1]) / 2.0)


@dataclass(frozen=True, eq=False)
class Box3D:
    """Axis-aligned world-frame box stored as the componentwise min/max corners.

    The constructor normalizes corner ordering, so ``p1 <= p2`` holds
    componentwise for every instance. Degenerate (zero-extent) boxes are
    legal and flow through projection, IOU and lifting without faulting.
    """

    p1: np.ndarray
    p2: np.ndarray
    label: int | None = None
    track_id: int | None = None

    def __post_init__(self):
        a = np.asarray(self.p1, dtype=np.float64).reshape(3)
        b = np.asarray(self.p2, dtype=np.float64).reshape(3)
        object.__setattr__(self, "p1", _readonly(np.minimum(a, b)))
        object.__setattr__(self, "p2", _readonly(np.maximum(a, b)))

    @property
    def center(self) -> np.ndarray:
        return (self.p1 + self.p2) / 2.0

    @property
    def size(self) -> np.ndarray:
        return self.p2 - self.p1

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def corners(self) -> np.ndarray:
        """All 8 corners as an (8, 3) array."""
        xs = (self.p1[0], self.p2[0])
        ys = (self.p1[1], self.p2[1])
        zs = (self.p1[2], self.p2[2])
        return np.array([(x, y, z) for x in xs for y in ys for z in zs])

    def contains(self, point) -> bool:
        """Inclusive membership test (boundary points count as inside)."""
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= self.p1) and np.all(p <= self.p2))


class Plane(enum.Enum):
    """The three axis-aligned world coordinate planes.

    The value holds the fixed (first, second) world-axis indices of the
    in-plane coordinates; ``missing_axis`` is the dropped axis.
    Declaration order is the deterministic tie-break order everywhere.
    """

    XOY = (0, 1)
    YOZ = (1, 2)
    ZOX = (2, 0)

    @property
    def axes(self) -> tuple[int, int]:
        return self.value

    @property
    def missing_axis(self) -> int:
        i, j = self.value
        return 3 - i - j


PLANES = (Plane.XOY, Plane.YOZ, Plane.ZOX)


@dataclass(frozen=True)
class Detection2D:
    """One detector output at a keyframe: class, confidence, pixel box, center depth (m)."""

    label: int
    score: float
    box: Box2D
    center_depth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"detection score {self.score} outside [0, 1]")


def transform_box(pose: PoseSE3, b: Box3D) -> Box3D:
    """Transform both corners as points and re-normalize to an axis-aligned box.

    Note this is corner transport, not an oriented-box transform: under
    rotation the result is the axis-aligned box spanned by the two moved
    corners.
    """
    q1 = pose.apply(b.p1)
    q2 = pose.apply(b.p2)
    return Box3D(q1, q2, label=b.label, track_id=b.track_id)


def backproject(u: float, v: float, depth_raw: float, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel (u, v) at raw depth into the camera frame.

    z = depth_raw / depth_scale, x = (u - cx) * z / fx, y = (v - cy) * z / fy.
    """
    if depth_raw <= 0:
        raise InvalidDepthError(f"non-positive depth {depth_raw}")
    z = depth_raw / k.depth_scale
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def _pinhole_at_depth(u: float, v: float, z: float, k: CameraIntrinsics) -> np.ndarray:
    # metric-depth variant of backproject, shared by lifting paths
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def lift_detection(d: Detection2D, pose_cw: PoseSE3, k: CameraIntrinsics) -> Box3D:
    """Lift a 2D detection into a world-frame 3D box.

    Both pixel corners are backprojected at the detection's center depth
    (the whole box is assumed to live at that depth), then moved to the
    world frame through the inverse of the world-to-camera pose.
    """
    if d.center_depth <= 0:
        raise InvalidDepthError(f"detection center depth {d.center_depth} is not positive")
    c1 = _pinhole_at_depth(*d.box.min_corner, d.center_depth, k)
    c2 = _pinhole_at_depth(*d.box.max_corner, d.center_depth, k)
    wc = inverse(pose_cw)
    return Box3D(wc.apply(c1), wc.apply(c2), label=d.label)


def project_to_plane(b: Box3D, plane: Plane) -> Box2D:
    """Drop the world axis not in ``plane``; corner ordering is preserved."""
    i, j = plane.axes
    return Box2D((b.p1[i], b.p1[j]), (b.p2[i], b.p2[j]))


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two rectangles; 0 when the union has no area."""
    ax1, ay1 = a.min_corner
    ax2, ay2 = a.max_corner
    bx1, by1 = b.min_corner
    bx2, by2 = b.max_corner
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume intersection over union of two axis-aligned boxes."""
    lo = np.maximum(a.p1, b.p1)
    hi = np.minimum(a.p2, b.p2)
    ext = hi - lo
    if np.any(ext <= 0.0):
        return 0.0
    inter = float(np.prod(ext))
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return inter / union
