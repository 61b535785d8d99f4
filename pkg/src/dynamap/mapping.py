"""Probabilistic semantic occupancy octree.

Occupancy is tracked in log-odds and fused additively: every point
insertion adds a fixed increment to the leaf containing it — a positive
one for ordinary (static) points and a negative one for points marked
movable, so surfaces belonging to movable objects never accumulate
enough evidence to count as occupied. Increments are clamped stepwise to
keep the map recoverable when the scene changes. Only endpoint voxels
are updated; no free-space carving along rays.

Leaves also accumulate a mean sensor color, a class-label histogram and
a movable-hit counter. Inner nodes cache the maximum log-odds of their
subtree for coarse queries; the cache is maintained lazily and refreshed
on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import MapError
from .geometry import Box3D, CameraIntrinsics, PoseSE3, inverse
from .labels import label_color

TREE_DEPTH = 16
_KEY_OFFSET = 1 << (TREE_DEPTH - 1)
_KEY_LIMIT = 1 << TREE_DEPTH


def logit(p: float) -> float:
    """Natural-log odds of a probability in the open interval (0, 1)."""
    if not 0.0 < p < 1.0:
        raise MapError(f"probability {p} outside (0, 1)")
    return math.log(p / (1.0 - p))


def inverse_logit(l: float) -> float:
    return 1.0 / (1.0 + math.exp(-l))


@dataclass
class MapConfig:
    voxel_size: float = 0.05
    tau_static: float = 0.85
    tau_movable: float = -0.41
    occupancy_threshold: float = 0.5
    clamp_min: float = -2.0
    clamp_max: float = 3.5

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise MapError("voxel_size must be positive")
        if not 0.0 < self.occupancy_threshold < 1.0:
            raise MapError("occupancy_threshold must be in (0, 1)")
        if not self.clamp_min < 0.0 < self.clamp_max:
            raise MapError("clamp bounds must straddle 0")

    @property
    def occupancy_logit(self) -> float:
        return logit(self.occupancy_threshold)


@dataclass(frozen=True)
class LabeledPoint:
    """One observation: world position, sensor color, optional class, movable mark."""

    position: np.ndarray
    color: tuple[int, int, int] = (127, 127, 127)
    label: int | None = None
    movable: bool = False


class VoxelNode:
    """Octree leaf: fused log-odds plus color / label / movable statistics."""

    __slots__ = ("log_odds", "color_sum", "color_n", "label_histogram",
                 "movable_hits")

    def __init__(self):
        self.log_odds = 0.0
        self.color_sum = [0.0, 0.0, 0.0]
        self.color_n = 0
        self.label_histogram: dict[int, int] | None = None
        self.movable_hits = 0

    @property
    def majority_label(self) -> int | None:
        """Most frequent label, ties broken by lowest class id."""
        if not self.label_histogram:
            return None
        return min(self.label_histogram,
                   key=lambda lab: (-self.label_histogram[lab], lab))

    @property
    def color(self) -> tuple[int, int, int]:
        """Palette color when labeled, mean sensor color otherwise."""
        lab = self.majority_label
        if lab is not None:
            return label_color(lab)
        if self.color_n == 0:
            return (127, 127, 127)
        return tuple(int(round(c / self.color_n)) for c in self.color_sum)


class _InnerNode:
    __slots__ = ("children", "max_log_odds")

    def __init__(self):
        self.children: list = [None] * 8
        self.max_log_odds = -math.inf


@dataclass
class CloudStats:
    inserted: int = 0
    marked_movable: int = 0
    labeled: int = 0


class SemanticOctree:
    """Occupancy octree with per-leaf semantics. Insertions require
    exclusive access; concurrent reads without a writer are safe."""

    def __init__(self, cfg: MapConfig | None = None):
        self.cfg = cfg or MapConfig()
        self._root = _InnerNode()
        self._leaves: dict[tuple[int, int, int], VoxelNode] = {}
        self._agg_epoch = 0
        self._agg_computed = 0
        self.insertions = 0

    # -- voxel addressing -------------------------------------------------

    def key_of(self, position) -> tuple[int, int, int]:
        """Integer voxel key of a world position (single shared key
        function, so insertion and queries agree on voxel boundaries)."""
        p = np.asarray(position, dtype=np.float64)
        if not np.all(np.isfinite(p)):
            raise MapError(f"non-finite position {position}")
        vs = self.cfg.voxel_size
        key = tuple(int(math.floor(c / vs)) for c in p)
        for c in key:
            if not -_KEY_OFFSET <= c < _KEY_OFFSET:
                raise MapError(f"position {position} outside the mapped extent")
        return key

    def voxel_center(self, key: tuple[int, int, int]) -> np.ndarray:
        vs = self.cfg.voxel_size
        return np.array([(k + 0.5) * vs for k in key])

    def _walk_create(self, key: tuple[int, int, int]) -> VoxelNode:
        kx = key[0] + _KEY_OFFSET
        ky = key[1] + _KEY_OFFSET
        kz = key[2] + _KEY_OFFSET
        node = self._root
        for level in range(TREE_DEPTH - 1, 0, -1):
            idx = (((kx >> level) & 1)
                   | (((ky >> level) & 1) << 1)
                   | (((kz >> level) & 1) << 2))
            child = node.children[idx]
            if child is None:
                child = _InnerNode()
                node.children[idx] = child
            node = child
        idx = (kx & 1) | ((ky & 1) << 1) | ((kz & 1) << 2)
        leaf = node.children[idx]
        if leaf is None:
            leaf = VoxelNode()
            node.children[idx] = leaf
        return leaf

    # -- updates -----------------------------------------------------------

    def insert(self, pt: LabeledPoint) -> VoxelNode:
        """Fuse one observation into the leaf containing it.

        The leaf's log-odds moves by the movable or static increment and
        is clamped stepwise into [clamp_min, clamp_max].
        """
        key = self.key_of(pt.position)
        leaf = self._leaves.get(key)
        if leaf is None:
            leaf = self._walk_create(key)
            self._leaves[key] = leaf
        cfg = self.cfg
        tau = cfg.tau_movable if pt.movable else cfg.tau_static
        l = leaf.log_odds + tau
        if l > cfg.clamp_max:
            l = cfg.clamp_max
        elif l < cfg.clamp_min:
            l = cfg.clamp_min
        leaf.log_odds = l
        if pt.label is not None:
            if leaf.label_histogram is None:
                leaf.label_histogram = {}
            leaf.label_histogram[pt.label] = leaf.label_histogram.get(pt.label, 0) + 1
        else:
            cs = leaf.color_sum
            cs[0] += pt.color[0]
            cs[1] += pt.color[1]
            cs[2] += pt.color[2]
            leaf.color_n += 1
        if pt.movable:
            leaf.movable_hits += 1
        self.insertions += 1
        self._agg_epoch += 1
        return leaf

    def insert_labeled_cloud(
        self,
        points: Iterable[LabeledPoint],
        boxes: Sequence[Box3D],
        movable_labels: Iterable[int] = (),
    ) -> CloudStats:
        """Classify every point against the given boxes, then insert it.

        A point inside a box of a movable class (inclusive bounds) is
        marked movable and takes the box label; inside a static labeled
        box it takes the label only. Membership in a movable box wins
        over a static one.
        """
        movable = frozenset(movable_labels)
        stats = CloudStats()
        lo = np.array([b.p1 for b in boxes]) if boxes else None
        hi = np.array([b.p2 for b in boxes]) if boxes else None
        box_labels = [b.label for b in boxes]
        box_movable = [b.label is not None and b.label in movable for b in boxes]
        for pt in points:
            label = pt.label
            is_movable = pt.movable
            if lo is not None:
                p = np.asarray(pt.position)
                inside = np.all((p >= lo) & (p <= hi), axis=1)
                static_label = None
                for bi in np.flatnonzero(inside):
                    if box_movable[bi]:
                        is_movable = True
                        label = box_labels[bi]
                        break
                    if static_label is None and box_labels[bi] is not None:
                        static_label = box_labels[bi]
                if not is_movable and static_label is not None:
                    label = static_label
            self.insert(LabeledPoint(pt.position, pt.color, label, is_movable))
            stats.inserted += 1
            if is_movable:
                stats.marked_movable += 1
            if label is not None:
                stats.labeled += 1
        return stats

    # -- queries -----------------------------------------------------------

    def node_at(self, position) -> VoxelNode | None:
        return self._leaves.get(self.key_of(position))

    def is_occupied(self, position) -> bool:
        """True iff the containing leaf exists and its log-odds exceeds
        the occupancy threshold; unobserved space is never occupied."""
        leaf = self._leaves.get(self.key_of(position))
        return leaf is not None and leaf.log_odds > self.cfg.occupancy_logit

    def leaves(self) -> Iterator[tuple[tuple[int, int, int], VoxelNode]]:
        yield from self._leaves.items()

    def occupied_leaves(self) -> Iterator[tuple[tuple[int, int, int], VoxelNode]]:
        thr = self.cfg.occupancy_logit
        for key, leaf in self._leaves.items():
            if leaf.log_odds > thr:
                yield key, leaf

    def __len__(self) -> int:
        return len(self._leaves)

    def coarse_max_log_odds(self, min_corner, max_corner) -> float:
        """Maximum leaf log-odds within an axis-aligned key-space region,
        answered from the inner-node max cache (refreshed lazily).
        -inf when the region holds no leaf."""
        if self._agg_computed != self._agg_epoch:
            self._refresh_aggregates(self._root, TREE_DEPTH)
            self._agg_computed = self._agg_epoch
        lo = self.key_of(min_corner)
        hi = self.key_of(max_corner)
        lo = tuple(c + _KEY_OFFSET for c in lo)
        hi = tuple(c + _KEY_OFFSET for c in hi)
        return self._region_max(self._root, TREE_DEPTH, (0, 0, 0), lo, hi)

    def _refresh_aggregates(self, node: _InnerNode, depth: int) -> float:
        best = -math.inf
        for child in node.children:
            if child is None:
                continue
            if depth == 1:
                v = child.log_odds
            else:
                v = self._refresh_aggregates(child, depth - 1)
            if v > best:
                best = v
        node.max_log_odds = best
        return best

    def _region_max(self, node, depth, origin, lo, hi) -> float:
        size = 1 << depth
        node_lo = origin
        node_hi = tuple(o + size - 1 for o in origin)
        if any(node_hi[i] < lo[i] or node_lo[i] > hi[i] for i in range(3)):
            return -math.inf
        if isinstance(node, VoxelNode):
            return node.log_odds
        if all(lo[i] <= node_lo[i] and node_hi[i] <= hi[i] for i in range(3)):
            return node.max_log_odds
        best = -math.inf
        half = size >> 1
        for idx, child in enumerate(node.children):
            if child is None:
                continue
            child_origin = (origin[0] + (idx & 1) * half,
                            origin[1] + ((idx >> 1) & 1) * half,
                            origin[2] + ((idx >> 2) & 1) * half)
            v = self._region_max(child, depth - 1, child_origin, lo, hi)
            if v > best:
                best = v
        return best


def cloud_from_depth(
    rgb: np.ndarray,
    depth: np.ndarray,
    pose_cw: PoseSE3,
    k: CameraIntrinsics,
    stride: int = 2,
) -> list[LabeledPoint]:
    """Backproject every ``stride``-th valid depth pixel into a colored
    world-frame point. Pixels with depth <= 0 are skipped."""
    if stride < 1:
        raise MapError(f"stride must be >= 1, got {stride}")
    rgb = np.asarray(rgb)
    depth = np.asarray(depth)
    if rgb.shape[:2] != depth.shape[:2]:
        raise MapError(
            f"rgb {rgb.shape[:2]} and depth {depth.shape[:2]} resolutions differ")
    vs = depth[::stride, ::stride].astype(np.float64)
    h, w = vs.shape
    us, vs_idx = np.meshgrid(np.arange(0, w * stride, stride),
                             np.arange(0, h * stride, stride))
    valid = vs > 0
    if not np.any(valid):
        return []
    z = vs[valid] / k.depth_scale
    u = us[valid].astype(np.float64)
    v = vs_idx[valid].astype(np.float64)
    cam = np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=1)
    world = inverse(pose_cw).apply(cam)
    colors = rgb[::stride, ::stride][valid]
    return [LabeledPoint(world[i], (int(colors[i][0]), int(colors[i][1]),
                                    int(colors[i][2])))
            for i in range(len(world))]


# -- persistence -----------------------------------------------------------

_MAP_MAGIC = "# dynamap semantic octree v1"


def save_map(tree: SemanticOctree, path) -> None:
    """Write the full map (every leaf) as versioned line text.

    Layout: the magic line; header ``key=value`` lines (voxel_size, taus,
    occupancy threshold, clamp bounds); then one leaf per line:

        ix iy iz log_odds cr cg cb color_n movable_hits [label:count ...]

    ``cr cg cb`` are the raw color sums, so a reloaded map keeps blending
    correctly. Floats use repr precision and round-trip exactly.
    """
    cfg = tree.cfg
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(_MAP_MAGIC + "\n")
        f.write(f"voxel_size={cfg.voxel_size!r}\n")
        f.write(f"tau_static={cfg.tau_static!r}\n")
        f.write(f"tau_movable={cfg.tau_movable!r}\n")
        f.write(f"occupancy_threshold={cfg.occupancy_threshold!r}\n")
        f.write(f"clamp_min={cfg.clamp_min!r}\n")
        f.write(f"clamp_max={cfg.clamp_max!r}\n")
        f.write(f"leaves={len(tree)}\n")
        for key in sorted(tree._leaves):
            leaf = tree._leaves[key]
            hist = ""
            if leaf.label_histogram:
                hist = " " + " ".join(
                    f"{lab}:{n}" for lab, n in sorted(leaf.label_histogram.items()))
            f.write(f"{key[0]} {key[1]} {key[2]} {leaf.log_odds!r} "
                    f"{leaf.color_sum[0]!r} {leaf.color_sum[1]!r} "
                    f"{leaf.color_sum[2]!r} {leaf.color_n} "
                    f"{leaf.movable_hits}{hist}\n")


def load_map(path) -> SemanticOctree:
    """Read a map written by :func:`save_map`."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MAP_MAGIC:
        raise MapError(f"{path}: not a dynamap map file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and "=" in lines[i]:
        k, _, v = lines[i].partition("=")
        header[k] = v
        i += 1
    try:
        cfg = MapConfig(
            voxel_size=float(header["voxel_size"]),
            tau_static=float(header["tau_static"]),
            tau_movable=float(header["tau_movable"]),
            occupancy_threshold=float(header["occupancy_threshold"]),
            clamp_min=float(header["clamp_min"]),
            clamp_max=float(header["clamp_max"]),
        )
    except KeyError as e:
        raise MapError(f"{path}: missing header field {e}") from None
    tree = SemanticOctree(cfg)
    for lineno in range(i, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) < 9:
            raise MapError(f"{path}:{lineno + 1}: malformed leaf record")
        key = (int(parts[0]), int(parts[1]), int(parts[2]))
        leaf = tree._walk_create(key)
        tree._leaves[key] = leaf
        leaf.log_odds = float(parts[3])
        leaf.color_sum = [float(parts[4]), float(parts[5]), float(parts[6])]
        leaf.color_n = int(parts[7])
        leaf.movable_hits = int(parts[8])
        for entry in parts[9:]:
            lab, _, n = entry.partition(":")
            if leaf.label_histogram is None:
                leaf.label_histogram = {}
            leaf.label_histogram[int(lab)] = int(n)
    tree._agg_epoch += 1
    return tree


def export_ply(tree: SemanticOctree, path) -> int:
    """ASCII PLY of occupied-voxel centers with uchar RGB, for external
    viewers. Returns the vertex count."""
    rows = []
    for key, leaf in sorted(tree.occupied_leaves()):
        c = tree.voxel_center(key)
        r, g, b = leaf.color
        rows.append(f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {r} {g} {b}")
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(rows)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for row in rows:
            f.write(row + "\n")
    return len(rows)
