"""The 20 detector object classes, their ids, and the voxel color palette.

Class ids are the index into ``CLASS_NAMES`` (the classic 20-class
detector vocabulary). The palette is the standard segmentation colormap
for the same 20 classes, so maps render with familiar colors.
"""

from __future__ import annotations

CLASS_NAMES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)

CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# Movable by default: object classes that can move whether or not they
# currently are (people and cars); fully overridable at run time.
DEFAULT_MOVABLE_CLASSES = frozenset({CLASS_IDS["person"], CLASS_IDS["car"]})

# RGB per class id, uint8.
PALETTE = (
    (128, 0, 0), (0, 128, 0), (128, 128, 0), (0, 0, 128), (128, 0, 128),
    (0, 128, 128), (128, 128, 128), (64, 0, 0), (192, 0, 0), (64, 128, 0),
    (192, 128, 0), (64, 0, 128), (192, 0, 128), (64, 128, 128), (192, 128, 128),
    (0, 64, 0), (128, 64, 0), (0, 192, 0), (128, 192, 0), (0, 64, 128),
)


def class_id(name: str) -> int:
    """Resolve a class name, raising ``KeyError`` for unknown names."""
    return CLASS_IDS[name]


def class_name(label: int) -> str:
    return CLASS_NAMES[label]


def label_color(label: int) -> tuple[int, int, int]:
    return PALETTE[label]
