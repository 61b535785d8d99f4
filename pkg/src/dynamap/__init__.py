"""Keyframe-gated movable-object tracking, prediction and semantic
octree mapping for RGB-D sequences."""

from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    Detection2D,
    Plane,
    PoseSE3,
    backproject,
    compose,
    inverse,
    iou_2d,
    iou_3d,
    lift_detection,
    project_to_plane,
    transform_box,
)
from .tracking import (
    KalmanBoxState,
    PlaneTrack,
    PlaneTracker,
    TrackedBox2D,
    TrackerConfig,
    hungarian_assign,
    kalman_predict,
    kalman_update,
)
from .fusion import FusionEngine, PredictionResult, cull_keypoints, fuse_planes
from .mapping import (
    LabeledPoint,
    MapConfig,
    SemanticOctree,
    VoxelNode,
    cloud_from_depth,
    export_ply,
    inverse_logit,
    load_map,
    logit,
    save_map,
)
from .dataset import (
    FrameRecord,
    Trajectory,
    ate_rmse,
    load_detections,
    load_trajectory,
    load_tum_sequence,
    write_trajectory,
)
from .pipeline import RunConfig, RunReport, run_pipeline
from .synthetic import SyntheticScene, eval_map, generate_synthetic, standard_scene

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
