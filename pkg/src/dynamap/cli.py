"""Command-line interface: run the pipeline, generate synthetic data,
evaluate maps, and compute trajectory error."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .dataset import ate_rmse, load_trajectory
from .errors import DynamapError
from .geometry import CameraIntrinsics
from .labels import CLASS_IDS, CLASS_NAMES, DEFAULT_MOVABLE_CLASSES
from .mapping import MapConfig, load_map
from .pipeline import RunConfig, run_pipeline
from .synthetic import SyntheticScene, eval_map, generate_synthetic, standard_scene
from .tracking import TrackerConfig


def _parse_movable(value: str | None) -> frozenset[int]:
    if not value:
        return DEFAULT_MOVABLE_CLASSES
    out = set()
    for name in value.split(","):
        name = name.strip()
        if name not in CLASS_IDS:
            raise click.BadParameter(
                f"unknown class {name!r}; accepted: {', '.join(CLASS_NAMES)}")
        out.add(CLASS_IDS[name])
    return frozenset(out)


def _parse_intrinsics(value: str | None) -> CameraIntrinsics | None:
    if not value:
        return None
    parts = [float(p) for p in value.split(",")]
    if len(parts) not in (4, 5):
        raise click.BadParameter("expected fx,fy,cx,cy[,depth_scale]")
    return CameraIntrinsics(*parts)


@click.group()
def main():
    """Movable-object tracking, prediction and semantic octree mapping."""


@main.command()
@click.option("--sequence", required=True, type=click.Path(exists=True, file_okay=False),
              help="TUM-layout sequence directory.")
@click.option("--detections", type=click.Path(exists=True, dir_okay=False),
              help="Detection file; its timestamps mark keyframes.")
@click.option("--trajectory", type=click.Path(exists=True, dir_okay=False),
              help="Poses to use (TUM format); default: sequence groundtruth.")
@click.option("--keyframe-every", type=int, default=None,
              help="Fixed keyframe policy instead of detection-driven.")
@click.option("--movable-classes", default=None,
              help="Comma-separated class names (default: person,car).")
@click.option("--intrinsics", default=None,
              help="fx,fy,cx,cy[,depth_scale]; default: calibration.txt or TUM.")
@click.option("--voxel-size", type=float, default=0.05, show_default=True)
@click.option("--tau-static", type=float, default=0.85, show_default=True)
@click.option("--tau-movable", type=float, default=-0.41, show_default=True)
@click.option("--occupancy-threshold", type=float, default=0.5, show_default=True)
@click.option("--stride", type=int, default=2, show_default=True,
              help="Depth pixel stride for map insertion.")
@click.option("--margin", type=float, default=0.0, show_default=True,
              help="Pixel margin added to culling boxes.")
@click.option("--keypoint-step", type=int, default=16, show_default=True)
@click.option("--deterministic", is_flag=True,
              help="Single-threaded fixed-order processing.")
@click.option("--iou-gate", type=float, default=0.3, show_default=True)
@click.option("--max-age", type=int, default=3, show_default=True)
@click.option("--min-hits", type=int, default=1, show_default=True)
@click.option("--out-map", type=click.Path(dir_okay=False))
@click.option("--out-boxes", type=click.Path(dir_okay=False))
@click.option("--out-metrics", type=click.Path(dir_okay=False))
@click.option("--export-ply", "export_ply_path", type=click.Path(dir_okay=False))
@click.option("--out-figures", type=click.Path(file_okay=False),
              help="Directory for report figures (PNG).")
@click.option("--boxes-camera", is_flag=True,
              help="Append camera-frame columns to the box output.")
def run(sequence, detections, trajectory, keyframe_every, movable_classes,
        intrinsics, voxel_size, tau_static, tau_movable, occupancy_threshold,
        stride, margin, keypoint_step, deterministic, iou_gate, max_age,
        min_hits, out_map, out_boxes, out_metrics, export_ply_path,
        out_figures, boxes_camera):
    """Run the full pipeline over a sequence."""
    cfg = RunConfig(
        sequence_dir=Path(sequence),
        detections_path=Path(detections) if detections else None,
        trajectory_path=Path(trajectory) if trajectory else None,
        intrinsics=_parse_intrinsics(intrinsics),
        movable_classes=_parse_movable(movable_classes),
        keyframe_every=keyframe_every,
        tracker=TrackerConfig(iou_gate=iou_gate, max_age=max_age,
                              min_hits=min_hits),
        map=MapConfig(voxel_size=voxel_size, tau_static=tau_static,
                      tau_movable=tau_movable,
                      occupancy_threshold=occupancy_threshold),
        stride=stride,
        margin=margin,
        keypoint_step=keypoint_step,
        deterministic=deterministic,
        boxes_camera_columns=boxes_camera,
        out_map=Path(out_map) if out_map else None,
        out_boxes=Path(out_boxes) if out_boxes else None,
        out_metrics=Path(out_metrics) if out_metrics else None,
        out_ply=Path(export_ply_path) if export_ply_path else None,
        out_figures=Path(out_figures) if out_figures else None,
    )
    try:
        report = run_pipeline(cfg)
    except DynamapError as e:
        raise click.ClickException(str(e))
    click.echo(f"frames={report.frames_processed}/{report.frames_total} "
               f"keyframes={report.keyframes} boxes={report.boxes_emitted} "
               f"map_occupied={report.map_occupied}")


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--frames", type=int, default=90, show_default=True)
@click.option("--fps", type=float, default=30.0, show_default=True)
@click.option("--keyframe-every", type=int, default=5, show_default=True)
@click.option("--object-speed", type=float, default=0.1, show_default=True,
              help="World x velocity of the movable box (m/s).")
@click.option("--width", type=int, default=160, show_default=True)
@click.option("--height", type=int, default=120, show_default=True)
@click.option("--jitter-px", type=float, default=0.0, show_default=True)
@click.option("--drop-prob", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scene", "scene_path", type=click.Path(exists=True, dir_okay=False),
              help="Render this scene.json instead of the standard scene.")
def synth(out, frames, fps, keyframe_every, object_speed, width, height,
          jitter_px, drop_prob, seed, scene_path):
    """Generate a synthetic TUM-layout dataset with detections and ground truth."""
    try:
        if scene_path:
            scene = SyntheticScene.load(scene_path)
        else:
            scene = standard_scene(n_frames=frames, fps=fps,
                                   keyframe_every=keyframe_every,
                                   object_speed=object_speed, width=width,
                                   height=height, sigma_px=jitter_px,
                                   drop_prob=drop_prob, seed=seed)
        summary = generate_synthetic(scene, Path(out))
    except DynamapError as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {summary.n_frames} frames "
               f"({summary.n_keyframes} keyframes, "
               f"{summary.n_detections} detections) to {summary.out_dir}")


@main.command("eval-map")
@click.option("--map", "map_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--scene", "scene_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="scene.json written by synth.")
@click.option("--stride", type=int, default=2, show_default=True,
              help="Must match the stride the map was built with.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Also write the report to this file.")
def eval_map_cmd(map_path, scene_path, stride, out_path):
    """Score a map against the synthetic scene that produced it."""
    try:
        tree = load_map(map_path)
        scene = SyntheticScene.load(scene_path)
        quality = eval_map(tree, scene, stride=stride)
    except DynamapError as e:
        raise click.ClickException(str(e))
    text = quality.as_text()
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@main.command()
@click.option("--estimated", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--groundtruth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--align/--no-align", default=True, show_default=True)
def ate(estimated, groundtruth, align):
    """Absolute trajectory RMSE between two TUM trajectory files."""
    try:
        value = ate_rmse(load_trajectory(estimated), load_trajectory(groundtruth),
                         align=align)
    except DynamapError as e:
        raise click.ClickException(str(e))
    click.echo(f"ate_rmse_m={value:.9f}")


if __name__ == "__main__":
    sys.exit(main())
