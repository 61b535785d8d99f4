"""Figure rendering for run reports: written as PNG files next to the
delimited outputs, never shown interactively."""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_run_figures(report, tree, frames, out_dir: Path) -> list[Path]:
    """Render the standard run figures into ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    written.append(_timing_figure(report, out_dir / "timing_percentiles.png"))
    written.append(_map_topdown_figure(tree, out_dir / "map_topdown.png"))
    written.append(_trajectory_figure(frames, out_dir / "trajectory_topdown.png"))
    return [p for p in written if p is not None]


def _timing_figure(report, path: Path) -> Path | None:
    timing = report.timing
    if not timing:
        return None
    stages = list(timing)
    metrics = ("mean", "p50", "p90", "p99")
    x = np.arange(len(stages), dtype=float)
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, m in enumerate(metrics):
        vals = [timing[s][m] for s in stages]
        ax.bar(x + i * width, vals, width, label=m)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(stages, rotation=20)
    ax.set_ylabel("milliseconds per call")
    ax.set_title("Per-stage processing time")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _map_topdown_figure(tree, path: Path) -> Path | None:
    pts = []
    colors = []
    for key, leaf in tree.occupied_leaves():
        c = tree.voxel_center(key)
        pts.append((c[0], c[2]))
        colors.append(tuple(v / 255.0 for v in leaf.color))
    fig, ax = plt.subplots(figsize=(6, 6))
    if pts:
        arr = np.asarray(pts)
        ax.scatter(arr[:, 0], arr[:, 1], c=colors, s=4, marker="s")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_title(f"Occupied voxels, top-down ({len(pts)})")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _trajectory_figure(frames, path: Path) -> Path | None:
    from .geometry import inverse

    xs, zs, kf = [], [], []
    for fr in frames:
        if fr.pose_cw is None:
            continue
        c = inverse(fr.pose_cw).translation
        xs.append(c[0])
        zs.append(c[2])
        kf.append(fr.is_keyframe)
    fig, ax = plt.subplots(figsize=(6, 6))
    if xs:
        ax.plot(xs, zs, "-", color="tab:blue", lw=1, label="camera")
        kf_x = [x for x, f in zip(xs, kf) if f]
        kf_z = [z for z, f in zip(zs, kf) if f]
        if kf_x:
            ax.scatter(kf_x, kf_z, color="tab:red", s=14, zorder=3,
                       label="keyframes")
        ax.legend()
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_title("Camera trajectory, top-down")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
