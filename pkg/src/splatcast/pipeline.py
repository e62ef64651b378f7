"""End-to-end orchestration: scene artifacts, forecasting, evaluation, plots.

These functions glue the stages together for the CLI and the experiment
scripts: write/read scene artifacts, roll the frozen interpolation model into
trajectory forecasts, render predictions against analytic ground truth, and
emit per-frame metric CSVs (schema: frame_index,t,psnr,ssim,variant).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forecaster import Forecaster
from .interp import InterpModel
from .metrics import psnr, ssim
from .ode import SolverConfig
from .rasterizer import render, write_ppm
from .sampling import PositionNormalizer, SamplerConfig, final_context
from .scene import FrameSet, SceneSpec, TrajectorySet, analytic_states

METRICS_HEADER = "frame_index,t,psnr,ssim,variant"


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path, what: str):
        super().__init__(f"missing {what}: expected file at {path}")
        self.path = str(path)


def require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(path, what)
    return path


# ---- scene artifacts -----------------------------------------------------------


def write_scene_artifacts(spec: SceneSpec, frames: FrameSet, out_dir) -> dict:
    """scene.json, ground-truth trajectories, frame PPMs, and a frame index."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    spec.save(out_dir / "scene.json")
    frames.trajectories.save(out_dir / "truth.ogtj")
    train_part = frames.trajectories.slice_time(0, frames.n_train)
    train_part.save(out_dir / "truth_train.ogtj")
    index = []
    for j, t in enumerate(frames.timestamps):
        split = "train" if j < frames.n_train else "eval"
        name = f"frames/{split}_{j:04d}.ppm"
        write_ppm(frames.images[j], out_dir / name)
        index.append({"frame_index": j, "t": float(t), "split": split,
                      "camera": int(frames.camera_indices[j]), "file": name})
    (out_dir / "frames" / "index.json").write_text(json.dumps(index, indent=2))
    return {
        "scene": str(out_dir / "scene.json"),
        "truth": str(out_dir / "truth.ogtj"),
        "truth_train": str(out_dir / "truth_train.ogtj"),
        "frame_index": str(out_dir / "frames" / "index.json"),
    }


# ---- forecasting to trajectories --------------------------------------------------


def forecast_trajectories(model: Forecaster, source, sampler: SamplerConfig,
                          normalizer: PositionNormalizer, times,
                          solver: SolverConfig | None = None) -> TrajectorySet:
    """Extrapolate every Gaussian from the final observed context to ``times``.

    ``times`` may be any increasing grid at or beyond the source window's end;
    the dense solver output makes arbitrary timestamps legal.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    contexts, ctx_times = final_context(source, sampler)
    ctx_norm = normalizer.normalize(contexts)
    preds, _ = model.forecast(ctx_norm, float(ctx_times[-1]), times,
                              solver or SolverConfig())
    return TrajectorySet(times, normalizer.denormalize(preds.data))


def autoregressive_trajectories(model: Forecaster, source,
                                sampler: SamplerConfig,
                                normalizer: PositionNormalizer,
                                times) -> TrajectorySet:
    """Discrete-step rollout labeled with the requested grid (one row per step)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    contexts, _ = final_context(source, sampler)
    ctx_norm = normalizer.normalize(contexts)
    preds = model.forecast_autoregressive(ctx_norm, times.size)
    return TrajectorySet(times, normalizer.denormalize(preds.data))


def interp_ood_trajectories(interp: InterpModel, times) -> TrajectorySet:
    """Timestamp-conditioned model pushed beyond its window (the OOD baseline)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    return TrajectorySet(times, interp.states_at(times, allow_extrapolation=True))


def freeze_last_frame_trajectories(source, times) -> TrajectorySet:
    """No-dynamics baseline: the final observed state repeated at every time."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    last = np.asarray(source.states_at(np.array([source.t_max])))[:, 0, :]
    return TrajectorySet(times, np.repeat(last[:, None, :], times.size, axis=1))


# ---- evaluation --------------------------------------------------------------------


@dataclass
class FrameMetrics:
    frame_index: int
    t: float
    psnr: float
    ssim: float
    variant: str


def render_trajectory(traj: TrajectorySet, spec: SceneSpec, camera_index: int = 0,
                      out_dir=None, prefix: str = "frame") -> list:
    cam = spec.cameras[camera_index]
    colors = spec.static_colors()
    opacities = spec.static_opacities()
    images = []
    for j in range(traj.timestamps.size):
        img = render(traj.params[:, j], colors, opacities, cam)
        images.append(img)
        if out_dir is not None:
            write_ppm(img, Path(out_dir) / f"{prefix}_{j:04d}.ppm")
    return images


def evaluate_trajectories(pred: TrajectorySet, spec: SceneSpec,
                          camera_index: int = 0,
                          variant: str = "deterministic") -> list[FrameMetrics]:
    """Render predictions and analytic ground truth at shared times, then score."""
    truth_params = analytic_states(spec, pred.timestamps)
    cam = spec.cameras[camera_index]
    colors = spec.static_colors()
    opacities = spec.static_opacities()
    rows = []
    for j, t in enumerate(pred.timestamps):
        img_pred = render(pred.params[:, j], colors, opacities, cam)
        img_true = render(truth_params[:, j], colors, opacities, cam)
        rows.append(FrameMetrics(j, float(t), psnr(img_pred, img_true),
                                 ssim(img_pred, img_true), variant))
    return rows


def metrics_csv_text(rows: list[FrameMetrics]) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(f"{r.frame_index},{r.t!r},{r.psnr!r},{r.ssim!r},{r.variant}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows: list[FrameMetrics], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv_text(rows))


def read_metrics_csv(path) -> list[FrameMetrics]:
    lines = Path(path).read_text().strip().splitlines()
    if lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected CSV header {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        fi, t, p, s, variant = line.split(",")
        rows.append(FrameMetrics(int(fi), float(t), float(p), float(s), variant))
    return rows


def position_l1(pred: TrajectorySet, truth_params: np.ndarray) -> float:
    """Mean over Gaussians and steps of the 1-norm position error."""
    diff = np.abs(pred.params[:, :, 0:3] - truth_params[:, :, 0:3])
    return float(diff.sum(axis=-1).mean())


# ---- plotting -----------------------------------------------------------------------


def plot_metric_curves(csv_paths, out_path):
    """PSNR and SSIM over time, one line per variant, written as SVG or PNG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for path in csv_paths:
        rows = read_metrics_csv(path)
        by_variant: dict[str, list[FrameMetrics]] = {}
        for r in rows:
            by_variant.setdefault(r.variant, []).append(r)
        for variant, vr in sorted(by_variant.items()):
            ts = [r.t for r in vr]
            axes[0].plot(ts, [r.psnr for r in vr], marker="o", label=variant)
            axes[1].plot(ts, [r.ssim for r in vr], marker="o", label=variant)
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.suptitle("extrapolation quality over time")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)


# ---- variant comparison harness -----------------------------------------------------


def compare_variants_csv(results: dict[str, dict], path=None) -> str:
    """Comparison table for trained variants: per-variant trajectory errors.

    ``results`` maps variant name to {"mean_l1": ..., "horizon_end_l1": ...}.
    """
    lines = ["variant,mean_position_l1,horizon_end_position_l1"]
    for name in sorted(results):
        r = results[name]
        lines.append(f"{name},{r['mean_l1']!r},{r['horizon_end_l1']!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def trajectory_errors(pred: TrajectorySet, spec: SceneSpec) -> dict:
    truth = analytic_states(spec, pred.timestamps)
    per_step = np.abs(pred.params[:, :, 0:3] - truth[:, :, 0:3]).sum(axis=-1)
    return {
        "mean_l1": float(per_step.mean()),
        "horizon_end_l1": float(per_step[:, -1].mean()),
    }
