"""Command-line surface for the full pipeline.

Subcommands: generate-scene, train-interp, train-forecast, extrapolate,
render, evaluate, plot.  Stage settings come from one JSON config document
(sections: interp, interp_train, sampler, solver, model, loss, train) with
individual flags taking precedence over the file, which takes precedence over
defaults.  Exit codes: 0 ok, 2 usage error, 3 missing artifact, 4 numerical
failure.  The ODEGS_SEED environment variable seeds any command that accepts
--seed when the flag is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .forecaster import Forecaster, ForecasterConfig, load_forecaster, save_forecaster
from .interp import (InterpConfig, InterpTrainConfig, TrainingDivergedError,
                     load_interp, save_interp, train_interp)
from .ode import SolverConfig, SolverError
from .pipeline import (MissingArtifactError, autoregressive_trajectories,
                       evaluate_trajectories, forecast_trajectories,
                       interp_ood_trajectories, plot_metric_curves,
                       render_trajectory, require_file, write_metrics_csv,
                       write_scene_artifacts)
from .sampling import PositionNormalizer, SamplerConfig, build_dataset
from .scene import SceneSpec, TrajectorySet, build_preset, generate_dataset
from .tensor import DomainError
from .training import LossConfig, TrainConfig, train_forecaster

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

VARIANTS = ("deterministic", "variational", "autoregressive", "timestamp-baseline")


def _default_seed(value):
    if value is not None:
        return int(value)
    return int(os.environ.get("ODEGS_SEED", "0"))


def _resolve_seed(flag, file_section: dict) -> int:
    """Precedence: --seed flag, then config file, then ODEGS_SEED, then 0."""
    if flag is not None:
        return int(flag)
    if "seed" in file_section:
        return int(file_section["seed"])
    return int(os.environ.get("ODEGS_SEED", "0"))


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(require_file(path, "config file").read_text())


def _section(cfg: dict, name: str, cls, **overrides):
    merged = dict(cfg.get(name, {}))
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    return cls(**merged)


# ---- subcommands -----------------------------------------------------------------


def cmd_generate_scene(args) -> int:
    seed = _default_seed(args.seed)
    if args.gaussians < 1:
        raise argparse.ArgumentTypeError("--gaussians must be at least 1")
    spec = build_preset(args.preset, args.gaussians, seed=seed,
                        image_size=args.image_size, period=args.period)
    frames = generate_dataset(spec, args.frames, args.split)
    paths = write_scene_artifacts(spec, frames, args.out)
    print(f"wrote {len(frames.images)} frames "
          f"({frames.n_train} train / {len(frames.images) - frames.n_train} eval) "
          f"under {args.out}")
    print(f"scene: {paths['scene']}")
    return EXIT_OK


def cmd_train_interp(args) -> int:
    cfg = _load_config(args.config)
    if (args.truth is None) == (args.scene is None):
        raise argparse.ArgumentTypeError(
            "provide exactly one of --truth (trajectory file) or --scene "
            "(spec to sample analytic training trajectories from)")
    if args.truth is not None:
        truth = TrajectorySet.load(require_file(args.truth, "trajectory file"))
    else:
        from .scene import analytic_states, split_timestamps

        spec = SceneSpec.load(require_file(args.scene, "scene spec"))
        times, n_train = split_timestamps(spec.t_min, spec.t_max,
                                          args.frames, args.split)
        train_times = times[:n_train]
        truth = TrajectorySet(train_times, analytic_states(spec, train_times))
    interp_cfg = _section(cfg, "interp", InterpConfig)
    seed = _resolve_seed(args.seed, cfg.get("interp_train", {}))
    train_cfg = _section(cfg, "interp_train", InterpTrainConfig,
                         epochs=args.epochs, seed=seed)
    model, report = train_interp(truth, interp_cfg, train_cfg)
    save_interp(model, args.out)
    print(f"interpolation model: final L1 {report['final_l1']:.3e} "
          f"after {report['epochs_run']} epochs -> {args.out}")
    return EXIT_OK


def cmd_train_forecast(args) -> int:
    cfg = _load_config(args.config)
    interp = load_interp(require_file(args.interp, "interpolation checkpoint"))
    sampler = _section(cfg, "sampler", SamplerConfig)
    solver = _section(cfg, "solver", SolverConfig)
    loss_cfg = _section(cfg, "loss", LossConfig)
    model_cfg = _section(cfg, "model", ForecasterConfig,
                         n_context=sampler.n_context,
                         variational=(args.variant == "variational"))
    seed = _resolve_seed(args.seed, cfg.get("train", {}))
    ckpt_dir = args.checkpoint_dir or str(Path(args.out).parent /
                                          (Path(args.out).stem + ".epochs"))
    train_cfg = _section(cfg, "train", TrainConfig, epochs=args.epochs,
                         batch_size=args.batch_size,
                         seed=seed, log_path=args.log,
                         checkpoint_dir=ckpt_dir)
    dataset = build_dataset(interp, sampler)
    model = Forecaster(model_cfg, seed=train_cfg.seed)
    variant = "autoregressive" if args.variant == "autoregressive" else "ode"
    result = train_forecaster(dataset, model, loss_cfg, train_cfg, solver, variant)
    save_forecaster(model, args.out, {
        "normalizer": dataset.normalizer.to_dict(),
        "sampler": dataset.cfg.to_dict(),
        "solver": solver.to_dict(),
        "t_max": dataset.t_max,
        "variant": args.variant,
    })
    print(f"trained {args.variant} forecaster on {len(dataset)} pairs: "
          f"final prediction loss {result.final_loss_e:.4e} -> {args.out}")
    return EXIT_OK


def _parse_times(args, t_max: float) -> np.ndarray:
    if args.times:
        times = np.array([float(v) for v in args.times.split(",")])
    else:
        if args.steps < 1:
            raise argparse.ArgumentTypeError("--steps must be at least 1")
        step = args.horizon / args.steps
        times = t_max + np.arange(1, args.steps + 1) * step
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise argparse.ArgumentTypeError("times must be strictly increasing")
    return times


def cmd_extrapolate(args) -> int:
    cfg = _load_config(args.config)
    interp = load_interp(require_file(args.interp, "interpolation checkpoint"))
    if args.variant == "timestamp-baseline":
        times = _parse_times(args, interp.t_max)
        traj = interp_ood_trajectories(interp, times)
    else:
        model, meta = load_forecaster(
            require_file(args.forecaster, "forecaster checkpoint"))
        sampler = SamplerConfig(**meta["sampler"]) if "sampler" in meta else \
            _section(cfg, "sampler", SamplerConfig)
        normalizer = PositionNormalizer.from_dict(meta["normalizer"]) \
            if "normalizer" in meta else PositionNormalizer.identity()
        solver = SolverConfig(**meta["solver"]) if "solver" in meta else \
            _section(cfg, "solver", SolverConfig)
        times = _parse_times(args, interp.t_max)
        if args.variant == "autoregressive":
            traj = autoregressive_trajectories(model, interp, sampler,
                                               normalizer, times)
        else:
            traj = forecast_trajectories(model, interp, sampler, normalizer,
                                         times, solver)
    traj.save(args.out)
    print(f"extrapolated {traj.num_gaussians} gaussians at "
          f"{times.size} timestamps ({args.variant}) -> {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    spec = SceneSpec.load(require_file(args.scene, "scene spec"))
    traj = TrajectorySet.load(require_file(args.trajectory, "trajectory file"))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    render_trajectory(traj, spec, args.camera, args.out, prefix=args.prefix)
    print(f"rendered {traj.timestamps.size} frames -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec = SceneSpec.load(require_file(args.scene, "scene spec"))
    traj = TrajectorySet.load(require_file(args.trajectory, "trajectory file"))
    rows = evaluate_trajectories(traj, spec, args.camera, args.variant)
    write_metrics_csv(rows, args.out)
    mean_psnr = float(np.mean([r.psnr for r in rows]))
    mean_ssim = float(np.mean([r.ssim for r in rows]))
    print(f"evaluated {len(rows)} frames: mean PSNR {mean_psnr:.2f} dB, "
          f"mean SSIM {mean_ssim:.4f} -> {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    for p in args.metrics:
        require_file(p, "metrics CSV")
    plot_metric_curves(args.metrics, args.out)
    print(f"plot -> {args.out}")
    return EXIT_OK


# ---- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatcast",
        description="Forecast dynamic Gaussian-splat scenes beyond the observed window.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-scene", help="synthesize a dynamic scene")
    p.add_argument("--preset", required=True,
                   choices=["circular", "linear", "harmonic", "mixed"])
    p.add_argument("--gaussians", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--split", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--period", type=float, default=1.25)
    p.set_defaults(func=cmd_generate_scene)

    p = sub.add_parser("train-interp", help="fit the in-window interpolation model")
    p.add_argument("--truth", default=None, help="training trajectory file")
    p.add_argument("--scene", default=None,
                   help="scene spec; analytic train-split trajectories are "
                        "sampled from it instead of --truth")
    p.add_argument("--frames", type=int, default=100,
                   help="frame count when sampling from --scene")
    p.add_argument("--split", type=float, default=0.8,
                   help="temporal train fraction when sampling from --scene")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_interp)

    p = sub.add_parser("train-forecast", help="train the trajectory forecaster")
    p.add_argument("--interp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--variant", default="deterministic",
                   choices=["deterministic", "variational", "autoregressive"])
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log", default=None, help="per-step metrics CSV path")
    p.add_argument("--checkpoint-dir", default=None)
    p.set_defaults(func=cmd_train_forecast)

    p = sub.add_parser("extrapolate", help="predict trajectories beyond the window")
    p.add_argument("--interp", required=True)
    p.add_argument("--forecaster", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--variant", default="deterministic", choices=list(VARIANTS))
    p.add_argument("--times", default=None,
                   help="comma-separated absolute timestamps (arbitrary grid)")
    p.add_argument("--horizon", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=10)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("render", help="render a trajectory file to PPM frames")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--prefix", default="frame")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="score a trajectory against ground truth")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="plot metric CSVs over time")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (argparse.ArgumentTypeError, ValueError) as e:
        if isinstance(e, (DomainError,)):
            print(f"numerical failure: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, TrainingDivergedError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
