#!/usr/bin/env python3
"""Ablation harness: latent-ODE forecaster vs the discrete autoregressive one.

Trains both variants under identical supervision (same scene, sampled pairs,
seed, and budget) and emits a comparison CSV of trajectory errors over the
extrapolation horizon.  The direction of the gap is reported, not asserted:
desk-scale variance is real.

Usage: python scripts/compare_variants.py [--out runs/ablation]
"""

import argparse
import copy
from pathlib import Path

from splatcast.forecaster import Forecaster, ForecasterConfig
from splatcast.interp import InterpConfig, InterpTrainConfig, train_interp
from splatcast.ode import SolverConfig
from splatcast.pipeline import (autoregressive_trajectories, compare_variants_csv,
                                forecast_trajectories, trajectory_errors)
from splatcast.sampling import SamplerConfig, build_dataset
from splatcast.scene import build_preset, generate_dataset
from splatcast.training import LossConfig, TrainConfig, train_forecaster


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--gaussians", type=int, default=128)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = build_preset("circular", args.gaussians, seed=1, image_size=48)
    frames = generate_dataset(spec, 50, 0.8)
    truth_train = frames.trajectories.slice_time(0, frames.n_train)
    interp, _ = train_interp(
        truth_train, InterpConfig(),
        InterpTrainConfig(epochs=300, times_per_batch=10, lr=2e-3, lr_min=1e-4,
                          seed=args.seed, dtype="float32", target_l1=2e-3))

    sampler = SamplerConfig(n_context=20, n_target=10, context_span=0.5,
                           t0_stride=(0.5 / 19) / 8)
    dataset = build_dataset(interp, sampler)
    cfg = ForecasterConfig(d_model=32, n_heads=4, n_layers=1, d_ff=128,
                           d_latent=24, ode_hidden=32, ode_layers=3,
                           dec_hidden=64, dec_layers=3,
                           n_context=sampler.n_context, dtype="float32")
    train_cfg = TrainConfig(batch_size=128, epochs=args.epochs, lr_max=2e-3,
                            seed=args.seed, grad_max_norm=1.0)
    eval_times = frames.eval_timestamps

    results = {}
    for variant in ("ode", "autoregressive"):
        model = Forecaster(copy.deepcopy(cfg), seed=args.seed)
        res = train_forecaster(dataset, model,
                               LossConfig(lambda_traj=1e-4, lambda_latent=1e-6),
                               copy.deepcopy(train_cfg), SolverConfig(), variant)
        if variant == "ode":
            traj = forecast_trajectories(model, interp, sampler,
                                         dataset.normalizer, eval_times)
        else:
            traj = autoregressive_trajectories(model, interp, sampler,
                                               dataset.normalizer, eval_times)
        results[variant] = trajectory_errors(traj, spec)
        print(f"{variant:>16s}: final loss {res.final_loss_e:.4f}  "
              f"mean posL1 {results[variant]['mean_l1']:.4f}  "
              f"horizon-end posL1 {results[variant]['horizon_end_l1']:.4f}")

    text = compare_variants_csv(results, out / "variant_comparison.csv")
    print(text)
    direction = "<=" if results["ode"]["horizon_end_l1"] <= \
        results["autoregressive"]["horizon_end_l1"] else ">"
    print(f"direction: ode {direction} autoregressive at horizon end")


if __name__ == "__main__":
    main()
