"""Acceptance gate: ten criteria, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end scene
(criteria 6, 7, 8, 10) is a circular-motion scene with 128 Gaussians, period
1.25, window [0, 1], temporal split 0.8; the forecaster trains for at most 40
epochs.  The pipeline runs twice to check bit-exact determinism.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from splatcast import tensor as T
from splatcast.forecaster import Forecaster, ForecasterConfig
from splatcast.interp import InterpConfig, InterpTrainConfig, train_interp
from splatcast.metrics import ssim
from splatcast.ode import SolverConfig, integrate
from splatcast.pipeline import (evaluate_trajectories, forecast_trajectories,
                                freeze_last_frame_trajectories,
                                interp_ood_trajectories, metrics_csv_text,
                                autoregressive_trajectories,
                                compare_variants_csv, trajectory_errors)
from splatcast.rasterizer import render
from splatcast.sampling import SamplerConfig, build_dataset, context_times_for, \
    target_times_for, valid_start_times
from splatcast.scene import analytic_states, build_preset, generate_dataset
from splatcast.tensor import Parameter, Tape, Tensor
from splatcast.training import (LossConfig, TrainConfig, adaptive_scale,
                                kl_unit_gaussian, loss_extrapolation,
                                loss_variational, reg_latent, reg_traj,
                                train_forecaster, update_ema)

from helpers import central_difference


def check(criterion: int, ok: bool, detail: str):
    print(f"\n[criterion {criterion:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# Shared end-to-end run (criteria 6, 7, 8, 10)
# ---------------------------------------------------------------------------

SCENE_SEED = 1
RUN_SEED = 0
N_GAUSSIANS = 128
PERIOD = 1.25
N_FRAMES = 50
SPLIT = 0.8
IMAGE_SIZE = 48

SAMPLER = dict(n_context=20, n_target=10, context_span=0.5,
               t0_stride=(0.5 / 19) / 8)
MODEL = dict(d_model=32, n_heads=4, n_layers=1, d_ff=128, d_latent=24,
             ode_hidden=32, ode_layers=3, dec_hidden=64, dec_layers=3,
             n_context=20, dtype="float32")
LOSS = dict(lambda_traj=1e-4, lambda_latent=1e-6)
TRAIN = dict(batch_size=128, epochs=40, lr_max=2e-3, seed=RUN_SEED,
             grad_max_norm=1.0)
INTERP_TRAIN = dict(epochs=300, times_per_batch=10, lr=2e-3, lr_min=1e-4,
                    seed=RUN_SEED, dtype="float32", target_l1=2e-3)


@dataclass
class EndToEndRun:
    spec: object
    frames: object
    interp: object
    dataset: object
    model: object
    train_log_csv: str
    metrics_csv: str
    eval_times: np.ndarray
    truth_eval: np.ndarray
    pred: object
    position_l1: float
    orbit_radius: float
    forecast_psnr: float
    freeze_psnr: float
    runtime_s: float


def _run_pipeline() -> EndToEndRun:
    t0 = time.perf_counter()
    spec = build_preset("circular", N_GAUSSIANS, seed=SCENE_SEED,
                        image_size=IMAGE_SIZE, period=PERIOD)
    frames = generate_dataset(spec, N_FRAMES, SPLIT)
    truth_train = frames.trajectories.slice_time(0, frames.n_train)
    interp, _ = train_interp(truth_train, InterpConfig(),
                             InterpTrainConfig(**INTERP_TRAIN))
    sampler = SamplerConfig(**SAMPLER)
    dataset = build_dataset(interp, sampler)
    model = Forecaster(ForecasterConfig(**MODEL), seed=RUN_SEED)
    result = train_forecaster(dataset, model, LossConfig(**LOSS),
                              TrainConfig(**TRAIN), SolverConfig())

    eval_times = frames.eval_timestamps
    truth_eval = analytic_states(spec, eval_times)
    pred = forecast_trajectories(model, interp, sampler, dataset.normalizer,
                                 eval_times)
    pos_l1 = float(np.abs(pred.params[:, :, 0:3]
                          - truth_eval[:, :, 0:3]).sum(axis=-1).mean())
    radius = float(np.mean(np.linalg.norm(
        np.stack([g.mu for g in spec.gaussians])[:, :2], axis=1)))
    rows_forecast = evaluate_trajectories(pred, spec, 0, "deterministic")
    frozen = freeze_last_frame_trajectories(interp, eval_times)
    rows_freeze = evaluate_trajectories(frozen, spec, 0, "freeze")
    runtime = time.perf_counter() - t0
    return EndToEndRun(
        spec=spec, frames=frames, interp=interp, dataset=dataset, model=model,
        train_log_csv=result.csv_text(),
        metrics_csv=metrics_csv_text(rows_forecast + rows_freeze),
        eval_times=eval_times, truth_eval=truth_eval, pred=pred,
        position_l1=pos_l1, orbit_radius=radius,
        forecast_psnr=float(np.mean([r.psnr for r in rows_forecast])),
        freeze_psnr=float(np.mean([r.psnr for r in rows_freeze])),
        runtime_s=runtime,
    )


@pytest.fixture(scope="module")
def e2e():
    return _run_pipeline()


# ---------------------------------------------------------------------------
# Criterion 1: autodiff correctness
# ---------------------------------------------------------------------------


def _fd_vs_reverse(build_loss, values, h=1e-6):
    params = [Parameter(v) for v in values]
    with Tape():
        build_loss(params).backward()
    worst = 0.0
    for target in range(len(values)):
        def scalar(x):
            vals = [v.copy() for v in values]
            vals[target] = x
            with Tape():
                out = build_loss([Parameter(v) for v in vals])
            return float(out.data)

        fd = central_difference(scalar, values[target], h)
        an = params[target].grad
        gap = np.abs(fd - an)
        mask = gap > 1e-8  # below that, disagreement is FD noise on exact zeros
        if np.any(mask):
            worst = max(worst, float(np.max(
                gap[mask] / np.maximum(np.abs(fd[mask]), np.abs(an[mask])))))
    return worst


def test_criterion_1_autodiff_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ops = 0.0

    def u(op, **kw):
        return lambda p: T.tsum(T.sin(op(p[0], **kw) * 0.7))

    x = rng.uniform(-2, 2, size=(3, 4))
    pos = rng.uniform(0.2, 2, size=(3, 4))
    x_off = np.where(np.abs(x) < 1e-3, 0.4, x)
    a, b = rng.uniform(-2, 2, (2, 3, 4)), rng.uniform(-2, 2, (3, 4))
    bnz = np.where(np.abs(b) < 0.3, 0.7, b)
    m1, m2 = rng.uniform(-2, 2, (2, 3, 4)), rng.uniform(-2, 2, (4, 2))
    cases = {
        "tanh": (u(T.tanh), [x]), "exp": (u(T.exp), [x]),
        "sin": (u(T.sin), [x]), "cos": (u(T.cos), [x]),
        "neg": (u(T.neg), [x]), "relu": (u(T.relu), [x_off]),
        "abs": (u(T.absolute), [x_off]),
        "log": (u(T.log), [pos]), "sqrt": (u(T.sqrt), [pos]),
        "softmax": (u(T.softmax), [x]), "layernorm": (u(T.layernorm), [x]),
        "sum": (lambda p: T.tsum(T.sin(T.tsum(p[0], axis=1))), [a]),
        "mean": (lambda p: T.tsum(T.cos(T.tmean(p[0], axis=0))), [a]),
        "add": (lambda p: T.tsum(T.tanh(T.add(p[0], p[1]))), [a, b]),
        "sub": (lambda p: T.tsum(T.tanh(T.sub(p[0], p[1]))), [a, b]),
        "mul": (lambda p: T.tsum(T.tanh(T.mul(p[0], p[1]))), [a, b]),
        "div": (lambda p: T.tsum(T.tanh(T.div(p[0], p[1]))), [a, bnz]),
        "matmul": (lambda p: T.tsum(T.tanh(T.matmul(p[0], p[1]))), [m1, m2]),
        "transpose": (lambda p: T.tsum(T.sin(T.transpose_last(p[0]))), [x]),
        "reshape": (lambda p: T.tsum(T.sin(T.reshape(p[0], (4, 3)))), [x]),
        "slice": (lambda p: T.tsum(T.sin(p[0][1:, 1:3])), [x]),
        "concat": (lambda p: T.tsum(T.sin(T.concat([p[0], p[1]], axis=-1))),
                   [b, bnz]),
        "stack": (lambda p: T.tsum(T.sin(T.stack([p[0], p[1]], axis=0))),
                  [b, bnz]),
        "lincomb": (lambda p: T.tsum(T.sin(
            T.lincomb([0.3, -1.2, 2.0], [p[0], p[1], p[0]]))), [b, bnz]),
    }
    for name, (fn, vals) in cases.items():
        err = _fd_vs_reverse(fn, vals)
        assert err < 1e-5, f"op {name}: rel err {err}"
        worst_ops = max(worst_ops, err)

    # full pipeline on a tiny config, float64, fixed-step integration
    tiny = ForecasterConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16,
                            d_latent=4, ode_hidden=8, ode_layers=2,
                            dec_hidden=8, dec_layers=2, n_context=4)
    solver = SolverConfig(method="rk4", initial_step=0.1)
    model = Forecaster(tiny, seed=12)
    rng = np.random.default_rng(12)
    ctx = rng.uniform(-1, 1, size=(2, 4, 10))
    target = rng.uniform(-1, 1, size=(2, 2, 10))

    def pipeline_loss():
        preds, _ = model.forecast(Tensor(ctx), 0.5, [0.65, 0.95], solver)
        return T.tmean(T.tsum(T.absolute(preds - Tensor(target)), axis=-1))

    with Tape():
        pipeline_loss().backward()
    worst_pipe = 0.0
    for name, p in model.parameters().items():
        if name.startswith(("mu_head", "logvar_head")):
            continue
        flat = p.data.reshape(-1)
        idxs = np.random.default_rng(hash(name) % 2 ** 32).choice(
            flat.size, size=min(4, flat.size), replace=False)
        for i in idxs:
            old = flat[i]

            def at(v):
                p.data.reshape(-1)[i] = v
                with Tape():
                    out = pipeline_loss()
                p.data.reshape(-1)[i] = old
                return float(out.data)

            fd = (at(old + 1e-6) - at(old - 1e-6)) / 2e-6
            an = p.grad.reshape(-1)[i]
            if abs(fd - an) > 1e-8:
                worst_pipe = max(worst_pipe, abs(fd - an) / max(abs(fd), abs(an)))
    elapsed = time.perf_counter() - start
    ok = worst_ops < 1e-5 and worst_pipe < 1e-4 and elapsed < 60
    check(1, ok, f"op gradients rel err {worst_ops:.2e} (< 1e-5), pipeline "
                 f"{worst_pipe:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# Criterion 2: solver oracles
# ---------------------------------------------------------------------------


def test_criterion_2_solver_oracles():
    start = time.perf_counter()
    out = integrate(lambda z: -1.0 * z, np.array([1.0]), 0.0, [1.0],
                    SolverConfig(rtol=1e-3, atol=1e-4))
    decay_err = abs(out[0].data[0] - math.exp(-1.0))

    def osc(z):
        return T.concat([z[..., 1:2], -1.0 * z[..., 0:1]], axis=-1)

    out = integrate(osc, np.array([1.0, 0.0]), 0.0, [2 * math.pi],
                    SolverConfig(rtol=1e-6, atol=1e-8))
    final = out[0].data
    period_err = float(np.max(np.abs(final - [1.0, 0.0])))
    energy_err = abs(final[0] ** 2 + final[1] ** 2 - 1.0)

    errs = []
    for h in (0.2, 0.1, 0.05):
        o = integrate(lambda z: -1.0 * z, np.array([1.0]), 0.0, [1.0],
                      SolverConfig(method="rk4", initial_step=h))
        errs.append(abs(o[0].data[0] - math.exp(-1.0)))
    exponents = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    elapsed = time.perf_counter() - start
    ok = decay_err < 1e-5 and period_err < 1e-4 and energy_err < 1e-4 \
        and all(3.7 <= e <= 4.3 for e in exponents) and elapsed < 10
    check(2, ok, f"|z(1)-e^-1|={decay_err:.2e} (<1e-5 at rtol 1e-3/atol 1e-4), "
                 f"period err {period_err:.2e}, energy drift {energy_err:.2e} "
                 f"(<1e-4), RK4 exponents {[round(e, 2) for e in exponents]} "
                 f"in [3.7, 4.3], {elapsed:.1f}s (<10s)")


# ---------------------------------------------------------------------------
# Criterion 3: loss and regularizer exactness
# ---------------------------------------------------------------------------


def test_criterion_3_loss_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 4))
        n_e = int(rng.integers(3, 7))
        pred = rng.normal(size=(b, n_e, 10))
        target = rng.normal(size=(b, n_e, 10))
        times = np.cumsum(rng.uniform(0.05, 0.3, size=n_e))
        fvals = [rng.normal(size=(b, 5)) for _ in range(n_e)]

        # straight-line references
        ref_le = np.mean([np.abs(pred[i] - target[i]).sum(axis=1).mean()
                          for i in range(b)])
        ref_rl = np.mean([
            sum(float(((fvals[j + 1][i] - fvals[j][i])
                       / (times[j + 1] - times[j])) @
                      ((fvals[j + 1][i] - fvals[j][i])
                       / (times[j + 1] - times[j])))
                for j in range(n_e - 1)) / (n_e - 1)
            for i in range(b)])
        vel = (pred[:, 1:, 0:3] - pred[:, :-1, 0:3]) / \
            np.diff(times)[None, :, None]
        acc = (vel[:, 1:] - vel[:, :-1]) / np.diff(times)[None, :-1, None]
        ref_rt = float((acc ** 2).sum(axis=-1).sum(axis=-1).mean() / n_e)

        le = loss_extrapolation(Tensor(pred), target).item()
        rl = reg_latent([Tensor(v) for v in fvals], times).item()
        rt = reg_traj(Tensor(pred[:, :, 0:3]), times).item()
        for ours, ref in ((le, ref_le), (rl, ref_rl), (rt, ref_rt)):
            worst = max(worst, abs(ours - ref) / max(1.0, abs(ref)))

        # EMA recurrence
        decay = float(rng.uniform(0, 0.99))
        prev = float(rng.uniform(0, 1))
        cur = float(rng.uniform(0, 1))
        assert update_ema(prev, cur, decay) == decay * prev + (1 - decay) * cur

    # constant-velocity trajectories have exactly zero acceleration penalty
    times = np.cumsum(np.full(6, 0.1))
    const_vel = np.stack([np.outer(times, v)
                          for v in ((1.0, 0, 0), (0.3, -1, 2))], axis=0)
    rt_zero = reg_traj(Tensor(const_vel), times).item()

    cfg = LossConfig(tau=0.5, loss_init=0.02, loss_end=0.0)
    endpoint_low = adaptive_scale(0.0, cfg)
    endpoint_high = adaptive_scale(1.0, cfg)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-12 and rt_zero < 1e-24 and endpoint_low == 1.0 \
        and endpoint_high == math.exp(-1 / 0.5) and elapsed < 10
    check(3, ok, f"reference match rel err {worst:.2e} (<1e-12 on 100 fixtures), "
                 f"constant-velocity penalty {rt_zero:.1e}, s_t endpoints "
                 f"{endpoint_low} and exp(-1/tau)={endpoint_high:.6f} exact, "
                 f"{elapsed:.1f}s (<10s)")


# ---------------------------------------------------------------------------
# Criterion 4: sampling arithmetic
# ---------------------------------------------------------------------------


def test_criterion_4_sampling_arithmetic():
    start = time.perf_counter()
    cfg = SamplerConfig(n_context=30, n_target=10, context_span=0.6)
    dc_err = abs(cfg.context_step - 0.6 / 29)
    ctx = context_times_for(0.0, cfg)
    tgt = target_times_for(0.0, cfg, t_max=1.0)
    expected_tgt = 0.6 + 0.04 * np.arange(1, 11)
    tgt_err = float(np.max(np.abs(tgt - expected_tgt)))
    ctx_err = max(abs(ctx[0] - 0.0), abs(ctx[-1] - 0.6))

    rng = np.random.default_rng(44)
    card_ok = True
    checked = 0
    while checked < 50:
        n_ctx = int(rng.integers(2, 12))
        t_max = float(rng.uniform(0.5, 2.0))
        span = float(rng.uniform(0.1, 0.7)) * t_max
        stride = float(rng.uniform(0.3, 1.5)) * span / max(n_ctx - 1, 1)
        c = SamplerConfig(n_context=n_ctx, n_target=int(rng.integers(1, 6)),
                          context_span=span, t0_stride=stride)
        try:
            starts = valid_start_times(c, 0.0, t_max)
        except ValueError:
            continue
        checked += 1
        expected = int(np.floor((t_max - span - c.min_span + 1e-12)
                                / stride)) + 1
        card_ok &= starts.size == expected
    elapsed = time.perf_counter() - start
    ok = dc_err < 1e-12 and tgt_err < 1e-12 and ctx_err < 1e-12 and card_ok \
        and elapsed < 5
    check(4, ok, f"step 0.6/29 err {dc_err:.1e}, target grid 0.64..1.00 err "
                 f"{tgt_err:.1e} (<1e-12), cardinality formula exact on 50 "
                 f"random configs, {elapsed:.1f}s (<5s)")


# ---------------------------------------------------------------------------
# Criterion 5: rasterizer
# ---------------------------------------------------------------------------


def test_criterion_5_rasterizer():
    start = time.perf_counter()
    from splatcast.rasterizer import Image as RImage
    from splatcast.scene import Camera

    weights_ok = True
    for seed in range(4):
        spec = build_preset("mixed", 20, seed=seed, image_size=40)
        states = analytic_states(spec, [0.2 + 0.1 * seed])[:, 0, :]
        _, w = render(states, spec.static_colors(), spec.static_opacities(),
                      spec.cameras[0], return_weight_sum=True)
        weights_ok &= bool(w.min() >= 0.0 and w.max() <= 1.0 + 1e-12)

    size = 33
    cam = Camera(np.eye(3), np.zeros(3), 60.0, 60.0,
                 (size - 1) / 2, (size - 1) / 2, size, size)
    q = np.array([1.0, 0, 0, 0])
    states = np.array([
        np.concatenate([[0, 0, 1.0], q, np.log([0.3, 0.3, 0.3])]),
        np.concatenate([[0, 0, 2.0], q, np.log([0.6, 0.6, 0.6])]),
    ])
    colors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    a1, a2 = 0.6, 0.7
    img = render(states, colors, np.array([a1, a2]), cam)
    hand = colors[0] * a1 + colors[1] * a2 * (1 - a1)
    two_splat_err = float(np.max(np.abs(img.rgb[16, 16].astype(np.float64)
                                        - hand)))

    spec = build_preset("mixed", 24, seed=5, image_size=40)
    st5 = analytic_states(spec, [0.4])[:, 0, :]
    base = render(st5, spec.static_colors(), spec.static_opacities(),
                  spec.cameras[0]).rgb
    perm_ok = True
    rng = np.random.default_rng(0)
    for _ in range(3):
        p = rng.permutation(24)
        other = render(st5[p], spec.static_colors()[p],
                       spec.static_opacities()[p], spec.cameras[0]).rgb
        perm_ok &= np.array_equal(base, other)

    ref = RImage(np.random.default_rng(1).uniform(
        0, 1, size=(24, 24, 3)).astype(np.float32))
    ssim_err = abs(ssim(ref, ref) - 1.0)
    elapsed = time.perf_counter() - start
    ok = weights_ok and two_splat_err < 1e-6 and perm_ok and ssim_err < 1e-9 \
        and elapsed < 30
    check(5, ok, f"blend-weight sums in [0,1], two-splat composite err "
                 f"{two_splat_err:.1e} (<1e-6), permutation bit-exact, "
                 f"SSIM(I,I)-1 = {ssim_err:.1e} (<1e-9), {elapsed:.1f}s (<30s)")


# ---------------------------------------------------------------------------
# Criteria 6 + 7: end-to-end extrapolation and the OOD failure reproduction
# ---------------------------------------------------------------------------


def test_criterion_6_end_to_end_extrapolation(e2e):
    rel = e2e.position_l1 / e2e.orbit_radius
    margin = e2e.forecast_psnr - e2e.freeze_psnr
    ok = rel < 0.05 and margin >= 3.0 and e2e.runtime_s <= 600
    check(6, ok, f"position L1 {e2e.position_l1:.4f} = {100 * rel:.2f}% of "
                 f"orbit radius {e2e.orbit_radius:.3f} (<5%), PSNR "
                 f"{e2e.forecast_psnr:.2f} dB vs freeze-last-frame "
                 f"{e2e.freeze_psnr:.2f} dB (margin {margin:.2f} >= 3 dB), "
                 f"runtime {e2e.runtime_s:.0f}s (<=600s)")


def test_criterion_7_ood_failure_reproduction(e2e):
    ood = interp_ood_trajectories(e2e.interp, e2e.eval_times)
    ood_l1 = float(np.abs(ood.params[:, :, 0:3]
                          - e2e.truth_eval[:, :, 0:3]).sum(axis=-1).mean())
    ratio = ood_l1 / e2e.position_l1
    ok = ratio >= 2.0
    check(7, ok, f"timestamp-conditioned model beyond its window: position L1 "
                 f"{ood_l1:.4f} = {ratio:.1f}x the latent-ODE forecast "
                 f"(>= 2x required)")


# ---------------------------------------------------------------------------
# Criterion 8: ablation harness (direction reported, not asserted)
# ---------------------------------------------------------------------------


def test_criterion_8_ablation_harness(e2e, tmp_path):
    model_ar = Forecaster(ForecasterConfig(**MODEL), seed=RUN_SEED)
    train_forecaster(e2e.dataset, model_ar, LossConfig(**LOSS),
                     TrainConfig(**TRAIN), SolverConfig(),
                     variant="autoregressive")
    sampler = SamplerConfig(**SAMPLER)
    traj_ar = autoregressive_trajectories(model_ar, e2e.interp, sampler,
                                          e2e.dataset.normalizer,
                                          e2e.eval_times)
    results = {
        "ode": trajectory_errors(e2e.pred, e2e.spec),
        "autoregressive": trajectory_errors(traj_ar, e2e.spec),
    }
    csv_path = tmp_path / "variant_comparison.csv"
    text = compare_variants_csv(results, csv_path)
    lines = text.strip().splitlines()
    direction = "<=" if results["ode"]["horizon_end_l1"] <= \
        results["autoregressive"]["horizon_end_l1"] else ">"
    ok = csv_path.exists() and len(lines) == 3 \
        and lines[0] == "variant,mean_position_l1,horizon_end_position_l1"
    check(8, ok, f"both variants trained under identical supervision; "
                 f"horizon-end L1 ode {results['ode']['horizon_end_l1']:.4f} "
                 f"{direction} autoregressive "
                 f"{results['autoregressive']['horizon_end_l1']:.4f} "
                 f"(direction reported, not asserted); comparison CSV emitted")


# ---------------------------------------------------------------------------
# Criterion 9: variational variant
# ---------------------------------------------------------------------------


def test_criterion_9_variational_variant():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    kl_min = min(kl_unit_gaussian(Tensor(rng.normal(size=(2, 6))),
                                  Tensor(rng.normal(size=(2, 6)))).item()
                 for _ in range(50))
    d = 6
    kl_zero = kl_unit_gaussian(Tensor(np.zeros((3, d))),
                               Tensor(np.zeros((3, d)))).item()
    kl_ones = kl_unit_gaussian(Tensor(np.ones((2, d))),
                               Tensor(np.zeros((2, d)))).item()

    cfg = ForecasterConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16,
                           d_latent=4, ode_hidden=8, ode_layers=2,
                           dec_hidden=8, dec_layers=2, n_context=4,
                           variational=True)
    model = Forecaster(cfg, seed=9)
    ctx = rng.uniform(-1, 1, size=(2, 4, 10))
    for name, p in model.parameters().items():
        if name.startswith("logvar_head"):
            p.data[:] = 0.0
    mu, logvar = model.encode_variational(ctx)
    logvar.data[:] = -80.0
    eps = rng.standard_normal(mu.shape)
    z_sampled = model.sample_latent(mu, logvar, eps)
    times = [0.6, 0.9]
    solver = SolverConfig()
    states_s = integrate(model.field, z_sampled, 0.5, times, solver)
    states_m = integrate(model.field, mu, 0.5, times, solver)
    sigma_limit_gap = max(
        float(np.max(np.abs(model.decode(a).data - model.decode(b).data)))
        for a, b in zip(states_s, states_m))

    # ELBO gradient via reparameterization vs finite differences
    target = rng.normal(size=(2, 3, 10))
    eps2 = rng.standard_normal((2, 4))
    w = rng.normal(size=(4, 10)) * 0.3
    mu0 = rng.normal(size=(2, 4))
    lv0 = rng.normal(size=(2, 4)) * 0.3
    lcfg = LossConfig(likelihood_sigma=0.1)

    def build(mu_v, lv_v):
        mu_p = Parameter(mu_v)
        lv_p = Parameter(lv_v)
        z = Forecaster.sample_latent(mu_p, lv_p, eps2)
        pred = T.stack([T.matmul(z, Tensor(w)) for _ in range(3)], axis=1)
        total, _, _ = loss_variational(pred, target, mu_p, lv_p, lcfg)
        return mu_p, lv_p, total

    with Tape():
        mu_p, lv_p, total = build(mu0, lv0)
        total.backward()
    worst = 0.0
    for which, param, base in (("mu", mu_p, mu0), ("logvar", lv_p, lv0)):
        def scalar(x, which=which):
            with Tape():
                _, _, out = build(x if which == "mu" else mu0,
                                  lv0 if which == "mu" else x)
            return float(out.data)

        fd = central_difference(scalar, base)
        gap = np.abs(fd - param.grad)
        mask = gap > 1e-8
        if np.any(mask):
            worst = max(worst, float(np.max(gap[mask] / np.maximum(
                np.abs(fd[mask]), np.abs(param.grad[mask])))))
    elapsed = time.perf_counter() - start
    ok = kl_min >= -1e-12 and abs(kl_zero) < 1e-15 \
        and abs(kl_ones - 0.5 * d) < 1e-12 and sigma_limit_gap < 1e-6 \
        and worst < 1e-4 and elapsed < 60
    check(9, ok, f"KL >= 0 (min {kl_min:.1e}), KL(N(0,I)||N(0,I))={kl_zero:.1e}, "
                 f"KL(N(1,I)||N(0,I))={kl_ones} = d/2 exactly, sigma->0 limit "
                 f"gap {sigma_limit_gap:.1e} (<1e-6), ELBO gradient rel err "
                 f"{worst:.2e} (<1e-4), {elapsed:.1f}s (<60s)")


# ---------------------------------------------------------------------------
# Criterion 10: determinism
# ---------------------------------------------------------------------------


def test_criterion_10_determinism(e2e):
    second = _run_pipeline()
    same_train = second.train_log_csv == e2e.train_log_csv
    same_metrics = second.metrics_csv == e2e.metrics_csv
    ok = same_train and same_metrics
    check(10, ok, f"repeat with seed {RUN_SEED}: training log CSV bit-exact "
                  f"({same_train}), evaluation metrics CSV bit-exact "
                  f"({same_metrics})")
