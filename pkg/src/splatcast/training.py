"""Training objective and loop for the trajectory forecaster.

The objective is an L1 extrapolation loss over the target window plus two
smoothness regularizers: a finite-difference penalty on the latent vector
field along the integrated trajectory, and an acceleration penalty on decoded
positions.  Both are scaled by an adaptive weight driven by an exponential
moving average of the prediction loss, so regularization strengthens only as
prediction converges.  The scale is a schedule, not a differentiated quantity.

The variational variant swaps the L1 term for an ELBO (Gaussian likelihood
plus KL to a unit prior) and composes it with the same regularizers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .forecaster import Forecaster, LatentTrajectory, save_forecaster
from .interp import TrainingDivergedError
from .ode import SolverConfig, integrate
from .sampling import SampleDataset
from .tensor import Parameter, Tape, Tensor


@dataclass
class LossConfig:
    lambda_latent: float = 1e-5
    lambda_traj: float = 1e-1
    tau: float = 0.5
    loss_init: float = 0.02
    loss_end: float = 0.0
    ema_decay: float = 0.9
    likelihood_sigma: float = 0.05
    adaptive: bool = True    # False reproduces the fixed-weight ablation

    def __post_init__(self):
        if self.lambda_latent < 0 or self.lambda_traj < 0:
            raise ValueError("regularizer weights must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not self.loss_init > self.loss_end:
            raise ValueError("loss_init must exceed loss_end")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        if self.likelihood_sigma <= 0:
            raise ValueError("likelihood_sigma must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lambda_latent", "lambda_traj", "tau", "loss_init", "loss_end",
            "ema_decay", "likelihood_sigma", "adaptive")}


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 40
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_max_norm: float | None = None
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "batch_size", "epochs", "lr_max", "lr_min", "beta1", "beta2",
            "eps", "seed", "grad_max_norm")}


# ---- losses and regularizers ------------------------------------------------


def loss_extrapolation(pred: Tensor, target) -> Tensor:
    """Mean over steps of the channel-summed L1 error, averaged over the batch."""
    target = target if isinstance(target, Tensor) else Tensor(
        np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise T.ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = T.absolute(pred - target)            # (B, N_e, C)
    per_step = T.tsum(diff, axis=-1)            # L1 over channels
    per_sample = T.tmean(per_step, axis=-1)     # 1/N_e sum over steps
    return T.tmean(per_sample)


def reg_latent(field_values: list[Tensor], times: np.ndarray) -> Tensor:
    """Mean squared finite difference of the vector field along the latent path."""
    n = len(field_values)
    if n < 2:
        return Tensor(0.0)
    times = np.asarray(times, dtype=np.float64)
    terms = []
    for j in range(n - 1):
        dt = times[j + 1] - times[j]
        delta = (field_values[j + 1] - field_values[j]) * (1.0 / dt)
        terms.append(T.tsum(delta * delta, axis=-1))   # (B,)
    total = terms[0]
    for t_ in terms[1:]:
        total = total + t_
    return T.tmean(total * (1.0 / (n - 1)))


def reg_traj(positions: Tensor, times: np.ndarray) -> Tensor:
    """Acceleration penalty on positions (B, N_e, 3).

    Velocities are forward differences; the sum over the N_e - 2 acceleration
    terms is normalized by N_e, exactly as the objective is defined.
    """
    n = positions.shape[1]
    if n < 3:
        return Tensor(0.0)
    times = np.asarray(times, dtype=np.float64)
    dts = np.diff(times)
    vels = [(positions[:, j + 1, :] - positions[:, j, :]) * (1.0 / dts[j])
            for j in range(n - 1)]
    total = None
    for j in range(n - 2):
        acc = (vels[j + 1] - vels[j]) * (1.0 / dts[j])
        term = T.tsum(acc * acc, axis=-1)  # (B,)
        total = term if total is None else total + term
    return T.tmean(total * (1.0 / n))


def adaptive_scale(ema: float, cfg: LossConfig) -> float:
    """Regularizer weight in [exp(-1/tau), 1], shrinking as the EMA loss grows."""
    frac = (ema - cfg.loss_end) / (cfg.loss_init - cfg.loss_end)
    return math.exp(-min(max(frac, 0.0), 1.0) / cfg.tau)


def update_ema(prev: float | None, current: float, decay: float) -> float:
    """EMA of the prediction loss; the first observation seeds it."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must be in [0, 1)")
    if prev is None:
        return current
    return decay * prev + (1.0 - decay) * current


def kl_unit_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over dims, batch-averaged."""
    term = mu * mu + T.exp(logvar) - logvar - 1.0
    return T.tmean(T.tsum(term, axis=-1)) * 0.5


def loss_variational(pred: Tensor, target, mu: Tensor, logvar: Tensor,
                     cfg: LossConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Negative ELBO pieces: (total, nll, kl), batch-averaged.

    The likelihood is an isotropic Gaussian around the prediction, so the NLL
    is the squared error over steps and channels scaled by 1/(2 sigma^2) plus
    the log-normalization constant.
    """
    target = target if isinstance(target, Tensor) else Tensor(
        np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise T.ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    sq = T.tsum(T.tsum(diff * diff, axis=-1), axis=-1)   # (B,)
    n_terms = pred.shape[1] * pred.shape[2]
    const = 0.5 * n_terms * math.log(2.0 * math.pi * cfg.likelihood_sigma ** 2)
    nll = T.tmean(sq) * (1.0 / (2.0 * cfg.likelihood_sigma ** 2)) + const
    kl = kl_unit_gaussian(mu, logvar)
    return nll + kl, nll, kl


# ---- optimizer and schedule ----------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing hitting lr_max at step 0 and lr_min at the final step."""
    if total_steps <= 1:
        return lr_max if step == 0 else lr_min
    progress = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


class Adam:
    def __init__(self, params: dict[str, Parameter], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float, max_norm: float | None = None):
        if max_norm is not None:
            total = math.sqrt(sum(float(np.sum(p.grad ** 2))
                                  for p in self.params.values()))
            if total > max_norm:
                scale = max_norm / total
                for p in self.params.values():
                    p.grad = p.grad * scale
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[k] / b1c) / (
                np.sqrt(self.v[k] / b2c) + self.eps)
            p.zero_grad()


# ---- training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    log_rows: list[dict]
    final_loss_e: float
    checkpoints: list[str] = field(default_factory=list)

    def csv_text(self) -> str:
        lines = ["step,loss_e,reg_latent,reg_traj,s_t,lr"]
        for r in self.log_rows:
            lines.append(
                f"{r['step']},{r['loss_e']!r},{r['reg_latent']!r},"
                f"{r['reg_traj']!r},{r['s_t']!r},{r['lr']!r}"
            )
        return "\n".join(lines) + "\n"


def _batch_groups(pairs, indices):
    """Split batch indices into runs sharing a start time (one ODE grid each)."""
    groups: dict[float, list[int]] = {}
    for i in indices:
        groups.setdefault(pairs[i].t0, []).append(i)
    return [groups[t0] for t0 in sorted(groups)]


def _epoch_batches(pairs, rng: np.random.Generator, batch_size: int):
    """Shuffled mini-batches drawn within start-time groups.

    Samples sharing a t0 share a target grid, so drawing each batch inside one
    group lets the whole batch ride a single shared-step ODE solve.  Group
    order and within-group membership are reshuffled every epoch.
    """
    by_t0: dict[float, list[int]] = {}
    for i, p in enumerate(pairs):
        by_t0.setdefault(p.t0, []).append(i)
    keys = sorted(by_t0)
    batches = []
    for gi in rng.permutation(len(keys)):
        members = np.array(by_t0[keys[gi]])
        members = members[rng.permutation(members.size)]
        for s in range(0, members.size, batch_size):
            batches.append(members[s:s + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train_forecaster(dataset: SampleDataset, model: Forecaster,
                     loss_cfg: LossConfig | None = None,
                     train_cfg: TrainConfig | None = None,
                     solver: SolverConfig | None = None,
                     variant: str = "ode") -> TrainResult:
    """Optimize the forecaster on sampled pairs; returns the metrics log.

    ``variant`` selects the latent-ODE model ("ode") or the discrete
    autoregressive ablation ("autoregressive", supervised on the same pairs
    with the plain prediction loss).
    """
    if variant not in ("ode", "autoregressive"):
        raise ValueError(f"unknown variant {variant!r}")
    if not dataset.pairs:
        raise ValueError("dataset is empty")
    loss_cfg = loss_cfg or LossConfig()
    train_cfg = train_cfg or TrainConfig()
    solver = solver or SolverConfig()
    rng = np.random.default_rng(train_cfg.seed)
    dtype = model.cfg.np_dtype

    pairs = dataset.pairs
    norm = dataset.normalizer
    contexts = np.stack([norm.normalize(p.context) for p in pairs]).astype(dtype)
    targets = np.stack([norm.normalize(p.target) for p in pairs]).astype(dtype)

    params = model.parameters()
    opt = Adam(params, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    group_sizes = {}
    for p in pairs:
        group_sizes[p.t0] = group_sizes.get(p.t0, 0) + 1
    steps_per_epoch = sum(int(np.ceil(g / train_cfg.batch_size))
                          for g in group_sizes.values())
    total_steps = train_cfg.epochs * steps_per_epoch

    ckpt_dir = Path(train_cfg.checkpoint_dir) if train_cfg.checkpoint_dir else None
    result = TrainResult(log_rows=[], final_loss_e=float("nan"))
    ema: float | None = None
    step = 0
    last_ckpt: str | None = None
    for epoch in range(train_cfg.epochs):
        for batch in _epoch_batches(pairs, rng, train_cfg.batch_size):
            lr = cosine_lr(step, total_steps, train_cfg.lr_max, train_cfg.lr_min)
            groups = _batch_groups(pairs, batch.tolist())
            bsz = float(batch.size)
            with Tape():
                loss_e_t = None
                rl_t = None
                rt_t = None
                objective = None
                for idx in groups:
                    w = len(idx) / bsz
                    ctx = Tensor(contexts[idx])
                    tgt = targets[idx]
                    p0 = pairs[idx[0]]
                    if variant == "autoregressive":
                        preds = model.forecast_autoregressive(
                            ctx, dataset.cfg.n_target)
                        latent = None
                        main_g = le_g = loss_extrapolation(preds, tgt)
                    else:
                        eps = (rng.standard_normal((len(idx), model.cfg.d_latent))
                               if model.cfg.variational else None)
                        t_end = p0.t0 + dataset.cfg.context_span
                        if model.cfg.variational:
                            mu, logvar = model.encode_variational(ctx)
                            z0 = model.sample_latent(mu, logvar, eps)
                            states = integrate(model.field, z0, t_end,
                                               p0.target_times, solver)
                            preds = T.stack([model.decode(z) for z in states],
                                            axis=1)
                            latent = LatentTrajectory(z0, states, p0.target_times)
                            le_g = loss_extrapolation(preds, tgt)
                            main_g, _, _ = loss_variational(
                                preds, tgt, mu, logvar, loss_cfg)
                        else:
                            preds, latent = model.forecast(
                                ctx, t_end, p0.target_times, solver)
                            main_g = le_g = loss_extrapolation(preds, tgt)
                    loss_e_t = _wadd(loss_e_t, le_g, w)
                    objective = _wadd(objective, main_g, w)
                    if latent is not None and (loss_cfg.lambda_latent > 0
                                               or loss_cfg.lambda_traj > 0):
                        fvals = [model.field(z) for z in latent.states]
                        rl_t = _wadd(rl_t, reg_latent(fvals, latent.times), w)
                        rt_t = _wadd(rt_t, reg_traj(preds[:, :, 0:3],
                                                    latent.times), w)
                loss_e_val = float(loss_e_t.item())
                ema = update_ema(ema, loss_e_val, loss_cfg.ema_decay)
                s_t = adaptive_scale(ema, loss_cfg) if loss_cfg.adaptive else 1.0
                rl_val = float(rl_t.item()) if rl_t is not None else 0.0
                rt_val = float(rt_t.item()) if rt_t is not None else 0.0
                if rl_t is not None:
                    objective = objective + (s_t * loss_cfg.lambda_latent) * rl_t \
                        + (s_t * loss_cfg.lambda_traj) * rt_t
                total_val = float(objective.item())
                if not np.isfinite(total_val):
                    if last_ckpt is None and ckpt_dir is not None:
                        last_ckpt = str(ckpt_dir / "diverged_init.ckpt")
                        save_forecaster(model, last_ckpt)
                    raise TrainingDivergedError(
                        f"non-finite loss at step {step}", last_ckpt)
                objective.backward()
            opt.step(lr, train_cfg.grad_max_norm)
            result.log_rows.append({
                "step": step, "loss_e": loss_e_val, "reg_latent": rl_val,
                "reg_traj": rt_val, "s_t": s_t, "lr": lr,
            })
            step += 1
        if ckpt_dir is not None:
            last_ckpt = str(ckpt_dir / f"epoch_{epoch:03d}.ckpt")
            save_forecaster(model, last_ckpt, {
                "normalizer": norm.to_dict(),
                "sampler": dataset.cfg.to_dict(),
                "t_max": dataset.t_max,
                "variant": variant,
                "epoch": epoch,
            })
            result.checkpoints.append(last_ckpt)
    result.final_loss_e = result.log_rows[-1]["loss_e"] if result.log_rows else float("nan")
    if train_cfg.log_path:
        Path(train_cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(train_cfg.log_path).write_text(result.csv_text())
    return result


def _wadd(acc, value, w):
    term = value * w
    return term if acc is None else acc + term
