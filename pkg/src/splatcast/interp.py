"""Canonical-plus-offset interpolation of Gaussian trajectories.

A learnable canonical Gaussian set plus a time-conditioned deformation MLP
reproduce states anywhere inside the observed window.  At desk scale the model
is trained by direct L1 regression on parameter trajectories rather than on
rendered images (the forecasting stage consumes trajectories only, so the
decoupling is preserved); the photometric score remains available as an
evaluation metric.

After training, the model is frozen and acts as a pure, deterministic
trajectory generator.  Queries outside the observed window raise unless
explicitly flagged: extrapolating a time-conditioned model is the failure mode
this project exists to avoid, so it never happens silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MLP, Module
from .scene import TrajectorySet
from .tensor import Parameter, Tape, Tensor


class OutOfWindowError(ValueError):
    """Unflagged query outside the observed time window."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class InterpConfig:
    time_octaves: int = 6
    space_octaves: int = 4
    hidden: int = 128
    depth: int = 3

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("time_octaves", "space_octaves", "hidden", "depth")}


@dataclass
class InterpTrainConfig:
    epochs: int = 400
    times_per_batch: int = 16
    lr: float = 2e-3
    lr_min: float = 1e-4
    seed: int = 0
    target_l1: float = 1e-4
    dtype: str = "float64"


def _fourier_features(values: np.ndarray, octaves: int) -> np.ndarray:
    """Raw values plus sin/cos at octave frequencies 2^i * pi."""
    values = np.atleast_2d(values)
    feats = [values]
    for i in range(octaves):
        w = (2.0 ** i) * np.pi
        feats.append(np.sin(w * values))
        feats.append(np.cos(w * values))
    return np.concatenate(feats, axis=-1)


def _fourier_features_t(x: Tensor, octaves: int) -> Tensor:
    feats = [x]
    for i in range(octaves):
        w = (2.0 ** i) * np.pi
        feats.append(T.sin(w * x))
        feats.append(T.cos(w * x))
    return T.concat(feats, axis=-1)


class DeformationNet(Module):
    """MLP from encoded (t, canonical position) to 10-channel offsets."""

    def __init__(self, cfg: InterpConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        in_dim = (1 + 2 * cfg.time_octaves) + 3 * (1 + 2 * cfg.space_octaves)
        dims = [in_dim] + [cfg.hidden] * cfg.depth + [10]
        self.net = MLP(dims, "relu", rng, dtype)

    def __call__(self, encoded: Tensor) -> Tensor:
        return self.net(encoded)


class InterpModel:
    """Canonical Gaussians plus deformation net over a fixed time window."""

    def __init__(self, canonical: np.ndarray, deform: DeformationNet,
                 t_min: float, t_max: float, frozen: bool = False):
        canonical = np.asarray(canonical, dtype=np.float64)
        if canonical.ndim != 2 or canonical.shape[1] != 10:
            raise ValueError(f"canonical must be (M, 10), got {canonical.shape}")
        self.canonical = canonical
        self.deform = deform
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.frozen = bool(frozen)

    @property
    def num_gaussians(self) -> int:
        return self.canonical.shape[0]

    def _check_window(self, t: float, allow_extrapolation: bool):
        if allow_extrapolation:
            return
        if t < self.t_min - 1e-12 or t > self.t_max + 1e-12:
            raise OutOfWindowError(
                f"t={t} is outside the observed window "
                f"[{self.t_min}, {self.t_max}]; pass allow_extrapolation=True "
                f"only for out-of-distribution experiments"
            )

    def _encode_inputs(self, times: np.ndarray) -> np.ndarray:
        t_feats = _fourier_features(times.reshape(-1, 1),
                                    self.deform.cfg.time_octaves)
        mu_feats = _fourier_features(self.canonical[:, 0:3],
                                     self.deform.cfg.space_octaves)
        s, m = times.size, self.num_gaussians
        t_block = np.repeat(t_feats, m, axis=0)
        mu_block = np.tile(mu_feats, (s, 1))
        return np.concatenate([t_block, mu_block], axis=-1)

    def query(self, t: float, allow_extrapolation: bool = False) -> np.ndarray:
        """Frozen-model states (M, 10) at time t."""
        if not self.frozen:
            raise RuntimeError("query requires a frozen model; train first")
        self._check_window(float(t), allow_extrapolation)
        return self._predict(np.array([float(t)]))[:, 0, :]

    def states_at(self, times, allow_extrapolation: bool = False) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if not self.frozen:
            raise RuntimeError("states_at requires a frozen model; train first")
        for t in (times[0], times[-1]):
            self._check_window(float(t), allow_extrapolation)
        return self._predict(times)

    def _predict(self, times: np.ndarray) -> np.ndarray:
        inputs = Tensor(self._encode_inputs(times))
        offsets = self.deform(inputs).data
        m = self.num_gaussians
        out = offsets.reshape(times.size, m, 10) + self.canonical[None, :, :]
        return np.swapaxes(out, 0, 1)


def train_interp(truth: TrajectorySet, cfg: InterpConfig | None = None,
                 train_cfg: InterpTrainConfig | None = None) -> tuple[InterpModel, dict]:
    """Fit canonical Gaussians and the deformation net by L1 trajectory regression.

    Returns the frozen model and a small training report.  With zero epochs the
    initialized model is returned unfrozen.
    """
    from .training import Adam, cosine_lr

    cfg = cfg or InterpConfig()
    train_cfg = train_cfg or InterpTrainConfig()
    dtype = np.float64 if train_cfg.dtype == "float64" else np.float32
    rng = np.random.default_rng(train_cfg.seed)

    m, n_times = truth.num_gaussians, truth.timestamps.size
    deform = DeformationNet(cfg, rng, dtype)
    canon_mu = Parameter(truth.params[:, 0, 0:3].astype(dtype))
    canon_q = Parameter(truth.params[:, 0, 3:7].astype(dtype))
    canon_s = Parameter(truth.params[:, 0, 7:10].astype(dtype))

    def canonical_tensor() -> Tensor:
        return T.concat([canon_mu, canon_q, canon_s], axis=-1)

    model = InterpModel(np.concatenate(
        [canon_mu.data, canon_q.data, canon_s.data], axis=-1).astype(np.float64),
        deform, truth.t_min, truth.t_max, frozen=False)
    report = {"epochs_run": 0, "final_l1": float("inf")}
    if train_cfg.epochs == 0:
        return model, report

    params = dict(deform.parameters("deform."))
    params.update({"canonical.mu": canon_mu, "canonical.q": canon_q,
                   "canonical.s": canon_s})
    opt = Adam(params)

    t_feats_all = _fourier_features(truth.timestamps.reshape(-1, 1),
                                    cfg.time_octaves).astype(dtype)
    targets_all = np.swapaxes(truth.params, 0, 1).astype(dtype)  # (T, M, 10)

    batches_per_epoch = max(1, int(np.ceil(n_times / train_cfg.times_per_batch)))
    total_steps = train_cfg.epochs * batches_per_epoch
    step = 0
    last_l1 = float("inf")
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n_times)
        epoch_l1 = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * train_cfg.times_per_batch:(b + 1) * train_cfg.times_per_batch]
            if idx.size == 0:
                continue
            lr = cosine_lr(step, total_steps, train_cfg.lr, train_cfg.lr_min)
            with Tape():
                mu_enc = _fourier_features_t(canon_mu, cfg.space_octaves)
                mu_block = T.concat([mu_enc] * idx.size, axis=0)
                t_block = Tensor(np.repeat(t_feats_all[idx], m, axis=0))
                inputs = T.concat([t_block, mu_block], axis=-1)
                offsets = deform(inputs)
                canon_block = T.concat([canonical_tensor()] * idx.size, axis=0)
                pred = offsets + canon_block
                target = Tensor(targets_all[idx].reshape(idx.size * m, 10))
                loss = T.tmean(T.absolute(pred - target))
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise TrainingDivergedError(
                        f"non-finite interpolation loss at step {step}")
                loss.backward()
            opt.step(lr)
            epoch_l1 += loss_val * idx.size
            step += 1
        last_l1 = epoch_l1 / n_times
        report["epochs_run"] = epoch + 1
        if last_l1 < train_cfg.target_l1:
            break

    report["final_l1"] = last_l1
    model.canonical = np.concatenate(
        [canon_mu.data, canon_q.data, canon_s.data], axis=-1).astype(np.float64)
    model.frozen = True
    return model, report


# ---- checkpoint I/O -----------------------------------------------------------


def save_interp(model: InterpModel, path):
    arrays = {"canonical": model.canonical}
    arrays.update(model.deform.net.state_arrays())
    meta = {
        "kind": "interp",
        "t_min": model.t_min,
        "t_max": model.t_max,
        "config": model.deform.cfg.to_dict(),
        "frozen": model.frozen,
    }
    save_checkpoint(path, arrays, meta)


def load_interp(path) -> InterpModel:
    arrays, meta = load_checkpoint(path)
    if not meta or meta.get("kind") != "interp":
        raise ValueError(f"{path} is not an interpolation checkpoint")
    cfg = InterpConfig(**meta["config"])
    deform = DeformationNet(cfg, np.random.default_rng(0))
    canonical = arrays.pop("canonical")
    deform.net.load_state_arrays(arrays)
    return InterpModel(canonical, deform, meta["t_min"], meta["t_max"],
                       frozen=meta["frozen"])
