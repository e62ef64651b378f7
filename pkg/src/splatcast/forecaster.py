"""Sequence-to-sequence forecaster for Gaussian parameter trajectories.

A Transformer encoder (pre-layer-norm, sinusoidal positional encodings)
compresses an observed context of 10-channel rows into one latent vector.
That vector seeds an autonomous latent ODE dz/dt = field(z) -- deliberately
without any explicit time input, which is what removes timestamp conditioning
-- integrated forward in real scene time and decoded back to parameter rows at
the requested timestamps.  Dense solver output makes predictions continuous in
time, so querying between target steps is legal and consistent.

Two variants share the stack: a variational head that parameterizes a diagonal
Gaussian posterior over the initial latent (reparameterized sampling during
training, its mean in eval mode), and a pure autoregressive mode that skips
the ODE and feeds each discrete prediction back into a sliding context window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import MLP, LayerNorm, Linear, Module
from .ode import SolverConfig, integrate
from .tensor import Tensor


@dataclass
class ForecasterConfig:
    param_dim: int = 10
    d_model: int = 128
    n_heads: int = 8
    n_layers: int = 5
    d_ff: int | None = None      # defaults to 4 * d_model
    d_latent: int = 64
    ode_hidden: int = 64
    ode_layers: int = 4
    dec_hidden: int = 128
    dec_layers: int = 5
    n_context: int = 30
    variational: bool = False
    pooling: str = "mean"        # "mean" or "cls"
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.pooling not in ("mean", "cls"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "param_dim", "d_model", "n_heads", "n_layers", "d_ff", "d_latent",
            "ode_hidden", "ode_layers", "dec_hidden", "dec_layers", "n_context",
            "variational", "pooling", "dtype")}


def sinusoidal_table(n_positions: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Classic sin/cos positional encodings, shape (n_positions, d_model)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


class SelfAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng, dtype):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh, kh, vh = q[..., lo:hi], k[..., lo:hi], v[..., lo:hi]
            scores = T.matmul(qh, T.transpose_last(kh)) * scale
            heads.append(T.matmul(T.softmax(scores), vh))
        return self.wo(T.concat(heads, axis=-1))


class EncoderLayer(Module):
    """Pre-layer-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng, dtype):
        self.ln1 = LayerNorm(d_model, dtype)
        self.attn = SelfAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(d_model, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(T.relu(self.ff1(self.ln2(x))))


@dataclass
class LatentTrajectory:
    """Initial latent, integrated states at the output times, and those times."""

    z0: Tensor
    states: list[Tensor]
    times: np.ndarray


class Forecaster(Module):
    def __init__(self, cfg: ForecasterConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        self.cfg = cfg
        self.embed = Linear(cfg.param_dim, cfg.d_model, rng, dtype)
        # one extra slot holds the CLS position when that pooling is selected
        self.pos_table = sinusoidal_table(cfg.n_context + 1, cfg.d_model, dtype)
        if cfg.pooling == "cls":
            self.cls_token = T.Parameter(
                rng.normal(0, 0.02, size=(1, cfg.d_model)).astype(dtype))
        self.enc_layers = [
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_dim, rng, dtype)
            for _ in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(cfg.d_model, dtype)
        self.latent_proj = Linear(cfg.d_model, cfg.d_latent, rng, dtype)
        self.mu_head = Linear(cfg.d_model, cfg.d_latent, rng, dtype)
        self.logvar_head = Linear(cfg.d_model, cfg.d_latent, rng, dtype)
        self.field_net = MLP(
            [cfg.d_latent] + [cfg.ode_hidden] * (cfg.ode_layers - 1) + [cfg.d_latent],
            "tanh", rng, dtype)
        self.decoder = MLP(
            [cfg.d_latent] + [cfg.dec_hidden] * (cfg.dec_layers - 1) + [cfg.param_dim],
            "relu", rng, dtype)
        self.decoder.layers[-1].bias.data[:] = 0.0

    # ---- encoder ---------------------------------------------------------

    def _encode_pooled(self, context: Tensor) -> Tensor:
        """Transformer stack to a single d_model vector per batch element."""
        if context.ndim == 2:
            context = T.reshape(context, (1,) + context.shape)
        b, n, _ = context.shape
        if n > self.cfg.n_context:
            raise T.ShapeError(
                f"context length {n} exceeds configured n_context "
                f"{self.cfg.n_context}"
            )
        x = self.embed(context)
        if self.cfg.pooling == "cls":
            cls = T.stack([self.cls_token] * b, axis=0)  # (b, 1, d)
            x = T.concat([cls, x], axis=1)
            x = x + Tensor(self.pos_table[: n + 1].astype(x.dtype))
        else:
            x = x + Tensor(self.pos_table[1: n + 1].astype(x.dtype))
        for layer in self.enc_layers:
            x = layer(x)
        x = self.final_ln(x)
        if self.cfg.pooling == "cls":
            return x[:, 0, :]
        return T.tmean(x, axis=1)

    def encode(self, context) -> Tensor:
        """Deterministic initial latent, shape (B, d_latent)."""
        return self.latent_proj(self._encode_pooled(_as_tensor(context, self.cfg)))

    def encode_variational(self, context) -> tuple[Tensor, Tensor]:
        """Posterior mean and log-variance of the initial latent."""
        pooled = self._encode_pooled(_as_tensor(context, self.cfg))
        return self.mu_head(pooled), self.logvar_head(pooled)

    @staticmethod
    def sample_latent(mu: Tensor, logvar: Tensor,
                      eps: np.ndarray | None = None) -> Tensor:
        """Reparameterized draw z = mu + sigma * eps; eps=None means eval (z = mu)."""
        if eps is None:
            return mu
        sigma = T.exp(0.5 * logvar)
        return mu + sigma * Tensor(np.asarray(eps, dtype=mu.dtype))

    # ---- latent dynamics and decoding -------------------------------------

    def field(self, z: Tensor) -> Tensor:
        return self.field_net(z)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def forecast(self, context, t0: float, target_times,
                 solver: SolverConfig | None = None,
                 eps: np.ndarray | None = None,
                 ) -> tuple[Tensor, LatentTrajectory]:
        """Predict parameter rows at target_times (all >= t0, the context end).

        Returns (predictions (B, n_times, param_dim), latent trajectory).
        """
        times = np.asarray(target_times, dtype=np.float64).reshape(-1)
        if np.any(times < t0 - 1e-12):
            raise ValueError(f"target times must not precede context end t0={t0}")
        if self.cfg.variational:
            mu, logvar = self.encode_variational(context)
            z0 = self.sample_latent(mu, logvar, eps)
        else:
            z0 = self.encode(context)
        states = integrate(self.field, z0, float(t0), times,
                           solver or SolverConfig())
        preds = T.stack([self.decode(z) for z in states], axis=1)
        return preds, LatentTrajectory(z0, states, times)

    def forecast_autoregressive(self, context, n_steps: int) -> Tensor:
        """No-ODE ablation: discrete next-step rollout with a sliding window.

        Each decoded row is appended to the context (window length fixed), so
        predictions exist only on the discrete step grid.
        """
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        window = _as_tensor(context, self.cfg)
        if window.ndim == 2:
            window = T.reshape(window, (1,) + window.shape)
        outputs = []
        for _ in range(n_steps):
            z = self.latent_proj(self._encode_pooled(window))
            out = self.decode(z)  # (B, param_dim)
            outputs.append(out)
            row = T.reshape(out, (out.shape[0], 1, out.shape[1]))
            window = T.concat([window[:, 1:, :], row], axis=1)
        return T.stack(outputs, axis=1)


def _as_tensor(context, cfg: ForecasterConfig) -> Tensor:
    if isinstance(context, Tensor):
        return context
    return Tensor(np.asarray(context, dtype=cfg.np_dtype))


# ---- checkpoint I/O ------------------------------------------------------------


def save_forecaster(model: Forecaster, path, extra_meta: dict | None = None):
    meta = {"kind": "forecaster", "config": model.cfg.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, model.state_arrays(), meta)


def load_forecaster(path) -> tuple[Forecaster, dict]:
    arrays, meta = load_checkpoint(path)
    if not meta or meta.get("kind") != "forecaster":
        raise ValueError(f"{path} is not a forecaster checkpoint")
    cfg = ForecasterConfig(**meta["config"])
    model = Forecaster(cfg, seed=0)
    model.load_state_arrays(arrays)
    return model, meta
