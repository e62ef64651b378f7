"""Dynamic trajectory sampling: context/target pairs over all valid start times.

For each Gaussian and each start time t0 on a stride grid, the context covers
[t0, t0 + context_span] at a fixed step, and the target begins immediately
after the context window and spans the remaining horizon up to the end of the
observed window.  Context and target lengths stay fixed while the target span
shrinks as t0 advances, mixing short- and long-horizon prediction tasks in one
dataset.  At inference the final context segment ends exactly at the window's
last timestamp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_GRID_EPS = 1e-12


@dataclass
class SamplerConfig:
    n_context: int = 30
    n_target: int = 10
    context_span: float = 0.6
    t0_stride: float | None = None        # defaults to the context step
    min_target_span: float | None = None  # defaults to the context step

    def __post_init__(self):
        if self.n_context < 2:
            raise ValueError(f"n_context must be >= 2, got {self.n_context}")
        if self.n_target < 1:
            raise ValueError(f"n_target must be >= 1, got {self.n_target}")
        if self.context_span <= 0:
            raise ValueError(f"context_span must be positive, got {self.context_span}")
        if self.t0_stride is not None and self.t0_stride <= 0:
            raise ValueError("t0_stride must be positive")

    @property
    def context_step(self) -> float:
        return self.context_span / (self.n_context - 1)

    @property
    def stride(self) -> float:
        return self.t0_stride if self.t0_stride is not None else self.context_step

    @property
    def min_span(self) -> float:
        return (self.min_target_span if self.min_target_span is not None
                else self.context_step)

    def to_dict(self) -> dict:
        return {"n_context": self.n_context, "n_target": self.n_target,
                "context_span": self.context_span, "t0_stride": self.t0_stride,
                "min_target_span": self.min_target_span}


@dataclass
class SamplePair:
    """One training instance: a context prefix and its target suffix."""

    gaussian_id: int
    t0: float
    context: np.ndarray        # (n_context, 10)
    context_times: np.ndarray  # (n_context,)
    target: np.ndarray         # (n_target, 10)
    target_times: np.ndarray   # (n_target,)


@dataclass
class PositionNormalizer:
    """Center positions on the scene centroid and scale coordinates to unit RMS."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @staticmethod
    def fit(positions: np.ndarray) -> "PositionNormalizer":
        pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        center = pts.mean(axis=0)
        scale = float(np.sqrt(np.mean((pts - center) ** 2)))
        return PositionNormalizer(center, scale if scale > 0 else 1.0)

    @staticmethod
    def identity() -> "PositionNormalizer":
        return PositionNormalizer(np.zeros(3), 1.0)

    def normalize(self, params: np.ndarray) -> np.ndarray:
        out = np.array(params, dtype=np.float64, copy=True)
        out[..., 0:3] = (out[..., 0:3] - self.center) / self.scale
        return out

    def denormalize(self, params: np.ndarray) -> np.ndarray:
        out = np.array(params, dtype=np.float64, copy=True)
        out[..., 0:3] = out[..., 0:3] * self.scale + self.center
        return out

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale}

    @staticmethod
    def from_dict(d: dict) -> "PositionNormalizer":
        return PositionNormalizer(np.asarray(d["center"]), d["scale"])


@dataclass
class SampleDataset:
    pairs: list[SamplePair]
    cfg: SamplerConfig
    normalizer: PositionNormalizer
    t_min: float
    t_max: float

    def __len__(self):
        return len(self.pairs)


def context_times_for(t0: float, cfg: SamplerConfig) -> np.ndarray:
    return t0 + np.arange(cfg.n_context) * cfg.context_step


def target_times_for(t0: float, cfg: SamplerConfig, t_max: float) -> np.ndarray:
    t_end = t0 + cfg.context_span
    target_step = (t_max - t_end) / cfg.n_target
    return t_end + np.arange(1, cfg.n_target + 1) * target_step


def valid_start_times(cfg: SamplerConfig, t_min: float, t_max: float) -> np.ndarray:
    """Start-time grid: t_min + m*stride while the remaining horizon suffices."""
    span = t_max - t_min
    if cfg.context_span >= span:
        raise ValueError(
            f"context_span {cfg.context_span} must be smaller than the "
            f"window span {span}"
        )
    limit = t_max - cfg.context_span - cfg.min_span
    count = int(np.floor((limit - t_min + _GRID_EPS) / cfg.stride)) + 1
    if count < 1:
        raise ValueError(
            f"no valid start times: window span {span} cannot fit a context of "
            f"{cfg.context_span} plus a minimum target span of {cfg.min_span}"
        )
    return t_min + np.arange(count) * cfg.stride


def build_dataset(source, cfg: SamplerConfig) -> SampleDataset:
    """Union of (context, target) pairs over all Gaussians and valid start times.

    ``source`` is any trajectory provider with t_min/t_max/num_gaussians and
    states_at(times) -> (M, T, 10): a frozen interpolation model, a stored
    trajectory set, or the analytic oracle in bypass mode.
    """
    t_min, t_max = float(source.t_min), float(source.t_max)
    starts = valid_start_times(cfg, t_min, t_max)
    m = source.num_gaussians
    pairs: list[SamplePair] = []
    all_positions = []
    for t0 in starts:
        ctx_t = context_times_for(float(t0), cfg)
        tgt_t = target_times_for(float(t0), cfg, t_max)
        ctx = np.asarray(source.states_at(ctx_t))
        tgt = np.asarray(source.states_at(tgt_t))
        all_positions.append(ctx[..., 0:3].reshape(-1, 3))
        for k in range(m):
            pairs.append(SamplePair(k, float(t0), ctx[k], ctx_t.copy(),
                                    tgt[k], tgt_t.copy()))
    normalizer = PositionNormalizer.fit(np.concatenate(all_positions, axis=0))
    return SampleDataset(pairs, cfg, normalizer, t_min, t_max)


def final_context(source, cfg: SamplerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inference-time context ending exactly at the observed window's end.

    Returns (contexts (M, n_context, 10), times (n_context,)); all Gaussians
    share the timestamp grid.
    """
    t_max = float(source.t_max)
    step = cfg.context_step
    times = t_max - (cfg.n_context - 1 - np.arange(cfg.n_context)) * step
    if times[0] < float(source.t_min) - _GRID_EPS:
        raise ValueError(
            f"context_span {cfg.context_span} does not fit in the window "
            f"[{source.t_min}, {t_max}]"
        )
    times[-1] = t_max  # exact endpoint
    return np.asarray(source.states_at(times)), times


# ---- materialization ------------------------------------------------------------


def materialize_dataset(dataset: SampleDataset, out_dir):
    """Write sample groups as trajectory files plus a JSON index sidecar.

    Samples sharing a start time share a timestamp grid, so each t0 group
    becomes one trajectory file; the index maps sample ordinal -> (gaussian,
    t0, file, row).
    """
    from .scene import TrajectorySet

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[float, list[SamplePair]] = {}
    for p in dataset.pairs:
        groups.setdefault(p.t0, []).append(p)
    index = []
    ordinal = 0
    for gi, (t0, members) in enumerate(sorted(groups.items())):
        times = np.concatenate([members[0].context_times, members[0].target_times])
        params = np.stack([np.concatenate([p.context, p.target], axis=0)
                           for p in members])
        fname = f"group_{gi:04d}.ogtj"
        TrajectorySet(times, params).save(out_dir / fname)
        for row, p in enumerate(members):
            index.append({"sample": ordinal, "gaussian_id": p.gaussian_id,
                          "t0": p.t0, "file": fname, "row": row})
            ordinal += 1
    sidecar = {
        "config": dataset.cfg.to_dict(),
        "normalizer": dataset.normalizer.to_dict(),
        "t_min": dataset.t_min,
        "t_max": dataset.t_max,
        "n_context": dataset.cfg.n_context,
        "samples": index,
    }
    (out_dir / "index.json").write_text(json.dumps(sidecar, indent=2))
