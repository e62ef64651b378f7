"""Minimal neural-net building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Containers of Parameters; nesting via attributes and lists."""

    def parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.parameters(f"{key}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{key}.{i}"] = item
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:4]}, "
                           f"unexpected {sorted(extra)[:4]}")
        for k, p in params.items():
            arr = np.asarray(arrays[k])
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype)
            p.zero_grad()

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float64, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = xavier_uniform(rng, d_in, d_out, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    """Last-axis normalization with a learned elementwise affine."""

    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, eps=self.eps) * self.gain + self.bias


_ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


class MLP(Module):
    """Stack of Linear layers with one activation on all hidden outputs."""

    def __init__(self, dims: list[int], activation: str,
                 rng: np.random.Generator, dtype=np.float64):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype)
                       for i in range(len(dims) - 1)]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)
