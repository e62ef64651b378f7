"""Shared test utilities: finite-difference oracles and tiny fixtures."""

from __future__ import annotations

import numpy as np

from splatcast.tensor import Parameter, Tape


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def grad_of(build_loss, values: list[np.ndarray]) -> list[np.ndarray]:
    """Reverse-mode gradients of build_loss(params) w.r.t. each value."""
    params = [Parameter(v) for v in values]
    with Tape():
        loss = build_loss(params)
        loss.backward()
    return [p.grad.copy() for p in params]


def fd_check(build_loss, values: list[np.ndarray], h: float = 1e-6) -> float:
    """Max relative error between reverse-mode and finite-difference gradients."""
    grads = grad_of(build_loss, values)
    worst = 0.0
    for target in range(len(values)):
        def scalar(x, target=target):
            vals = [v.copy() for v in values]
            vals[target] = x
            params = [Parameter(v) for v in vals]
            with Tape():
                loss = build_loss(params)
            return float(loss.data)

        fd = central_difference(scalar, values[target], h)
        worst = max(worst, rel_error(grads[target], fd))
    return worst
