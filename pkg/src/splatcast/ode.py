"""Numerical integration of autonomous vector fields, differentiable end to end.

Two methods: fixed-step classical RK4 and the adaptive 7-stage Dormand-Prince
5(4) pair.  State math runs on :class:`~splatcast.tensor.Tensor`, so every
accepted step is recorded on the active tape and gradients flow through the
unrolled solve.  Step-size control reads detached values only: acceptance
decisions are non-differentiable control flow.

Batched states (B, d) share one adaptive step; the error norm is taken over
the whole batch.  Dense output between accepted steps uses the classical
fourth-order Dormand-Prince interpolant, so requested output times never
perturb the step sequence (only the final time bounds it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# difference between the 5th-order solution and the embedded 4th-order one
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# dense-output weights (classical DOPRI5 interpolant)
_D = (-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
      -10690763975 / 1880347072, 701980252875 / 199316789632,
      -1453857185 / 822651844, 69997945 / 29380423)


class SolverError(RuntimeError):
    pass


class NonFiniteFieldError(SolverError):
    def __init__(self, t: float):
        super().__init__(f"vector field returned non-finite values at t={t}")
        self.t = t


class MaxStepsExceededError(SolverError):
    def __init__(self, t: float, state: np.ndarray, max_steps: int):
        super().__init__(
            f"exceeded {max_steps} steps at t={t}; last state retained on .state"
        )
        self.t = t
        self.state = state


@dataclass
class SolverConfig:
    method: str = "dopri5"
    rtol: float = 1e-3
    atol: float = 1e-4
    initial_step: float | None = None
    max_steps: int = 10_000
    safety: float = 0.9
    min_factor: float = 0.1
    max_factor: float = 5.0

    def __post_init__(self):
        if self.method not in ("rk4", "dopri5"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("method", "rtol", "atol", "initial_step", "max_steps",
                 "safety", "min_factor", "max_factor")}


def _check_times(t0: float, ts: np.ndarray):
    if ts.size == 0:
        raise ValueError("need at least one output time")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("output times must be strictly increasing")
    if ts[0] < t0 - 1e-12:
        raise ValueError(f"first output time {ts[0]} precedes t0={t0}")


def _eval_field(f, z: Tensor, t: float) -> Tensor:
    k = f(z)
    if not np.all(np.isfinite(k.data)):
        raise NonFiniteFieldError(t)
    return k


def integrate(f, z0, t0: float, ts, cfg: SolverConfig | None = None) -> list[Tensor]:
    """Integrate dz/dt = f(z) from (t0, z0), returning the state at each of ts."""
    cfg = cfg or SolverConfig()
    if not isinstance(z0, Tensor):
        z0 = Tensor(z0)
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    _check_times(t0, ts)
    if cfg.method == "rk4":
        return _integrate_rk4(f, z0, t0, ts, cfg)
    return _integrate_dopri5(f, z0, t0, ts, cfg)


def _rk4_step(f, z: Tensor, t: float, h: float) -> Tensor:
    k1 = _eval_field(f, z, t)
    k2 = _eval_field(f, T.lincomb([1.0, h / 2], [z, k1]), t + h / 2)
    k3 = _eval_field(f, T.lincomb([1.0, h / 2], [z, k2]), t + h / 2)
    k4 = _eval_field(f, T.lincomb([1.0, h], [z, k3]), t + h)
    return T.lincomb([1.0, h / 6, h / 3, h / 3, h / 6], [z, k1, k2, k3, k4])


def _integrate_rk4(f, z0: Tensor, t0: float, ts: np.ndarray,
                   cfg: SolverConfig) -> list[Tensor]:
    h_target = cfg.initial_step or (ts[-1] - t0) / 100 or 1.0
    outputs = []
    z, t = z0, t0
    steps = 0
    for t_next in ts:
        span = t_next - t
        if span <= 0:
            outputs.append(z)
            continue
        n_sub = max(1, int(np.ceil(span / h_target - 1e-12)))
        h = span / n_sub
        for _ in range(n_sub):
            steps += 1
            if steps > cfg.max_steps:
                raise MaxStepsExceededError(t, z.data.copy(), cfg.max_steps)
            z = _rk4_step(f, z, t, h)
            t += h
        t = t_next  # land exactly on the requested time
        outputs.append(z)
    return outputs


def _error_norm(err: np.ndarray, z_old: np.ndarray, z_new: np.ndarray,
                cfg: SolverConfig) -> float:
    scale = cfg.atol + cfg.rtol * np.maximum(np.abs(z_old), np.abs(z_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _select_initial_step(f, z0: Tensor, t0: float, t_end: float,
                         cfg: SolverConfig, f0: Tensor) -> float:
    """Classic starting-step heuristic for a 5th-order method (two trial evals)."""
    z = z0.data
    scale = cfg.atol + cfg.rtol * np.abs(z)
    d0 = float(np.sqrt(np.mean((z / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0.data / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    z1 = z + h0 * f0.data
    f1 = _eval_field(f, Tensor(z1), t0 + h0)
    d2 = float(np.sqrt(np.mean(((f1.data - f0.data) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end - t0)


def _integrate_dopri5(f, z0: Tensor, t0: float, ts: np.ndarray,
                      cfg: SolverConfig) -> list[Tensor]:
    t_end = float(ts[-1])
    outputs: list[Tensor | None] = [None] * ts.size
    next_out = 0
    # times equal to t0 (within fp noise) get the initial state directly
    while next_out < ts.size and ts[next_out] <= t0:
        outputs[next_out] = z0
        next_out += 1

    z, t = z0, t0
    if next_out >= ts.size:
        return outputs  # type: ignore[return-value]

    k_first = _eval_field(f, z, t)  # FSAL: reused across accepted steps
    h = cfg.initial_step or _select_initial_step(f, z, t, t_end, cfg, k_first)
    steps = 0
    while t < t_end:
        steps += 1
        if steps > cfg.max_steps:
            raise MaxStepsExceededError(t, z.data.copy(), cfg.max_steps)
        h = min(h, t_end - t)
        k = [k_first]
        for i in range(1, 7):
            coeffs = [1.0] + [h * a for a in _A[i]]
            stage_in = T.lincomb(coeffs, [z] + k[:i])
            k.append(_eval_field(f, stage_in, t + _C[i] * h))
        z_new = T.lincomb([1.0] + [h * b for b in _B5], [z] + k)
        err = h * sum(_E[i] * k[i].data for i in range(7) if _E[i] != 0.0)
        norm = _error_norm(err, z.data, z_new.data, cfg)
        if norm <= 1.0:
            # dense output for every requested time inside (t, t + h]
            t_new = t + h
            interp = None
            while next_out < ts.size and ts[next_out] <= t_new + 1e-14:
                theta = (ts[next_out] - t) / h
                if theta >= 1.0:
                    outputs[next_out] = z_new
                elif theta <= 0.0:
                    outputs[next_out] = z
                else:
                    if interp is None:
                        interp = _DenseInterp(z, z_new, k, h)
                    outputs[next_out] = interp(theta)
                next_out += 1
            z, t = z_new, t_new
            k_first = k[6]  # f evaluated at (t_new, z_new)
        factor = cfg.max_factor if norm == 0.0 else \
            cfg.safety * norm ** -0.2
        h *= min(max(factor, cfg.min_factor), cfg.max_factor)
    for i, out in enumerate(outputs):
        if out is None:
            outputs[i] = z  # only reachable through fp round-off at t_end
    return outputs  # type: ignore[return-value]


class _DenseInterp:
    """Classical 4th-order Dormand-Prince interpolant over one accepted step.

    The four polynomial coefficient tensors are built once per step and shared
    by every output time that lands inside it.
    """

    def __init__(self, z_old: Tensor, z_new: Tensor, k: list[Tensor], h: float):
        self.z_old = z_old
        # cont1 = z1 - z0; cont2 = h k1 - cont1; cont3 = cont1 - h k7 - cont2
        self.cont1 = T.lincomb([1.0, -1.0], [z_new, z_old])
        self.cont2 = T.lincomb([h, -1.0, 1.0], [k[0], z_new, z_old])
        self.cont3 = T.lincomb([2.0, -2.0, -h, -h], [z_new, z_old, k[6], k[0]])
        self.cont4 = T.lincomb([h * d for d in _D if d != 0.0],
                               [k[i] for i in range(7) if _D[i] != 0.0])

    def __call__(self, theta: float) -> Tensor:
        s1 = 1.0 - theta
        inner = T.lincomb([1.0, s1], [self.cont3, self.cont4])
        mid = T.lincomb([1.0, theta], [self.cont2, inner])
        return T.lincomb([1.0, theta, theta * s1],
                         [self.z_old, self.cont1, mid])
