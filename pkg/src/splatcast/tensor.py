"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Everything is backed by contiguous row-major numpy arrays.  Ops executed while
a :class:`Tape` is active are appended to it; :func:`backward` replays the tape
in strict reverse append order and accumulates gradients into the
:class:`Parameter` leaves.  Gradients flow through unrolled computations
(including ODE solver steps), so they are exact with respect to the
discretization actually executed.

Shape rules are deliberately narrow: elementwise ops broadcast only when one
operand's shape is a trailing suffix of the other's (a "leading batch extent"),
and matmul batches only when the leading extents match exactly or one operand
is a plain matrix.  Float64 is the default dtype; float32 is supported for
training speed but gradient checks always run in float64.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's shape rule."""


class DomainError(ValueError):
    """Input values fall outside an op's domain (div/log/sqrt guards)."""


class _Node:
    __slots__ = ("op", "parents", "backward", "param")

    def __init__(self, op, parents, backward, param=None):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.param = param


class Tape:
    """Append-only op record; single writer, cleared by :func:`backward`."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._closed = False

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STACK.remove(self)
        return False

    def _append(self, node: _Node) -> int:
        if self._closed:
            raise RuntimeError("tape already consumed by backward()")
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _leaf(self, param: "Parameter") -> int:
        key = id(param)
        idx = self._leaf_ids.get(key)
        if idx is None:
            idx = self._append(_Node("leaf", (), None, param))
            self._leaf_ids[key] = idx
        return idx

    def _clear(self):
        self._nodes.clear()
        self._leaf_ids.clear()
        self._closed = True


_STACK: list[Tape] = []


def _active() -> Tape | None:
    return _STACK[-1] if _STACK else None


class Tensor:
    """Row-major float array, optionally linked to a tape node."""

    __slots__ = ("data", "_tape", "_idx")

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self._tape: Tape | None = None
        self._idx: int = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def __float__(self) -> float:
        return self.data.item()

    def __repr__(self):
        tracked = "" if self._tape is None else ", tracked"
        return f"Tensor(shape={self.shape}{tracked})\n{self.data!r}"

    def backward(self):
        backward(self)

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other, self))

    def __getitem__(self, key):
        return take(self, key)


class Parameter(Tensor):
    """Leaf tensor whose gradient is accumulated by backward().

    ``grad`` starts at exact zero, so a parameter untouched by the loss
    reports a zero gradient rather than a missing one.
    """

    __slots__ = ("grad",)

    def __init__(self, data, dtype=None):
        super().__init__(data, dtype)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _node_index(t: Tensor, tape: Tape) -> int:
    if t._tape is tape:
        return t._idx
    if isinstance(t, Parameter):
        return tape._leaf(t)
    return -1


def _record(op: str, out_data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active()
    if tape is None:
        return out
    idxs = tuple(_node_index(p, tape) for p in parents)
    if all(i < 0 for i in idxs):
        return out
    out._idx = tape._append(_Node(op, idxs, backward_fn))
    out._tape = tape
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(parameter) into every tracked Parameter.

    The loss must be a scalar recorded on a live tape.  The tape is cleared
    afterwards; reuse requires a fresh forward pass.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise RuntimeError("backward: loss is not recorded on any tape")
    if tape._closed:
        raise RuntimeError("backward: tape already consumed; rerun the forward pass")
    nodes = tape._nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss._idx] = np.ones((), dtype=loss.data.dtype)
    for i in range(loss._idx, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        if node.param is not None:
            node.param.grad = node.param.grad + g
        else:
            for pi, pg in zip(node.parents, node.backward(g)):
                if pi < 0 or pg is None:
                    continue
                grads[pi] = pg if grads[pi] is None else grads[pi] + pg
        grads[i] = None
    tape._clear()


# ---- shape helpers ------------------------------------------------------


def _check_suffix_broadcast(op: str, sa: tuple, sb: tuple):
    if sa == sb:
        return
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeError(
        f"{op}: shapes {sa} and {sb} do not match and neither is a "
        f"trailing suffix of the other (only leading batch extents broadcast)"
    )


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ---- elementwise binary ops ---------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast("div", a.shape, b.shape)
    if np.any(b.data == 0):
        raise DomainError("div: denominator contains zero")
    ad, bd = a.data, b.data
    return _record("div", ad / bd, (a, b),
                   lambda g: (_reduce_to(g / bd, ad.shape),
                              _reduce_to(-g * ad / (bd * bd), bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


# ---- matmul --------------------------------------------------------------


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {sa} @ {sb}")
    if sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, got {sa} @ {sb}")
    if not (sa[:-2] == sb[:-2] or a.ndim == 2 or b.ndim == 2):
        raise ShapeError(
            f"matmul: leading extents must match exactly or one operand must "
            f"be 2-D, got {sa} @ {sb}"
        )
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _reduce_to(g @ _swap(bd), ad.shape)
        gb = _reduce_to(_swap(ad) @ g, bd.shape)
        return ga, gb

    return _record("matmul", ad @ bd, (a, b), bwd)


# ---- elementwise unary ops ------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,),
                   lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input contains non-positive values")
    ad = a.data
    return _record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt: input contains negative values")
    y = np.sqrt(a.data)
    return _record("sqrt", y, (a,), lambda g: (g / (2.0 * y),))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _record("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _record("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return _record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


# ---- reductions -----------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _record("sum", out, (a,),
                   lambda g: (_expand_reduced(g, shape, axis, keepdims),))


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    return _record("mean", out, (a,),
                   lambda g: (_expand_reduced(g, shape, axis, keepdims) / n,))


# ---- fused normalizations --------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (a,), bwd)


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bwd(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - y * (g * y).mean(axis=-1, keepdims=True)),)

    return _record("layernorm", y, (a,), bwd)


# ---- structural ops --------------------------------------------------------


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    datas = [t.data for t in tensors]
    ref = datas[0].shape
    ax = axis % max(len(ref), 1)
    for d in datas[1:]:
        if len(d.shape) != len(ref) or any(
            i != ax and d.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {d.shape} on axis {axis}")
    out = np.concatenate(datas, axis=ax)
    offsets = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=ax))

    return _record("concat", out, tensors, bwd)


def lincomb(coeffs, tensors) -> Tensor:
    """Fused scalar-weighted sum of same-shape tensors: sum_i c_i * t_i.

    One tape node regardless of term count; the backward of each parent is
    just its coefficient times the output gradient.  This keeps deep unrolled
    integrators from flooding the tape with pairwise adds.
    """
    tensors = list(tensors)
    coeffs = [float(c) for c in coeffs]
    if len(coeffs) != len(tensors) or not tensors:
        raise ShapeError("lincomb: need matching, non-empty coeffs and tensors")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"lincomb: all shapes must match, got {ref} and {t.shape}")
    out = coeffs[0] * tensors[0].data
    for c, t in zip(coeffs[1:], tensors[1:]):
        if c != 0.0:
            out = out + c * t.data

    def bwd(g):
        return tuple(c * g if c != 0.0 else None for c in coeffs)

    return _record("lincomb", out, tensors, bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack: need at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: all shapes must match, got {ref} and {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record("stack", out, tensors, bwd)


def transpose_last(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
    return _record("transpose", _swap(a.data), (a,), lambda g: (_swap(g),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size and -1 not in shape:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}")
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(old),))


def take(a: Tensor, key) -> Tensor:
    """Basic slicing/indexing; the gradient scatters back into zeros."""
    out = a.data[key]
    shape, dtype = a.shape, a.data.dtype

    def bwd(g):
        z = np.zeros(shape, dtype=dtype)
        z[key] = g
        return (z,)

    return _record("slice", out, (a,), bwd)


# ---- op registry ------------------------------------------------------------

OP_REGISTRY = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "sin": sin,
    "cos": cos,
    "abs": absolute,
    "sum": tsum,
    "mean": tmean,
    "softmax": softmax,
    "layernorm": layernorm,
    "concat": concat,
    "lincomb": lincomb,
    "stack": stack,
    "transpose": transpose_last,
    "reshape": reshape,
    "slice": take,
}


def apply_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by kind name; the auditable surface of the op set."""
    try:
        fn = OP_REGISTRY[kind]
    except KeyError:
        raise KeyError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)
