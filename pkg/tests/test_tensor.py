"""Autodiff correctness: op semantics, gradients vs finite differences."""

import numpy as np
import pytest

from splatcast import tensor as T
from splatcast.tensor import (DomainError, Parameter, ShapeError, Tape, Tensor,
                              apply_op)

from helpers import fd_check, grad_of

N_SEEDS = 50


def rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, size=shape)


# ---- forward semantics -------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_tanh_and_softmax_symmetry():
    assert T.tanh(Tensor(0.0)).item() == 0.0
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_layernorm_matches_direct_statistics():
    rng = np.random.default_rng(7)
    x = rand(rng, 5, 9)
    y = T.layernorm(Tensor(x), eps=0.0).data
    # straight-line reference: subtract mean, divide by population std
    mu = x.mean(-1, keepdims=True)
    sd = np.sqrt(((x - mu) ** 2).mean(-1, keepdims=True))
    np.testing.assert_allclose(y, (x - mu) / sd, atol=1e-12)
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose((y ** 2).mean(-1), 1.0, atol=1e-6)


def test_forward_determinism():
    rng = np.random.default_rng(3)
    x = rand(rng, 4, 6)
    w = rand(rng, 6, 3)
    a = T.softmax(T.matmul(T.tanh(Tensor(x)), Tensor(w))).data
    b = T.softmax(T.matmul(T.tanh(Tensor(x)), Tensor(w))).data
    assert np.array_equal(a, b)


def test_scalar_ops_and_suffix_broadcast():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((x + 1.0).data, [[2, 3], [4, 5]])
    np.testing.assert_array_equal((2.0 * x).data, [[2, 4], [6, 8]])
    bias = Tensor([10.0, 20.0])
    np.testing.assert_array_equal((x + bias).data, [[11, 22], [13, 24]])


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(3, 2\)"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_domain_errors():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, -1.0]))
    with pytest.raises(DomainError):
        T.sqrt(Tensor([-0.5]))
    with pytest.raises(DomainError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_apply_op_registry_dispatch():
    out = apply_op("add", Tensor([1.0]), Tensor([2.0]))
    assert out.item() == 3.0
    with pytest.raises(KeyError):
        apply_op("not-an-op", Tensor([1.0]))


# ---- backward semantics ---------------------------------------------------------


def test_backward_quadratic():
    x = Parameter([1.0, 2.0, 3.0])
    with Tape():
        T.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    x = Parameter([1.0, 2.0])
    with Tape():
        y = x * x
        with pytest.raises(ShapeError):
            y.backward()


def test_unused_parameter_gradient_is_exact_zero():
    x = Parameter([1.0, 2.0])
    unused = Parameter([5.0])
    with Tape():
        T.tsum(x * x).backward()
    assert np.array_equal(unused.grad, [0.0])


def test_gradient_accumulates_for_reused_parameter():
    x = Parameter([2.0])
    with Tape():
        # y = x*x + 3x: dy/dx = 2x + 3 = 7
        T.tsum(x * x + 3.0 * x).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_linearity():
    rng = np.random.default_rng(11)
    xv = rand(rng, 4)
    a, b = 1.7, -0.6

    def l1(p):
        return T.tsum(p[0] * p[0])

    def l2(p):
        return T.tsum(T.sin(p[0]))

    g1 = grad_of(lambda p: l1(p), [xv])[0]
    g2 = grad_of(lambda p: l2(p), [xv])[0]
    g_combo = grad_of(lambda p: a * l1(p) + b * l2(p), [xv])[0]
    np.testing.assert_allclose(g_combo, a * g1 + b * g2, atol=1e-12)


def test_matmul_chain_gradient_vs_finite_differences():
    rng = np.random.default_rng(0)
    a = rand(rng, 3, 4)
    b = rand(rng, 4, 2)
    c = rand(rng, 2, 3)

    def loss(p):
        return T.tsum(T.tanh(T.matmul(T.matmul(p[0], p[1]), p[2])))

    assert fd_check(loss, [a, b, c]) < 1e-5


# ---- per-op gradient checks, 50 seeds each ----------------------------------------

UNARY_OPS = {
    "tanh": T.tanh,
    "exp": T.exp,
    "sin": T.sin,
    "cos": T.cos,
    "softmax": T.softmax,
    "layernorm": T.layernorm,
    "neg": T.neg,
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_op_gradients(name):
    op = UNARY_OPS[name]
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = rand(rng, 3, 5)
        worst = max(worst, fd_check(lambda p: T.tsum(T.sin(op(p[0]) * 0.9)), [x]))
    assert worst < 1e-5


def test_relu_gradient_away_from_kink():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = rand(rng, 4, 4)
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep clear of the kink
        worst = max(worst, fd_check(lambda p: T.tsum(T.relu(p[0]) * 1.3), [x]))
    assert worst < 1e-5


def test_abs_gradient_away_from_kink():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = rand(rng, 6)
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
        worst = max(worst, fd_check(lambda p: T.tsum(T.absolute(p[0])), [x]))
    assert worst < 1e-5


def test_log_sqrt_gradients_positive_domain():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.1, 2.0, size=(3, 4))
        worst = max(worst, fd_check(lambda p: T.tsum(T.log(p[0]) + T.sqrt(p[0])), [x]))
    assert worst < 1e-5


BINARY_OPS = {"add": T.add, "sub": T.sub, "mul": T.mul}


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_op_gradients(name):
    op = BINARY_OPS[name]
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = rand(rng, 2, 3, 4)
        b = rand(rng, 3, 4)  # leading batch-extent broadcast
        worst = max(worst, fd_check(lambda p: T.tsum(T.tanh(op(p[0], p[1]))), [a, b]))
    assert worst < 1e-5


def test_div_gradient():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = rand(rng, 3, 4)
        b = np.where(rng.uniform(size=(3, 4)) > 0.5, 1.0, -1.0) * \
            rng.uniform(0.5, 2.0, size=(3, 4))
        worst = max(worst, fd_check(lambda p: T.tsum(T.tanh(T.div(p[0], p[1]))),
                                    [a, b]))
    assert worst < 1e-5


def test_matmul_gradients_batched():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = rand(rng, 2, 3, 4)
        b = rand(rng, 4, 5)  # shared rhs across the batch
        worst = max(worst, fd_check(
            lambda p: T.tsum(T.tanh(T.matmul(p[0], p[1]))), [a, b]))
    assert worst < 1e-5


def test_reduction_gradients():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = rand(rng, 3, 4, 2)

        def loss(p):
            return T.tsum(T.sin(T.tmean(p[0], axis=1))) + T.tsum(T.cos(
                T.tsum(p[0], axis=2) * 0.5))

        worst = max(worst, fd_check(loss, [x]))
    assert worst < 1e-5


def test_structural_op_gradients():
    worst = 0.0
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = rand(rng, 3, 4)
        b = rand(rng, 3, 2)

        def loss(p):
            cat = T.concat([p[0], p[1]], axis=-1)          # (3, 6)
            stk = T.stack([p[0], p[0] * 2.0], axis=0)      # (2, 3, 4)
            sl = cat[1:, 2:5]
            tr = T.transpose_last(p[0])
            rs = T.reshape(p[1], (2, 3))
            return T.tsum(T.tanh(sl)) + T.tsum(T.sin(stk)) \
                + T.tsum(T.cos(tr)) + T.tsum(rs * rs)

        worst = max(worst, fd_check(loss, [a, b]))
    assert worst < 1e-5


def test_backward_consumes_tape():
    x = Parameter([1.0])
    with Tape() as tape:
        loss = T.tsum(x * x)
        loss.backward()
    assert len(tape) == 0
    with pytest.raises(RuntimeError):
        loss.backward()
