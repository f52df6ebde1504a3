"""Autodiff core: forward values against independent oracles, gradients
against central differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imgcap.errors import ContractError, ShapeError
from imgcap.ndcore import Graph, Tensor, grad_check, zero_grads

F64 = np.float64


def t64(arr):
    return Tensor(np.asarray(arr), dtype=F64)


def rand64(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=F64)


# ---------------------------------------------------------------------------
# tensor basics


def test_tensor_coerces_ints_to_float32():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32
    assert t.shape == (2, 2)
    assert t.grad is None and not t.requires_grad


def test_tensor_keeps_float64():
    t = Tensor(np.zeros(3, dtype=np.float64))
    assert t.dtype == np.float64


def test_zero_grads_clears():
    a = Tensor([1.0], requires_grad=True)
    a.grad = np.ones(1, dtype=np.float32)
    zero_grads([a])
    assert a.grad is None


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity_exact():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 5)).astype(np.float32))
    eye = Tensor(np.eye(5, dtype=np.float32))
    out = Graph().matmul(a, eye)
    assert np.array_equal(out.data, a.data)


def test_matmul_known_value():
    out = Graph().matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert np.array_equal(out.data, np.array([[17.0], [39.0]], dtype=np.float32))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        Graph().matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_batch_dims_must_match():
    with pytest.raises(ShapeError):
        Graph().matmul(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 4, 5))))


def test_matmul_broadcast_matches_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3, 5)).astype(np.float32)
    b = rng.normal(size=(5, 2)).astype(np.float32)
    out = Graph().matmul(Tensor(a), Tensor(b)).data
    for i in range(4):
        assert np.allclose(out[i], a[i] @ b, atol=1e-6)


def test_matmul_grad_matches_central_differences():
    # sum of entries of (x @ b), rel err < 1e-3 at eps=1e-3 in 64-bit
    rng = np.random.default_rng(2)
    b = rand64(rng, 4, 2)

    def f(g, x):
        return g.sum(g.matmul(x, b))

    assert grad_check(f, rand64(rng, 3, 4), eps=1e-3) < 1e-3


def test_matmul_grad_broadcast_operand():
    rng = np.random.default_rng(3)
    a = rand64(rng, 2, 3, 4)
    w = rand64(rng, 4, 5)

    def f_b(g, x):
        return g.sum(g.matmul(a, x))

    def f_a(g, x):
        return g.sum(g.matmul(x, w))

    assert grad_check(f_b, rand64(rng, 4, 5), eps=1e-4) < 1e-4
    assert grad_check(f_a, rand64(rng, 2, 3, 4), eps=1e-4) < 1e-4


# ---------------------------------------------------------------------------
# add / mul / scale / relu


def test_add_suffix_broadcast():
    x = Tensor(np.ones((2, 3, 4), dtype=np.float32))
    b = Tensor(np.arange(4, dtype=np.float32))
    out = Graph().add(x, b)
    assert np.array_equal(out.data, 1.0 + np.broadcast_to(np.arange(4), (2, 3, 4)).astype(np.float32))


def test_add_shape_error():
    with pytest.raises(ShapeError):
        Graph().add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2,))))


def test_add_grad_broadcast_bias():
    rng = np.random.default_rng(4)
    x = rand64(rng, 2, 3, 4)
    w = rand64(rng, 2, 3, 4)

    def f(g, b):
        return g.sum(g.mul(g.add(x, b), w))

    err = grad_check(f, rand64(rng, 4), eps=1e-5)
    assert err < 1e-6


def test_mul_scale_relu_grads():
    rng = np.random.default_rng(5)
    w = rand64(rng, 3, 4)

    def f_mul(g, x):
        return g.sum(g.mul(x, w))

    def f_scale(g, x):
        return g.sum(g.mul(g.scale(x, -2.5), w))

    def f_relu(g, x):
        return g.sum(g.mul(g.relu(x), w))

    x = rand64(rng, 3, 4)
    assert grad_check(f_mul, x, eps=1e-5) < 1e-6
    assert grad_check(f_scale, x, eps=1e-5) < 1e-6
    # keep inputs away from the kink at 0
    xr = Tensor(np.where(np.abs(x.data) < 0.1, 0.5, x.data), dtype=F64)
    assert grad_check(f_relu, xr, eps=1e-5) < 1e-6


def test_relu_forward():
    out = Graph().relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, np.array([0.0, 0.0, 2.0], dtype=np.float32))


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform_thirds():
    out = Graph().softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_frozen_values():
    # oracle: direct exp-normalize in 64-bit python floats
    z = math.exp(1.0) + math.exp(2.0) + math.exp(3.0)
    oracle = [math.exp(1.0) / z, math.exp(2.0) / z, math.exp(3.0) / z]
    assert np.allclose(oracle, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    out = Graph().softmax(Tensor([1.0, 2.0, 3.0]))
    assert np.allclose(out.data, oracle, atol=1e-4)


def test_softmax_large_inputs_stable():
    out = Graph().softmax(Tensor([1000.0, 1000.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_axis_choice():
    x = Tensor(np.array([[0.0, 10.0], [0.0, 10.0]]))
    out0 = Graph().softmax(x, axis=0)
    assert np.allclose(out0.data, [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ShapeError):
        Graph().softmax(x, axis=2)


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=8),
       st.floats(-1e4, 1e4))
def test_softmax_sums_to_one_and_shift_invariant(vals, shift):
    x = np.asarray(vals, dtype=np.float64)
    y = Graph().softmax(t64(x)).data
    assert abs(y.sum() - 1.0) < 1e-5
    y2 = Graph().softmax(t64(x + shift)).data
    assert np.all(np.abs(y - y2) < 1e-5)


def test_softmax_grad():
    rng = np.random.default_rng(6)
    w = rand64(rng, 2, 5)

    def f(g, x):
        return g.sum(g.mul(g.softmax(x, axis=-1), w))

    assert grad_check(f, rand64(rng, 2, 5), eps=1e-5) < 1e-4


# ---------------------------------------------------------------------------
# layer norm


def test_layer_norm_constant_row_collapses_to_bias():
    x = Tensor(np.full((1, 4), 5.0, dtype=np.float32))
    gain = Tensor(np.ones(4, dtype=np.float32))
    bias = Tensor(np.zeros(4, dtype=np.float32))
    out = Graph().layer_norm(x, gain, bias)
    assert np.array_equal(out.data, np.zeros((1, 4), dtype=np.float32))


def test_layer_norm_two_point():
    out = Graph().layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                             eps=1e-12)
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-5)


def test_layer_norm_moments():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(6, 16)).astype(np.float32))
    ones = Tensor(np.ones(16, dtype=np.float32))
    zeros = Tensor(np.zeros(16, dtype=np.float32))
    out = Graph().layer_norm(x, ones, zeros).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-3)


def test_layer_norm_shape_error():
    with pytest.raises(ShapeError):
        Graph().layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


def test_layer_norm_grads_all_inputs():
    rng = np.random.default_rng(8)
    x = rand64(rng, 3, 6)
    gain = rand64(rng, 6)
    bias = rand64(rng, 6)
    w = rand64(rng, 3, 6)

    def f_x(g, v):
        return g.sum(g.mul(g.layer_norm(v, gain, bias), w))

    def f_g(g, v):
        return g.sum(g.mul(g.layer_norm(x, v, bias), w))

    def f_b(g, v):
        return g.sum(g.mul(g.layer_norm(x, gain, v), w))

    assert grad_check(f_x, x, eps=1e-5) < 1e-4
    assert grad_check(f_g, gain, eps=1e-5) < 1e-4
    assert grad_check(f_b, bias, eps=1e-5) < 1e-4


# ---------------------------------------------------------------------------
# embedding


def test_embedding_gathers_rows():
    table = Tensor(np.arange(15, dtype=np.float32).reshape(5, 3), requires_grad=True)
    ids = np.array([[0, 2], [2, 4]])
    out = Graph().embedding(table, ids)
    assert out.shape == (2, 2, 3)
    assert np.array_equal(out.data[1, 0], table.data[2])


def test_embedding_duplicate_ids_accumulate():
    table = Tensor(np.zeros((4, 2)), requires_grad=True, dtype=F64)
    g = Graph()
    out = g.sum(g.embedding(table, np.array([1, 1, 3])))
    g.backward(out)
    expected = np.zeros((4, 2))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


def test_embedding_grad_check():
    rng = np.random.default_rng(9)
    ids = np.array([[0, 3, 1], [1, 1, 2]])
    w = rand64(rng, 2, 3, 4)

    def f(g, table):
        return g.sum(g.mul(g.embedding(table, ids), w))

    assert grad_check(f, rand64(rng, 5, 4), eps=1e-5) < 1e-6


def test_embedding_id_out_of_range():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(IndexError):
        Graph().embedding(table, np.array([4]))
    with pytest.raises(IndexError):
        Graph().embedding(table, np.array([-1]))


# ---------------------------------------------------------------------------
# reshape / transpose / sum


def test_reshape_transpose_grads():
    rng = np.random.default_rng(10)
    w = rand64(rng, 3, 2, 4)

    def f(g, x):
        y = g.transpose(g.reshape(x, (2, 3, 4)), (1, 0, 2))
        return g.sum(g.mul(y, w))

    assert grad_check(f, rand64(rng, 6, 4), eps=1e-5) < 1e-6


def test_sum_gradient_error_at_float_noise_floor():
    def f(g, x):
        return g.sum(x)

    assert grad_check(f, t64(np.arange(6.0).reshape(2, 3)), eps=1e-3) < 1e-10


# ---------------------------------------------------------------------------
# cross entropy


def test_cross_entropy_uniform_is_log_vocab():
    logits = Tensor(np.zeros((1, 1, 4), dtype=np.float32))
    loss = Graph().cross_entropy(logits, np.array([[2]]), np.array([[True]]))
    assert abs(loss.data.item() - math.log(4.0)) < 1e-6


def test_cross_entropy_confident_correct_is_near_zero():
    logits = np.zeros((1, 1, 4), dtype=np.float32)
    logits[0, 0, 2] = 50.0
    loss = Graph().cross_entropy(Tensor(logits), np.array([[2]]), np.array([[True]]))
    assert loss.data.item() < 1e-6


def test_cross_entropy_fully_masked_is_zero_with_zero_grad():
    logits = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5)).astype(np.float32),
                    requires_grad=True)
    g = Graph()
    loss = g.cross_entropy(logits, np.zeros((2, 3), dtype=np.int64),
                           np.zeros((2, 3), dtype=bool))
    assert loss.data.item() == 0.0
    g.backward(loss)
    assert logits.grad is None


def test_cross_entropy_mean_over_unmasked_only():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(2, 3, 5))
    targets = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, False, True], [False, False, True]])
    loss = Graph().cross_entropy(t64(logits), targets, mask).data.item()
    # independent oracle: dense log-softmax in numpy
    ls = logits - logits.max(-1, keepdims=True)
    ls = ls - np.log(np.exp(ls).sum(-1, keepdims=True))
    nll = -ls[np.arange(2)[:, None], np.arange(3)[None, :], targets]
    assert abs(loss - nll[mask].mean()) < 1e-12


def test_cross_entropy_target_out_of_range():
    logits = Tensor(np.zeros((1, 2, 4)))
    with pytest.raises(IndexError):
        Graph().cross_entropy(logits, np.array([[0, 4]]), np.ones((1, 2), dtype=bool))


def test_cross_entropy_grad_check():
    rng = np.random.default_rng(12)
    targets = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, True, False], [True, True, True]])

    def f(g, x):
        return g.cross_entropy(x, targets, mask)

    assert grad_check(f, rand64(rng, 2, 3, 5), eps=1e-5) < 1e-6


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_square():
    x = Tensor(np.array(3.0), requires_grad=True, dtype=F64)
    g = Graph()
    y = g.mul(x, x)
    g.backward(y)
    assert x.grad.item() == 6.0


def test_backward_fanout_adds():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True, dtype=F64)
    g = Graph()
    y = g.sum(g.add(x, x))
    g.backward(y)
    assert np.array_equal(x.grad, np.array([2.0, 2.0]))


def test_backward_accumulation_is_exact_sum_of_consumer_grads():
    rng = np.random.default_rng(13)
    a = rand64(rng, 3, 4)
    b = rand64(rng, 3, 4)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=F64)
    g = Graph()
    loss = g.add(g.sum(g.mul(x, a)), g.sum(g.mul(x, b)))
    g.backward(loss)
    assert np.array_equal(x.grad, a.data + b.data)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    g = Graph()
    y = g.scale(x, 2.0)
    with pytest.raises(ContractError):
        g.backward(y)


def test_non_recording_graph_keeps_no_tape():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    g = Graph(record=False)
    y = g.matmul(x, x)
    assert g._tape == [] and not y.requires_grad


def test_constant_inputs_get_no_grad():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    c = Tensor(np.ones((2, 2)))
    g = Graph()
    loss = g.sum(g.matmul(x, c))
    g.backward(loss)
    assert c.grad is None and x.grad is not None


def test_mixed_dtypes_rejected():
    with pytest.raises(ContractError):
        Graph().add(Tensor(np.zeros(2, dtype=np.float32)),
                    Tensor(np.zeros(2, dtype=np.float64)))


# ---------------------------------------------------------------------------
# randomized gradient sweep over chained primitives


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_chained_primitive_gradients_64bit(seed):
    rng = np.random.default_rng(seed)
    w1 = rand64(rng, 4, 6)
    gain = Tensor(rng.uniform(0.5, 1.5, size=6), dtype=F64)
    bias = rand64(rng, 6)
    w2 = rand64(rng, 3, 6)

    def f(g, x):
        h = g.relu(g.matmul(x, w1))
        h = g.layer_norm(h, gain, bias)
        h = g.softmax(h, axis=-1)
        return g.sum(g.mul(h, w2))

    assert grad_check(f, rand64(rng, 3, 4), eps=1e-5) < 1e-4
