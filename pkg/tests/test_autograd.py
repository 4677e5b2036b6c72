"""Tensor engine: forward values, gradient correctness, determinism."""

import numpy as np
import pytest

from laneshape import autograd as ag
from laneshape.autograd import (
    NonScalarLossError,
    ParameterStore,
    ShapeMismatchError,
    Tensor,
    backward,
    conv2d,
    finite_difference_check,
    layer_norm,
    matmul,
    row_softmax,
    scaled_dot_product_attention,
)


def fd_check_op(build, arrays, step=1e-6, tol=1e-6):
    """Wrap an op in a sum-reduction and finite-difference check it."""
    store = ParameterStore()
    tensors = [store.add(f"p{i}", a) for i, a in enumerate(arrays)]
    err = finite_difference_check(lambda: ag.tensor_sum(build(*tensors)), store, step)
    assert err < tol, f"finite-difference mismatch: {err}"


class TestMatmul:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out = matmul(Tensor(np.eye(2)), Tensor(x))
        assert np.array_equal(out.data, x)

    def test_hand_value(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_of_sum_is_ones_times_bt(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        store = ParameterStore()
        ta = store.add("a", a)
        tb = store.add("b", b, requires_grad=False)
        backward(ag.tensor_sum(matmul(ta, tb)))
        expected = np.ones((3, 2)) @ b.T
        assert np.allclose(ta.grad, expected, atol=1e-12)
        fd_check_op(lambda x: matmul(x, Tensor(b)), [a])


class TestElementwise:
    def test_add_mul_broadcast_grads(self):
        rng = np.random.default_rng(1)
        fd_check_op(lambda x, y: x * y + x, [rng.normal(size=(3, 4)),
                                             rng.normal(size=(4,))])

    def test_div_pow_log(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.5, 2.0, size=(3, 3))
        b = rng.uniform(0.5, 2.0, size=(3, 3))
        fd_check_op(lambda x, y: ag.log(x / y) + x ** 3, [a, b])

    def test_sum_grad_is_ones(self):
        store = ParameterStore()
        x = store.add("x", np.arange(6.0).reshape(2, 3))
        backward(ag.tensor_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum_grad_is_2x(self):
        store = ParameterStore()
        data = np.arange(6.0).reshape(2, 3)
        x = store.add("x", data)
        backward(ag.tensor_sum(x * x))
        assert np.allclose(x.grad, 2 * data)

    def test_abs_and_relu(self):
        a = np.array([[-2.0, -0.5, 0.7, 3.0]])
        fd_check_op(lambda x: ag.absolute(x) + ag.relu(x), [a])

    def test_logistic_values_and_grad(self):
        x = Tensor([[0.0, 100.0, -100.0]])
        y = ag.logistic(x)
        assert np.allclose(y.data, [[0.5, 1.0, 0.0]], atol=1e-12)
        fd_check_op(ag.logistic, [np.array([[0.3, -1.2, 2.0]])])

    def test_take_and_concat(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(4, 5))
        fd_check_op(lambda x: ag.concat([x[0:2, :], x[2:4, :]], axis=0) * 2.0, [a])
        fd_check_op(lambda x: x[1, 2:4], [a])


class TestRowSoftmax:
    def test_uniform_row(self):
        out = row_softmax(Tensor([[3.0, 3.0, 3.0, 3.0]]))
        assert np.allclose(out.data, 0.25, atol=1e-15)

    def test_hand_value(self):
        out = row_softmax(Tensor([[0.0, np.log(3.0)]]))
        assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 5))
        a = row_softmax(Tensor(x)).data
        b = row_softmax(Tensor(x + 123.0)).data
        assert np.max(np.abs(a - b)) < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        s = row_softmax(Tensor(rng.normal(size=(6, 7)) * 10)).data
        assert np.max(np.abs(s.sum(axis=1) - 1.0)) < 1e-9
        assert np.all(s > 0) and np.all(s < 1)

    def test_grad(self):
        rng = np.random.default_rng(6)
        weights = Tensor(rng.normal(size=(3, 4)))
        fd_check_op(lambda x: row_softmax(x) * weights, [rng.normal(size=(3, 4))])


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-4)

    def test_row_stats(self):
        rng = np.random.default_rng(7)
        gain = np.full(8, 1.7)
        bias = np.full(8, -0.3)
        out = layer_norm(Tensor(rng.normal(size=(5, 8)) * 3), Tensor(gain), Tensor(bias)).data
        assert np.max(np.abs(out.mean(axis=1) - (-0.3))) < 1e-10
        assert np.max(np.abs(out.std(axis=1) - 1.7)) < 1e-3

    def test_grad_all_inputs(self):
        rng = np.random.default_rng(8)
        fd_check_op(layer_norm, [rng.normal(size=(4, 6)),
                                 rng.uniform(0.5, 1.5, size=6),
                                 rng.normal(size=6)], tol=1e-5)


class TestAttention:
    def test_single_matching_key(self):
        q = Tensor([[1.0, 0.0]])
        v = Tensor([[3.0, 4.0, 5.0]])
        out, attn = scaled_dot_product_attention(q, q, v)
        assert np.allclose(attn.data, [[1.0]])
        assert np.allclose(out.data, v.data)

    def test_orthogonal_keys_sharp_selection(self):
        s = 50.0
        q = Tensor([[s, 0.0]])
        k = Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = Tensor([[1.0, 2.0], [30.0, 40.0]])
        out, attn = scaled_dot_product_attention(q, k, v)
        assert attn.data[0, 0] > 1.0 - 1e-9
        assert np.allclose(out.data, [[1.0, 2.0]], atol=1e-6)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(9)
        q = Tensor(rng.normal(size=(5, 4)))
        k = Tensor(rng.normal(size=(7, 4)))
        v = Tensor(rng.normal(size=(7, 3)))
        _, attn = scaled_dot_product_attention(q, k, v)
        assert np.max(np.abs(attn.data.sum(axis=1) - 1.0)) < 1e-9

    def test_grad_through_attention(self):
        rng = np.random.default_rng(10)
        fd_check_op(
            lambda q, k, v: scaled_dot_product_attention(q, k, v)[0],
            [rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))],
            tol=1e-5,
        )


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 5, 6))
        k = np.ones((1, 1, 1, 1))
        out = conv2d(Tensor(x), Tensor(k), stride=1)
        assert np.allclose(out.data, x)

    def test_ones_kernel_on_one_hot(self):
        x = np.zeros((1, 7, 7))
        x[0, 3, 3] = 1.0
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), stride=1).data
        assert np.allclose(out[0, 2:5, 2:5], 1.0)
        assert out.sum() == pytest.approx(9.0)

    def test_stride_halves_even_sizes(self):
        x = Tensor(np.random.default_rng(12).normal(size=(2, 8, 10)))
        k = Tensor(np.random.default_rng(13).normal(size=(3, 2, 3, 3)))
        out = conv2d(x, k, stride=2)
        assert out.data.shape == (3, 4, 5)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_grad(self):
        rng = np.random.default_rng(14)
        fd_check_op(lambda x, k: conv2d(x, k, stride=2),
                    [rng.normal(size=(2, 6, 6)), rng.normal(size=(3, 2, 3, 3))],
                    tol=1e-6)


class TestBackward:
    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(NonScalarLossError):
            backward(x + x)

    def test_accumulation_across_calls(self):
        store = ParameterStore()
        x = store.add("x", np.array([1.0, 2.0]))
        backward(ag.tensor_sum(x * x))
        backward(ag.tensor_sum(x * x))
        assert np.allclose(x.grad, 4.0 * x.data)
        store.zero_grad()
        backward(ag.tensor_sum(x * x))
        assert np.allclose(x.grad, 2.0 * x.data)

    def test_diamond_graph(self):
        store = ParameterStore()
        x = store.add("x", np.array([3.0]))
        y = x * x
        backward(ag.tensor_sum(y + y))
        assert np.allclose(x.grad, [12.0])

    def test_composite_attention_layernorm_grad(self):
        rng = np.random.default_rng(15)
        store = ParameterStore()
        q = store.add("q", rng.normal(size=(4, 6)))
        k = store.add("k", rng.normal(size=(5, 6)))
        v = store.add("v", rng.normal(size=(5, 6)))
        gain = store.add("gain", rng.uniform(0.8, 1.2, size=6))
        bias = store.add("bias", rng.normal(size=6))

        def f():
            out, _ = scaled_dot_product_attention(q, k, v)
            return ag.tensor_sum(layer_norm(out, gain, bias) ** 2)

        assert finite_difference_check(f, store, 1e-6) < 1e-4


class TestFiniteDifferenceCheck:
    def test_quadratic_form(self):
        rng = np.random.default_rng(16)
        a = rng.normal(size=(4, 4))
        a = a + a.T
        store = ParameterStore()
        x = store.add("x", rng.normal(size=(4, 1)))

        def f():
            return ag.tensor_sum(matmul(matmul(ag.transpose(x), Tensor(a)), x))

        assert finite_difference_check(f, store, 1e-6) < 1e-8

    def test_zero_function(self):
        store = ParameterStore()
        x = store.add("x", np.ones(3))
        assert finite_difference_check(lambda: ag.tensor_sum(x * 0.0), store) == 0.0

    def test_rejects_bad_step(self):
        store = ParameterStore()
        store.add("x", np.ones(2))
        with pytest.raises(ValueError):
            finite_difference_check(lambda: Tensor(0.0), store, step=0.0)


class TestDeterminism:
    def test_bit_identical_reruns(self):
        def run():
            rng = np.random.default_rng(99)
            x = Tensor(rng.normal(size=(6, 6)))
            w = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
            out, attn = scaled_dot_product_attention(matmul(x, w), x, x)
            loss = ag.tensor_sum(out * out)
            backward(loss)
            return loss.item(), w.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.add("w", np.ones(2))
        with pytest.raises(ValueError):
            store.add("w", np.ones(2))

    def test_stable_iteration_order(self):
        store = ParameterStore()
        for name in ["c", "a", "b"]:
            store.add(name, np.zeros(1))
        assert store.names() == ["c", "a", "b"]

    def test_load_arrays_shape_check(self):
        store = ParameterStore()
        store.add("w", np.ones((2, 2)))
        with pytest.raises(ShapeMismatchError):
            store.load_arrays({"w": np.ones(3)})
        with pytest.raises(KeyError):
            store.load_arrays({})
