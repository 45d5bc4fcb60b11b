import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from colorgan import tensor as T
from colorgan.tensor import GraphError, ShapeError, Tensor


def f64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def matmul_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestCreate:
    def test_zeros(self):
        np.testing.assert_array_equal(T.create([2, 2]).data, [[0, 0], [0, 0]])

    def test_constant(self):
        np.testing.assert_array_equal(T.create([3], "constant", value=0.5).data, [0.5, 0.5, 0.5])

    def test_normal_moments(self):
        # n=1e4: 3 sigma of the mean is 0.03, of the std about 0.021
        x = T.create([10_000], "normal", mean=0.0, std=1.0, seed=7).data
        assert abs(x.mean()) < 0.05
        assert abs(x.std() - 1) < 0.05

    def test_normal_is_seeded(self):
        a = T.create([5], "normal", seed=3).data
        b = T.create([5], "normal", seed=3).data
        np.testing.assert_array_equal(a, b)

    def test_rank_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_unknown_init(self):
        with pytest.raises(ValueError):
            T.create([2], "uniformish")


class TestElementwise:
    def test_scalar_values(self):
        assert T.tanh(f64([0.0])).data[0] == 0
        np.testing.assert_array_equal(T.relu(f64([-2.0, 3.0])).data, [0, 3])
        assert T.sigmoid(f64([0.0])).data[0] == 0.5
        assert T.leaky_relu(f64([-1.0]), 0.2).data[0] == pytest.approx(-0.2)

    def test_log_domain(self):
        with pytest.raises(ValueError):
            T.log(f64([1.0, 0.0]))

    def test_broadcast_gradient_reduces(self):
        a, c = f64(np.ones((3, 4)), True), f64(np.full((3, 1), 2.0), True)
        T.tensor_sum(T.mul(a, c)).backward()
        np.testing.assert_array_equal(a.grad, np.full((3, 4), 2.0))
        np.testing.assert_array_equal(c.grad, np.full((3, 1), 4.0))

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            T.add(f64(np.ones((2, 3))), f64(np.ones((3, 2))))

    def test_dispatcher(self):
        x = f64([-1.0, 2.0])
        np.testing.assert_allclose(T.elementwise("leaky_relu", x, alpha=0.1).data, [-0.1, 2.0])
        np.testing.assert_allclose(T.elementwise("add", x, x).data, [-2.0, 4.0])
        with pytest.raises(ValueError):
            T.elementwise("cube", x)

    @given(arrays(np.float64, 20, elements=st.floats(-50, 50)))
    def test_tanh_codomain(self, x):
        out = T.tanh(f64(x)).data
        assert np.all(np.abs(out) <= 1)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=30, unique=True))
    def test_sigmoid_monotone(self, xs):
        xs = np.sort(np.asarray(xs))
        ys = T.sigmoid(f64(xs)).data
        assert np.all(np.diff(ys) >= 0)

    def test_sigmoid_stable_at_extremes(self):
        out = T.sigmoid_array(np.array([-1000.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_softplus_no_overflow(self):
        out = T.softplus(f64([-800.0, 0.0, 800.0])).data
        np.testing.assert_allclose(out, [0.0, np.log(2), 800.0])


class TestMatmul:
    def test_identity_and_zero(self):
        a = f64([[1, 2], [3, 4]])
        np.testing.assert_array_equal(T.matmul(a, f64(np.eye(2))).data, a.data)
        np.testing.assert_array_equal(T.matmul(a, f64(np.zeros((2, 2)))).data, np.zeros((2, 2)))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(T.matmul(f64(a), f64(b)).data, matmul_loop(a, b), atol=1e-12)

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(f64(np.ones((2, 3))), f64(np.ones((2, 3))))


class TestConcatReduce:
    def test_concat_shape(self):
        a, b = f64(np.zeros((2, 8, 8, 3))), f64(np.ones((2, 8, 8, 1)))
        assert T.concat_channels([a, b]).shape == (2, 8, 8, 4)

    def test_concat_single_is_identity(self):
        a = f64(np.arange(8.0).reshape(1, 2, 2, 2))
        np.testing.assert_array_equal(T.concat_channels([a]).data, a.data)

    def test_concat_grad_is_ones(self):
        a, b = f64(np.zeros((2, 3, 3, 2)), True), f64(np.zeros((2, 3, 3, 1)), True)
        T.tensor_sum(T.concat_channels([a, b])).backward()
        np.testing.assert_array_equal(a.grad, np.ones(a.shape))
        np.testing.assert_array_equal(b.grad, np.ones(b.shape))

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_channels([f64(np.zeros((1, 2, 2, 1))), f64(np.zeros((1, 3, 3, 1)))])

    def test_reductions(self):
        assert T.tensor_mean(f64([1.0, 2.0, 3.0])).item() == 2
        assert T.tensor_sum(f64(np.zeros((4, 4)))).item() == 0
        np.testing.assert_array_equal(T.tensor_mean(f64([[1, 3], [3, 5]]), 0).data, [2, 4])

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            T.tensor_sum(f64(np.zeros((2, 2))), 2)


class TestBackward:
    def test_sum_grad(self):
        x = f64([1.0, 2.0, 3.0], True)
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_mean_square_grad(self):
        x = f64([1.0, 2.0], True)
        T.tensor_mean(T.square(x)).backward()
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_second_backward_raises(self):
        x = f64([1.0, 2.0], True)
        loss = T.tensor_sum(T.square(x))
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_fresh_graphs_accumulate(self):
        x = f64([1.0, 2.0], True)
        T.tensor_sum(x).backward()
        T.tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, [2, 2])

    def test_nonscalar_backward(self):
        with pytest.raises(GraphError):
            f64([1.0, 2.0], True).backward()

    def test_shared_subexpression(self):
        # d/dx of (x*x + x*x) = 4x, the node x*x feeds two consumers
        x = f64([3.0], True)
        y = T.mul(x, x)
        T.tensor_sum(T.add(y, y)).backward()
        assert x.grad[0] == pytest.approx(12.0)

    def test_no_grad_builds_no_graph(self):
        x = f64([1.0], True)
        with T.no_grad():
            y = T.square(x)
        assert not y.requires_grad
        assert T.is_grad_enabled()

    def test_deep_chain_does_not_recurse(self):
        x = f64([0.5], True)
        y = x
        for _ in range(5000):
            y = T.scale(y, 1.0)
        T.tensor_sum(y).backward()
        assert x.grad[0] == 1.0

    def test_zero_grads(self):
        x = f64([1.0], True)
        T.tensor_sum(x).backward()
        T.zero_grads([x])
        assert x.grad is None
