import math

import numpy as np
import pytest

from gradcheck import op_gradient_errors
from pcvit import tensor as T
from pcvit.errors import ContractError, DimensionError, NumericError
from pcvit.tensor import Graph, Tensor


class TestMatmul:
    def test_identity(self):
        out = Tensor([[1, 0], [0, 1]]) @ Tensor([[3, 4], [5, 6]])
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_row_times_column(self):
        out = Tensor([[1, 2]]) @ Tensor([[3], [4]])
        assert out.shape == (1, 1)
        assert out.item() == 11.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_batch_broadcast(self, rng):
        a = rng.normal(size=(2, 1, 3, 4))
        b = rng.normal(size=(5, 4, 2))
        out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(out.data, a @ b)

    def test_gradient_of_sum(self, rng):
        """d sum(AB) / dA = 1 B^T, checked numerically."""
        errs = op_gradient_errors(T.matmul, [rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 2))], rng)
        assert max(errs) < 1e-4

    def test_batched_gradient(self, rng):
        errs = op_gradient_errors(T.matmul, [rng.uniform(-2, 2, (2, 1, 3, 4)), rng.uniform(-2, 2, (3, 4, 2))], rng)
        assert max(errs) < 1e-4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([0, 0, 0, 0])).data, [0.25] * 4)

    def test_ratio(self):
        out = T.softmax(Tensor([math.log(1), math.log(3)], dtype=np.float64))
        np.testing.assert_allclose(out.data, [0.25, 0.75], rtol=1e-12)

    def test_gradient(self, rng):
        assert op_gradient_errors(T.softmax, [rng.uniform(-2, 2, 8)], rng)[0] < 1e-4

    def test_rows_sum_to_one_and_shift_invariance(self, rng):
        x = rng.uniform(-30, 30, (50, 7)).astype(np.float32)
        y = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        shifted = T.softmax(Tensor(x + 17.5)).data
        np.testing.assert_allclose(shifted, y, atol=1e-6)

    def test_large_inputs_do_not_overflow(self):
        y = T.softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(y, [0.5, 0.5])

    def test_other_axis(self, rng):
        x = rng.normal(size=(3, 5, 2))
        y = T.softmax(Tensor(x, dtype=np.float64), axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            T.softmax(Tensor([0.0, np.nan]))


class TestLayerNorm:
    @staticmethod
    def _ln(x, eps=1e-6):
        d = x.shape[-1]
        return T.layer_norm(x, T.ones(d), T.zeros(d), eps)

    def test_constant_row_collapses_to_beta(self):
        out = T.layer_norm(Tensor([[5, 5, 5]]), T.ones(3), Tensor([0.5, -1, 2]))
        np.testing.assert_array_equal(out.data, [[0.5, -1, 2]])

    def test_hand_example(self):
        with T.precision(np.float64):
            out = T.layer_norm(Tensor([1.0, 2.0, 3.0]), T.ones(3), T.zeros(3), eps=1e-12)
        np.testing.assert_allclose(out.data, [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-9)

    def test_gradient_wrt_all_inputs(self, rng):
        errs = op_gradient_errors(
            lambda x, g, b: T.layer_norm(x, g, b),
            [rng.uniform(-2, 2, (4, 6)), rng.uniform(-2, 2, 6), rng.uniform(-2, 2, 6)],
            rng,
        )
        assert max(errs) < 1e-4

    def test_row_statistics(self, rng):
        x = rng.uniform(-3, 3, (100, 16)).astype(np.float32)
        y = self._ln(Tensor(x)).data.astype(np.float64)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-5)

    def test_shape_checks(self):
        with pytest.raises(DimensionError):
            T.layer_norm(Tensor(np.zeros((2, 3))), T.ones(4), T.zeros(4))
        with pytest.raises(ContractError):
            T.layer_norm(Tensor(np.zeros((2, 3))), T.ones(3), T.zeros(3), eps=0.0)


class TestGelu:
    def test_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_saturation(self):
        assert abs(T.gelu(Tensor([6.0])).data[0] - 6.0) < 1e-3

    def test_matches_formula(self, rng):
        x = rng.uniform(-5, 5, 200)
        with T.precision(np.float64):
            got = T.gelu(Tensor(x)).data
        want = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)

    def test_gradient(self, rng):
        assert op_gradient_errors(T.gelu, [rng.uniform(-2, 2, 20)], rng)[0] < 1e-4


class TestElementwiseAndShape:
    def test_add(self):
        np.testing.assert_array_equal(T.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])

    def test_transpose_involution(self, rng):
        x = Tensor(rng.normal(size=(3, 5)))
        np.testing.assert_array_equal(x.T.T.data, x.data)

    def test_broadcast_error(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_reshape_error(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros(6)).reshape(4, 2)

    @pytest.mark.parametrize(
        "name, fn, shapes",
        [
            ("add", T.add, [(3, 4), (4,)]),
            ("sub", T.sub, [(3, 1), (3, 4)]),
            ("mul", T.mul, [(2, 3, 4), (1, 3, 1)]),
            ("scale", lambda x: T.scale(x, -1.7), [(5,)]),
            ("neg", lambda x: -x, [(5,)]),
            ("transpose", lambda x: T.transpose(x, (2, 0, 1)), [(2, 3, 4)]),
            ("reshape", lambda x: T.reshape(x, (6, 2)), [(3, 4)]),
            ("concat", lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
            ("getitem", lambda x: x[:, 1:3], [(3, 4)]),
            ("fancy_index", lambda x: x[np.array([0, 2, 0]), np.array([1, 1, 3])], [(3, 4)]),
            ("sum", lambda x: T.tsum(x, axis=1), [(3, 4)]),
            ("mean", lambda x: T.mean(x, axis=0, keepdims=True), [(3, 4)]),
            ("log_softmax", T.log_softmax, [(3, 5)]),
            ("attention_logits", lambda q, k: T.softmax(T.scale(q @ k.swapaxes(-1, -2), 0.5)), [(2, 3, 4), (2, 3, 4)]),
        ],
    )
    def test_gradient(self, name, fn, shapes, rng):
        errs = op_gradient_errors(fn, [rng.uniform(-2, 2, s) for s in shapes], rng)
        assert max(errs) < 1e-4, name


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).sum().backward()
        assert x.grad[0] == 6.0

    def test_constant_loss(self):
        x = Tensor([3.0], requires_grad=True)
        Tensor([2.0]).sum().backward()
        assert x.grad is None or not x.grad.any()

    def test_disconnected_input_gets_zero(self):
        x = Tensor([3.0], requires_grad=True)
        y = Tensor([1.0], requires_grad=True)
        (x * 0.0 + y).sum().backward()
        assert x.grad[0] == 0.0
        assert y.grad[0] == 1.0

    def test_shared_subexpression(self):
        """x feeds the loss along two paths; contributions add up."""
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        (y * y + y).sum().backward()
        # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert x.grad[0] == 36.0

    def test_gradients_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_deterministic(self, rng):
        a = rng.normal(size=(4, 6)).astype(np.float32)
        w = rng.normal(size=(6, 3)).astype(np.float32)

        def run():
            x = Tensor(a, requires_grad=True)
            W = Tensor(w, requires_grad=True)
            h = T.layer_norm(T.gelu(x @ W), T.ones(3), T.zeros(3))
            T.log_softmax(h).sum().backward()
            return x.grad, W.grad

        g1, g2 = run(), run()
        for u, v in zip(g1, g2):
            assert u.tobytes() == v.tobytes()

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert y.node is None and not y.requires_grad

    def test_deep_chain_is_iterative(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        assert x.grad[0] == 1.0


class TestGraph:
    def test_topological_order(self, rng):
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        c = a @ b
        d = c + a
        loss = T.tsum(d * c)
        graph = Graph.build(loss)
        position = {id(out): i for i, (_, _, out) in enumerate(graph.nodes)}
        assert graph.nodes[-1][2] is loss
        for i, (_, inputs, _) in enumerate(graph.nodes):
            for inp in inputs:
                if inp.node is not None:
                    assert position[id(inp)] < i
        # each produced tensor appears once
        assert len(position) == len(graph.nodes) == 4

    def test_ops_recorded(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ops = [op for op, _, _ in Graph.build(T.tsum(T.gelu(x))).nodes]
        assert ops == ["gelu", "sum"]


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2]).dtype == np.float32

    def test_precision_context(self):
        with T.precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_item_requires_single_value(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()
