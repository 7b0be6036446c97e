"""Tensor/tape unit tests: frozen examples, backward rules, gradcheck sweeps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regionclr.autodiff import Tape, Tensor, gradcheck
from regionclr.errors import (
    ContractError,
    DegenerateRowWarning,
    InputError,
    ShapeError,
)


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


class TestMatmul:
    def test_identity(self):
        t = Tape()
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = t.matmul(t.const(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_hand_product(self):
        # hand oracle: rows of A dotted with the column [5, 6]
        t = Tape()
        out = t.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_zeros_annihilate(self):
        t = Tape()
        out = t.matmul(t.const(np.zeros((2, 3))), t.const(rand((3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        t = Tape()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
            t.matmul(t.const(np.zeros((2, 3))), t.const(np.zeros((2, 4))))

    def test_backward_rule(self):
        # dA = dC B^T and dB = A^T dC with dC = ones
        a = Tensor(rand((3, 2), seed=1), requires_grad=True)
        b = Tensor(rand((2, 4), seed=2), requires_grad=True)
        t = Tape()
        t.backward(t.sum(t.matmul(a, b)))
        ones = np.ones((3, 4))
        np.testing.assert_allclose(a.grad, ones @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ ones)


class TestSoftmaxRows:
    def test_uniform(self):
        t = Tape()
        out = t.softmax_rows(t.const([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_closed_form(self):
        t = Tape()
        out = t.softmax_rows(t.const([[0.0, math.log(2.0)]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_stabilized_against_overflow(self):
        t = Tape()
        out = t.softmax_rows(t.const([[1000.0, 0.0]]))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-300)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (4, 5), elements=st.floats(-30, 30)),
        st.floats(-20, 20),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, x, shift):
        t = Tape()
        y = t.softmax_rows(t.const(x))
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, atol=1e-12)
        y_shifted = t.softmax_rows(t.const(x + shift))
        np.testing.assert_allclose(y.data, y_shifted.data, atol=1e-12)


class TestLayernorm:
    def gb(self, d, gain=1.0, bias=0.0):
        return Tensor(np.full(d, gain)), Tensor(np.full(d, bias))

    def test_constant_row_is_zeroed(self):
        t = Tape()
        g, b = self.gb(4)
        out = t.layernorm(t.const([[7.0, 7.0, 7.0, 7.0]]), g, b)
        np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-12)

    def test_two_point_closed_form(self):
        # var([1,-1]) = 1, so output is [1,-1] / sqrt(1 + eps)
        t = Tape()
        g, b = self.gb(2)
        out = t.layernorm(t.const([[1.0, -1.0]]), g, b)
        expected = np.array([[1.0, -1.0]]) / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.data, expected, atol=1e-15)

    def test_zero_gain_broadcasts_bias(self):
        t = Tape()
        g, b = self.gb(3, gain=0.0, bias=2.5)
        out = t.layernorm(t.const(rand((4, 3))), g, b)
        np.testing.assert_array_equal(out.data, np.full((4, 3), 2.5))


class TestL2NormalizeRows:
    def test_closed_form(self):
        t = Tape()
        out = t.l2_normalize_rows(t.const([[3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_idempotent_on_unit_rows(self):
        t = Tape()
        row = np.array([[1.0 / math.sqrt(2), -1.0 / math.sqrt(2)]])
        out = t.l2_normalize_rows(t.const(row))
        np.testing.assert_allclose(out.data, row, atol=1e-15)

    def test_zero_row_passes_through_with_flag(self):
        t = Tape()
        with pytest.warns(DegenerateRowWarning):
            out = t.l2_normalize_rows(t.const([[0.0, 0.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data[0], [0.0, 0.0])
        np.testing.assert_allclose(out.data[1], [0.6, 0.8])


class TestBackwardSemantics:
    def test_non_scalar_loss_rejected(self):
        t = Tape()
        a = Tensor(rand((2, 2)), requires_grad=True)
        out = t.scale(a, 2.0)
        with pytest.raises(ContractError):
            t.backward(out)

    def test_repeated_backward_accumulates(self):
        a = Tensor([[2.0]], requires_grad=True)
        t = Tape()
        loss = t.sum(t.mul(a, a))
        t.backward(loss)
        np.testing.assert_allclose(a.grad, [[4.0]])
        t.backward(loss)
        np.testing.assert_allclose(a.grad, [[8.0]])
        a.zero_grad()
        assert a.grad is None

    def test_independent_subgraphs_sum_linearly(self):
        a_data, b_data = rand((2, 3), seed=3), rand((3, 3), seed=4)

        def separate(data, seed_other):
            x = Tensor(data, requires_grad=True)
            t = Tape()
            t.backward(t.sum(t.gelu(x)))
            return x.grad

        ga = separate(a_data, 4)
        gb = separate(b_data, 3)

        a = Tensor(a_data, requires_grad=True)
        b = Tensor(b_data, requires_grad=True)
        t = Tape()
        joint = t.add(t.sum(t.gelu(a)), t.sum(t.gelu(b)))
        t.backward(joint)
        np.testing.assert_array_equal(a.grad, ga)
        np.testing.assert_array_equal(b.grad, gb)

    def test_gather_accumulates_duplicate_rows(self):
        a = Tensor(rand((3, 2)), requires_grad=True)
        t = Tape()
        t.backward(t.sum(t.row_gather(a, [1, 1, 0])))
        np.testing.assert_array_equal(a.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])

    def test_forward_outputs_finite(self):
        t = Tape()
        x = t.const(rand((6, 6), seed=9, lo=-3, hi=3))
        g, b = Tensor(np.ones(6)), Tensor(np.zeros(6))
        chain = t.matmul(t.gelu(t.layernorm(x, g, b)), t.transpose(x))
        out = t.logsumexp_rows(t.softmax_rows(chain))
        assert np.isfinite(out.data).all()


class TestGradcheck:
    def test_square_function(self):
        x = Tensor([[3.0]], requires_grad=True)

        def f(tape):
            return tape.sum(tape.mul(x, x))

        err = gradcheck(f, [x], eps=1e-5)
        assert err < 1e-8
        assert x.grad is not None
        np.testing.assert_allclose(x.grad, [[6.0]], atol=1e-12)

    def test_softmax_row_sums_have_zero_gradient(self):
        x = Tensor(rand((2, 4), seed=5), requires_grad=True)

        def f(tape):
            return tape.sum(tape.softmax_rows(x))

        gradcheck(f, [x])
        np.testing.assert_allclose(x.grad, np.zeros((2, 4)), atol=1e-12)

    def test_eps_must_be_positive(self):
        x = Tensor([[1.0]], requires_grad=True)
        with pytest.raises(ContractError):
            gradcheck(lambda tape: tape.sum(x), [x], eps=0.0)


# Every differentiable op, checked against central differences on random
# inputs in [-1, 1] at eps = 1e-5 (log gets positive inputs).
OP_CASES = {
    "add": lambda t, x, y: t.add(x, y),
    "mul": lambda t, x, y: t.mul(x, y),
    "scale": lambda t, x, y: t.add(t.scale(x, -1.7), y),
    "matmul": lambda t, x, y: t.matmul(x, t.transpose(y)),
    "transpose": lambda t, x, y: t.mul(t.transpose(x), t.transpose(y)),
    "gelu": lambda t, x, y: t.add(t.gelu(x), y),
    "exp": lambda t, x, y: t.add(t.exp(x), y),
    "mean": lambda t, x, y: t.add(t.mean(x), t.mean(y)),
    "softmax_rows": lambda t, x, y: t.mul(t.softmax_rows(x), y),
    "logsumexp_rows": lambda t, x, y: t.mean(
        t.mul(t.logsumexp_rows(x), t.logsumexp_rows(y))
    ),
    "row_gather": lambda t, x, y: t.mul(t.row_gather(x, [2, 0, 2, 1]), y),
    "row_concat": lambda t, x, y: t.gelu(t.row_concat([x, y])),
    "col_slice": lambda t, x, y: t.mul(t.col_slice(x, 1, 3), t.col_slice(y, 0, 2)),
    "col_concat": lambda t, x, y: t.gelu(t.col_concat([x, t.transpose(y)])),
    "l2_normalize_rows": lambda t, x, y: t.mul(t.l2_normalize_rows(x), y),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradcheck(name):
    build = OP_CASES[name]
    rows = 4 if name == "row_gather" else 3
    x = Tensor(rand((3, 3) if name != "row_gather" else (3, 3), seed=11), requires_grad=True)
    y = Tensor(rand((rows, 3), seed=12), requires_grad=True)

    def f(tape):
        out = build(tape, x, y)
        return out if out.data.ndim == 0 else tape.sum(out)

    assert gradcheck(f, [x, y], eps=1e-5) < 1e-4


def test_log_gradcheck_on_positive_inputs():
    x = Tensor(rand((3, 3), seed=13, lo=0.2, hi=1.2), requires_grad=True)

    def f(tape):
        return tape.sum(tape.log(x))

    assert gradcheck(f, [x], eps=1e-6) < 1e-4


def test_log_rejects_non_positive():
    t = Tape()
    with pytest.raises(InputError):
        t.log(t.const([[1.0, -0.5]]))


def test_layernorm_gradcheck():
    x = Tensor(rand((4, 5), seed=14), requires_grad=True)
    gain = Tensor(rand(5, seed=15, lo=0.5, hi=1.5), requires_grad=True)
    bias = Tensor(rand(5, seed=16), requires_grad=True)

    def f(tape):
        return tape.sum(tape.gelu(tape.layernorm(x, gain, bias)))

    assert gradcheck(f, [x, gain, bias], eps=1e-5) < 1e-4


def test_add_rowvec_gradcheck():
    x = Tensor(rand((4, 3), seed=17), requires_grad=True)
    v = Tensor(rand(3, seed=18), requires_grad=True)

    def f(tape):
        return tape.sum(tape.gelu(tape.add_rowvec(x, v)))

    assert gradcheck(f, [x, v], eps=1e-5) < 1e-4
