"""Autodiff core: forward values, tape semantics, gradients, grad_check."""

import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmqa.errors import ShapeError, ValidationError
from mmqa.tensor import (
    Gradients,
    Tape,
    Tensor,
    add,
    add_row,
    backward,
    concat_cols,
    concat_rows,
    cross_entropy,
    elementwise,
    grad_check,
    matmul,
    max_pool_rows,
    mean_rows,
    mul,
    one_minus,
    relu,
    scale,
    sigmoid,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    tanh,
    transpose,
    zeros,
)

matrices = arrays(np.float64, (3, 4),
                  elements=st.floats(-10, 10, allow_nan=False, width=64))


def T(data):
    return Tensor(np.asarray(data, dtype=np.float64))


class TestTensorBasics:
    def test_rank_3_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2)))

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            Tensor([1.0, np.nan])
        with pytest.raises(ValidationError):
            Tensor([[np.inf]])

    def test_float64_everywhere(self):
        assert Tensor([[1, 2]]).data.dtype == np.float64

    def test_item_requires_scalar(self):
        assert T([3.5]).item() == 3.5
        with pytest.raises(ShapeError):
            T([[1.0, 2.0]]).item()


class TestForwardValues:
    def test_matmul_identity(self):
        out = matmul(T([[1, 2], [3, 4]]), T(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_matmul_hand_case(self):
        out = matmul(T([[1, 2], [3, 4]]), T([[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17], [39]])

    def test_matmul_zero_annihilates(self):
        out = matmul(zeros(2, 3), T(np.arange(6).reshape(3, 2)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(zeros(2, 3), zeros(2, 3))

    def test_relu_sign_split(self):
        np.testing.assert_array_equal(relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_sigmoid_at_zero(self):
        assert sigmoid(T([0.0])).data[0] == 0.5

    def test_sigmoid_stable_on_tails(self):
        out = sigmoid(T([-745.0, 745.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] < 1e-300 and out[1] == 1.0

    def test_mul_hand_case(self):
        np.testing.assert_array_equal(
            mul(T([1.0, 2, 3]), T([4.0, 0, -1])).data, [4, 0, -3]
        )

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(softmax_rows(T([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_softmax_hand_case(self):
        out = softmax_rows(T([[0.0, np.log(3.0)]])).data
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)

    def test_softmax_no_overflow(self):
        out = softmax_rows(T([[1000.0, 1000.0]])).data
        np.testing.assert_allclose(out, [[0.5, 0.5]])

    def test_mean_rows_cases(self):
        np.testing.assert_array_equal(mean_rows(T([[2.0, 4.0]])).data, [[2, 4]])
        np.testing.assert_array_equal(
            mean_rows(T([[1.0, 1], [3, 5]])).data, [[2, 3]]
        )
        np.testing.assert_array_equal(mean_rows(zeros(3, 2)).data, np.zeros((1, 2)))

    def test_max_pool_cases(self):
        np.testing.assert_array_equal(max_pool_rows(T([[1.0, 4], [3, 2]])).data, [[3, 4]])
        np.testing.assert_array_equal(max_pool_rows(T([[7.0, 8]])).data, [[7, 8]])

    def test_max_pool_tie_value_and_gradient_routing(self):
        m = T([[2.0, 0.0], [2.0, 1.0]])
        with Tape() as tape:
            tape.watch(m)
            out = max_pool_rows(m)
            np.testing.assert_array_equal(out.data, [[2, 1]])
            g = tape.backward(sum_all(out)).wrt(m)
        np.testing.assert_array_equal(g, [[1, 0], [0, 1]])

    def test_cross_entropy_near_perfect(self):
        logits = T(np.eye(3) * 50.0)
        assert cross_entropy(logits, [0, 1, 2]).item() < 1e-6

    def test_cross_entropy_uniform_is_log_vocab(self):
        assert cross_entropy(zeros(1, 4), [2]).item() == pytest.approx(np.log(4.0))

    def test_cross_entropy_averages_steps(self):
        logits = T([[2.0, 0.0], [0.0, 3.0]])
        single0 = cross_entropy(T([[2.0, 0.0]]), [0]).item()
        single1 = cross_entropy(T([[0.0, 3.0]]), [1]).item()
        both = cross_entropy(logits, [0, 1]).item()
        assert both == pytest.approx((single0 + single1) / 2.0)

    def test_cross_entropy_bad_target(self):
        with pytest.raises(ValidationError):
            cross_entropy(zeros(1, 4), [4])

    def test_take_rows_gather_and_bounds(self):
        m = T(np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(take_rows(m, [2, 0, 2]).data,
                                      [[4, 5], [0, 1], [4, 5]])
        with pytest.raises(ValidationError):
            take_rows(m, [3])

    def test_concat_cols_slices_recover_inputs(self):
        a, b = T([[1.0, 2]]), T([[3.0, 4, 5]])
        out = concat_cols(a, b)
        np.testing.assert_array_equal(out.data[:, :2], a.data)
        np.testing.assert_array_equal(out.data[:, 2:], b.data)

    def test_transpose_roundtrip(self):
        m = T(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(transpose(transpose(m)).data, m.data)

    def test_elementwise_dispatch(self):
        np.testing.assert_array_equal(elementwise("relu", T([-2.0, 2.0])).data, [0, 2])
        with pytest.raises(ValidationError, match="unknown"):
            elementwise("cosh", T([1.0]))


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(matrices)
    def test_softmax_rows_sum_to_one(self, data):
        rows = softmax_rows(Tensor(data)).data.sum(axis=1)
        np.testing.assert_allclose(rows, 1.0, atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(matrices, st.floats(-5, 5, allow_nan=False))
    def test_softmax_shift_invariance(self, data, c):
        base = softmax_rows(Tensor(data)).data
        shifted = softmax_rows(Tensor(data + c)).data
        np.testing.assert_allclose(base, shifted, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matmul_associative(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(3, 4)))
        c = Tensor(rng.normal(size=(4, 2)))
        left = matmul(matmul(a, b), c).data
        right = matmul(a, matmul(b, c)).data
        np.testing.assert_allclose(left, right, rtol=1e-8, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(matrices)
    def test_max_pool_dominates_mean(self, data):
        m = Tensor(data)
        assert np.all(max_pool_rows(m).data >= mean_rows(m).data - 1e-12)

    def test_tape_determinism(self):
        def run():
            x = T([[0.3, -1.2], [0.7, 2.2]])
            w = T([[1.5, -0.4], [0.2, 0.9]])
            with Tape() as tape:
                tape.watch(x)
                tape.watch(w)
                y = sum_all(tanh(matmul(relu(x), w)))
                grads = tape.backward(y)
                return y.data.copy(), grads.wrt(x).copy(), grads.wrt(w).copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


class TestTape:
    def test_sum_gradient_is_ones(self):
        x = T([[1.0, 2.0], [3.0, 4.0]])
        with Tape() as tape:
            tape.watch(x)
            g = tape.backward(sum_all(x)).wrt(x)
        np.testing.assert_array_equal(g, np.ones((2, 2)))

    def test_quadratic_gradient(self):
        x = T([1.0, 2.0])
        with Tape() as tape:
            tape.watch(x)
            g = tape.backward(sum_all(mul(x, x))).wrt(x)
        np.testing.assert_array_equal(g, [2.0, 4.0])

    def test_branch_and_merge_accumulates(self):
        # y = sum(x*x + 3x) so dy/dx = 2x + 3
        x = T([1.0, -2.0])
        with Tape() as tape:
            tape.watch(x)
            y = sum_all(add(mul(x, x), scale(x, 3.0)))
            g = tape.backward(y).wrt(x)
        np.testing.assert_allclose(g, [5.0, -1.0])

    def test_unused_leaf_gets_zeros(self):
        x, y = T([1.0]), T([2.0])
        with Tape() as tape:
            tape.watch(x)
            tape.watch(y)
            g = tape.backward(sum_all(x))
        np.testing.assert_array_equal(g.wrt(y), [0.0])

    def test_loss_not_on_tape_rejected(self):
        loss = sum_all(T([1.0]))  # built with no tape active
        with Tape() as tape:
            with pytest.raises(ValidationError):
                tape.backward(loss)

    def test_wrt_foreign_tensor_rejected(self):
        x = T([1.0])
        with Tape() as tape:
            tape.watch(x)
            grads = tape.backward(sum_all(x))
        with pytest.raises(ValidationError):
            grads.wrt(T([1.0]))

    def test_non_scalar_loss_rejected(self):
        x = T([[1.0, 2.0]])
        with Tape() as tape:
            tape.watch(x)
            y = relu(x)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_functional_backward_alias(self):
        x = T([2.0])
        with Tape() as tape:
            tape.watch(x)
            grads = backward(tape, sum_all(mul(x, x)))
        np.testing.assert_array_equal(grads.wrt(x), [4.0])

    def test_nested_tapes_record_to_innermost(self):
        x = T([1.0, 1.0])
        with Tape() as outer:
            outer.watch(x)
            before = len(outer)
            with Tape() as inner:
                inner.watch(x)
                g_inner = inner.backward(sum_all(mul(x, x))).wrt(x)
            assert len(outer) == before  # inner work stayed off the outer tape
            g_outer = outer.backward(sum_all(x)).wrt(x)
        np.testing.assert_array_equal(g_inner, [2.0, 2.0])
        np.testing.assert_array_equal(g_outer, [1.0, 1.0])

    def test_tapes_are_thread_local(self):
        errors = []

        def worker():
            try:
                x = T([3.0])
                with Tape() as tape:
                    tape.watch(x)
                    g = tape.backward(sum_all(mul(x, x))).wrt(x)
                np.testing.assert_allclose(g, [6.0])
            except Exception as exc:  # noqa: BLE001 - collected for the assert
                errors.append(exc)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        x = T([1.0])
        with Tape() as tape:
            tape.watch(x)
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            g = tape.backward(sum_all(x)).wrt(x)
        assert not errors
        np.testing.assert_array_equal(g, [1.0])

    def test_no_recording_without_tape(self):
        y = relu(T([[1.0, -1.0]]))
        assert y.node is None


class TestGradCheck:
    def test_linear_function_is_exact(self):
        assert grad_check(sum_all, T([[1.0, -2.0], [0.5, 3.0]])) < 1e-10

    def test_sigmoid_chain(self):
        f = lambda x: sum_all(sigmoid(x))
        assert grad_check(f, T([0.3, -1.2])) < 1e-6

    def test_deep_composition(self):
        w = T(np.linspace(-0.5, 0.8, 12).reshape(3, 4))

        def f(x):
            h = tanh(matmul(x, w))
            return cross_entropy(add_row(h, T([[0.1, -0.2, 0.3, 0.0]])), [1, 3])

        assert grad_check(f, T([[0.4, -0.7, 0.2], [1.1, 0.3, -0.9]])) < 1e-7

    def test_one_minus_and_sub_path(self):
        b = T([[0.4, -0.6]])
        f = lambda x: sum_all(mul(one_minus(x), sub(x, b)))
        assert grad_check(f, T([[0.9, 0.1]])) < 1e-8

    def test_eps_range_enforced(self):
        x = T([1.0])
        with pytest.raises(ValidationError):
            grad_check(sum_all, x, eps=1e-7)
        with pytest.raises(ValidationError):
            grad_check(sum_all, x, eps=1e-2)

    def test_non_scalar_f_rejected(self):
        with pytest.raises(ShapeError):
            grad_check(lambda x: relu(x), T([[1.0, 2.0]]))

    def test_restores_input_after_perturbation(self):
        x = T([[0.25, -0.75]])
        snapshot = x.data.copy()
        grad_check(lambda t: sum_all(mul(t, t)), x)
        assert np.array_equal(x.data, snapshot)
