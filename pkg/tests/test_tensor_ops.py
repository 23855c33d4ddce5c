"""Forward values and adjoint rules of every tensor operation.

Expected values here are either computable in one's head (identity kernels,
2x2 means) or produced by an independent numpy expression inside the test.
Gradient correctness at scale lives in test_gradcheck; this file checks the
hand-sized cases and the error contracts.
"""

import numpy as np
import pytest

import lcanet.tensor as T
from lcanet.tensor import ContractError, NumericsError, Parameter, ShapeError, Tensor


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    out = T.matmul(t64([[1, 0], [0, 1]]), t64([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])


def test_matmul_dot():
    out = T.matmul(t64([[1, 2]]), t64([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_adjoints():
    a = t64([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = t64([[5.0, 6.0], [7.0, 8.0]], requires_grad=True)
    T.backward(T.tensor_sum(T.matmul(a, b)))
    # dA = g @ B^T and dB = A^T @ g with g = ones
    g = np.ones((2, 2))
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def test_conv2d_all_ones_sums_window():
    x = t64(np.ones((1, 1, 3, 3)))
    w = t64(np.ones((1, 1, 3, 3)))
    b = t64(np.zeros(1))
    out = T.conv2d(x, w, b, stride=1, pad=0)
    np.testing.assert_array_equal(out.data.reshape(1, 1), [[9.0]])


def test_conv2d_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = t64(rng.uniform(size=(2, 1, 5, 5)))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0  # centre tap only
    out = T.conv2d(x, t64(w), t64(np.zeros(1)), stride=1, pad=1)
    np.testing.assert_allclose(out.data, x.data)


def test_conv2d_output_shape_formula():
    x = t64(np.zeros((2, 3, 7, 9)))
    w = t64(np.zeros((4, 3, 3, 3)))
    out = T.conv2d(x, w, t64(np.zeros(4)), stride=2, pad=1)
    assert out.shape == (2, 4, 4, 5)  # floor((7+2-3)/2)+1, floor((9+2-3)/2)+1


def test_conv2d_kernel_too_large():
    x = t64(np.zeros((1, 1, 2, 2)))
    w = t64(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        T.conv2d(x, w, t64(np.zeros(1)), stride=1, pad=0)


def test_conv2d_matches_direct_loop():
    """Independent triple-loop cross-correlation oracle."""
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(2, 3, 5, 4))
    w = rng.uniform(-1, 1, size=(4, 3, 2, 3))
    b = rng.uniform(-1, 1, size=4)
    out = T.conv2d(t64(x), t64(w), t64(b), stride=1, pad=0).data

    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = (
                        x[n, :, i : i + 2, j : j + 3] * w[o]
                    ).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_avgpool_mean_of_four():
    x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = T.avgpool2d(x, 2, 2, stride=1)
    np.testing.assert_array_equal(out.data.reshape(1), [2.5])


def test_avgpool_row_kernel():
    x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = T.avgpool2d(x, 1, 2, stride=1)
    np.testing.assert_array_equal(out.data.reshape(2, 1), [[1.5], [3.5]])


def test_avgpool_1x1_identity_is_bit_exact():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(size=(2, 3, 4, 5)).astype(np.float32))
    out = T.avgpool2d(x, 1, 1, stride=1)
    assert out.data.tobytes() == x.data.tobytes()


def test_avgpool_adjoint_spreads_uniformly():
    x = t64(np.arange(16.0).reshape(1, 1, 4, 4), requires_grad=True)
    T.backward(T.tensor_sum(T.avgpool2d(x, 2, 2, stride=2)))
    np.testing.assert_allclose(x.grad, np.full((1, 1, 4, 4), 0.25))


def test_avgpool_kernel_exceeds_input():
    with pytest.raises(ShapeError):
        T.avgpool2d(t64(np.zeros((1, 1, 2, 2))), 3, 1, stride=1)


def test_maxpool_basic():
    x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = T.maxpool2d(x, 2, stride=2)
    np.testing.assert_array_equal(out.data.reshape(1), [4.0])


def test_maxpool_tie_break_first_index():
    x = t64(np.ones((1, 1, 2, 2)), requires_grad=True)
    out = T.maxpool2d(x, 2, stride=2)
    np.testing.assert_array_equal(out.data.reshape(1), [1.0])
    T.backward(T.tensor_sum(out))
    # whole gradient lands on the first window position, row-major
    np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_maxpool_overlapping_windows_accumulate():
    x = t64([[[[9.0, 1.0], [2.0, 3.0]]]], requires_grad=True)
    T.backward(T.tensor_sum(T.maxpool2d(x, 1, stride=1)))
    np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 2)))


# ---------------------------------------------------------------------------
# relu / log_softmax
# ---------------------------------------------------------------------------


def test_relu_values():
    out = T.relu(t64([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_relu_positive_passthrough():
    x = t64([0.5, 1.0, 99.0])
    np.testing.assert_array_equal(T.relu(x).data, x.data)


def test_relu_gradient_sides():
    x = t64([3.0, -3.0], requires_grad=True)
    T.backward(T.tensor_sum(T.relu(x)))
    np.testing.assert_array_equal(x.grad, [1.0, 0.0])


def test_log_softmax_uniform():
    out = T.log_softmax(t64([[0.0, 0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, np.full((1, 4), -np.log(4.0)), atol=1e-12)


def test_log_softmax_no_overflow():
    out = T.log_softmax(t64([[1000.0, 0.0]]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [[0.0, -1000.0]], atol=1e-12)


def test_log_softmax_rows_normalize_f64():
    rng = np.random.default_rng(3)
    x = t64(rng.uniform(-5, 5, size=(8, 11)))
    sums = np.exp(T.log_softmax(x).data).sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_log_softmax_rows_normalize_f32():
    rng = np.random.default_rng(4)
    x = Tensor(rng.uniform(-5, 5, size=(8, 11)).astype(np.float32))
    sums = np.exp(T.log_softmax(x).data).sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# backward contract
# ---------------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = t64([1.0, 2.0, 3.0], requires_grad=True)
    T.backward(T.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_half_square_norm_gives_theta():
    x = t64([1.0, -2.0, 0.5], requires_grad=True)
    T.backward(T.scale(T.tensor_sum(T.mul(x, x)), 0.5))
    np.testing.assert_allclose(x.grad, x.data)


def test_backward_rejects_non_scalar():
    x = t64([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.relu(x))


def test_backward_leaves_unreachable_grads_untouched():
    x = t64([1.0, 2.0], requires_grad=True)
    y = t64([3.0, 4.0], requires_grad=True)
    y.grad[...] = 7.0
    T.backward(T.tensor_sum(x))
    np.testing.assert_array_equal(y.grad, [7.0, 7.0])


def test_backward_accumulates_across_calls():
    x = t64([1.0, 1.0], requires_grad=True)
    T.backward(T.tensor_sum(x))
    T.backward(T.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_tape_is_linear():
    """grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2)."""
    rng = np.random.default_rng(5)
    data = rng.uniform(-1, 1, size=(4, 3))

    def g1():
        x = t64(data, requires_grad=True)
        T.backward(T.tensor_sum(T.relu(x)))
        return x.grad

    def g2():
        x = t64(data, requires_grad=True)
        T.backward(T.tensor_sum(T.mul(x, x)))
        return x.grad

    a, b = 2.5, -1.25
    x = t64(data, requires_grad=True)
    combined = T.add(
        T.scale(T.tensor_sum(T.relu(x)), a), T.scale(T.tensor_sum(T.mul(x, x)), b)
    )
    T.backward(combined)
    np.testing.assert_allclose(x.grad, a * g1() + b * g2(), atol=1e-10)


def test_no_grad_suppresses_taping():
    x = t64([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        out = T.tensor_sum(x)
    assert out.node is None


# ---------------------------------------------------------------------------
# elementwise, bias add, shape ops
# ---------------------------------------------------------------------------


def test_bias_add_broadcast_and_adjoint():
    x = t64(np.zeros((2, 3)), requires_grad=True)
    b = t64([1.0, 2.0, 3.0], requires_grad=True)
    out = T.add(x, b)
    np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])
    T.backward(T.tensor_sum(out))
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])  # summed over batch
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(t64(np.zeros((2, 3))), t64(np.zeros((3, 2))))


def test_mixed_dtype_rejected():
    a = Tensor(np.zeros(2, dtype=np.float32))
    b = Tensor(np.zeros(2, dtype=np.float64))
    with pytest.raises(TypeError):
        T.add(a, b)


def test_operator_sugar():
    a = t64([2.0, 4.0])
    b = t64([1.0, 2.0])
    np.testing.assert_array_equal((a + b).data, [3.0, 6.0])
    np.testing.assert_array_equal((a - b).data, [1.0, 2.0])
    np.testing.assert_array_equal((a * b).data, [2.0, 8.0])
    np.testing.assert_array_equal((a / 2.0).data, [1.0, 2.0])
    np.testing.assert_array_equal((-a).data, [-2.0, -4.0])
    np.testing.assert_array_equal((t64([[1.0, 2.0]]) @ t64([[3.0], [4.0]])).data, [[11.0]])


def test_reshape_transpose_roundtrip():
    x = t64(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
    y = T.transpose(T.reshape(x, (6, 4)), (1, 0))
    assert y.shape == (4, 6)
    T.backward(T.tensor_sum(T.mul(y, y)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_concat_and_split_adjoint():
    a = t64(np.ones((2, 2)), requires_grad=True)
    b = t64(np.full((3, 2), 2.0), requires_grad=True)
    out = T.concat([a, b], axis=0)
    assert out.shape == (5, 2)
    T.backward(T.tensor_sum(T.mul(out, out)))
    np.testing.assert_allclose(a.grad, 2 * a.data)
    np.testing.assert_allclose(b.grad, 2 * b.data)


def test_mean_reduction_axis_and_full():
    x = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
    m = T.tensor_mean(x, axis=0)
    np.testing.assert_allclose(m.data, [1.5, 2.5, 3.5])
    full = T.tensor_mean(x)
    np.testing.assert_allclose(full.data, 2.5)
    T.backward(full)
    np.testing.assert_allclose(x.grad, np.full((2, 3), 1.0 / 6.0))


def test_scalar_reduction_has_0d_shape():
    # regression: reductions must yield true scalars, not shape-(1,) arrays
    out = T.tensor_sum(t64([1.0, 2.0]))
    assert out.shape == ()
    assert out.item() == 3.0


# ---------------------------------------------------------------------------
# debug finiteness checks
# ---------------------------------------------------------------------------


def test_debug_checks_flag_nan_production():
    x = t64([1e308])
    with np.errstate(over="ignore"):
        try:
            T.set_debug_checks(True)
            with pytest.raises(NumericsError):
                T.add(x, x)  # overflows to inf
        finally:
            T.set_debug_checks(False)
        out = T.add(x, x)  # silent when the flag is off
    assert np.isinf(out.data).all()


def test_parameter_carries_name_and_grad():
    p = Parameter("w", np.zeros((2, 2), dtype=np.float32))
    assert p.name == "w" and p.requires_grad
    assert p.grad.shape == (2, 2)
