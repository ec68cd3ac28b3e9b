import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knowfuse import diffmath as dm
from knowfuse.errors import DimensionError, NumericError
from knowfuse.gradcheck import check_gradients, check_primitives, check_random_compositions


def test_sigmoid_at_zero():
    out = dm.sigmoid(dm.constant([0.0]))
    assert out.value[0] == pytest.approx(0.5)


def test_softmax_symmetry():
    out = dm.softmax(dm.constant([1.3, 1.3]))
    np.testing.assert_allclose(out.value, [0.5, 0.5])


def test_sq_l2_norm_of_difference():
    d = dm.sub(dm.constant([1.0, 0.0]), dm.constant([0.0, 1.0]))
    assert float(dm.sq_l2_norm(d).value) == pytest.approx(2.0)


def test_backward_square():
    store = dm.ParameterStore()
    w = store.add("w", 3.0)
    loss = dm.mul(w, w)
    dm.backward(loss)
    assert float(w.grad) == pytest.approx(6.0)


def test_backward_sigmoid_at_zero():
    store = dm.ParameterStore()
    w = store.add("w", 0.0)
    dm.backward(dm.sigmoid(w))
    assert float(w.grad) == pytest.approx(0.25)


def test_backward_requires_scalar():
    store = dm.ParameterStore()
    w = store.add("w", [1.0, 2.0])
    with pytest.raises(DimensionError):
        dm.backward(dm.relu(w))


def test_backward_twice_identical():
    store = dm.ParameterStore()
    w = store.add("w", [[0.3, -0.7], [1.1, 0.2]])
    loss = dm.sq_l2_norm(dm.tanh(dm.mean_rows(w)))
    dm.backward(loss)
    first = np.array(w.grad)
    dm.backward(loss)
    np.testing.assert_array_equal(first, w.grad)


def test_shared_node_gradient_accumulates():
    store = dm.ParameterStore()
    w = store.add("w", 2.0)
    # loss = w*w + w -> dL/dw = 2w + 1
    loss = dm.add(dm.mul(w, w), w)
    dm.backward(loss)
    assert float(w.grad) == pytest.approx(5.0)


def test_nonfinite_input_rejected():
    with pytest.raises(NumericError):
        dm.constant([1.0, np.inf])


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        dm.add(dm.constant([1.0, 2.0]), dm.constant([1.0, 2.0, 3.0]))
    with pytest.raises(DimensionError):
        dm.matmul(dm.constant(np.ones((2, 3))), dm.constant(np.ones((2, 3))))


def test_bias_row_broadcast():
    m = dm.constant([[1.0, 2.0], [3.0, 4.0]])
    b = dm.constant([10.0, 20.0])
    np.testing.assert_allclose(dm.add(m, b).value, [[11.0, 22.0], [13.0, 24.0]])


def test_values_are_read_only():
    out = dm.relu(dm.constant([1.0, -1.0]))
    with pytest.raises(ValueError):
        out.value[0] = 5.0


def test_parameter_store_rejects_duplicates():
    store = dm.ParameterStore()
    store.add("w", 1.0)
    with pytest.raises(DimensionError):
        store.add("w", 2.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6))
def test_softmax_rows_sum_to_one(row):
    out = dm.softmax(dm.constant([row, row[::-1]]))
    np.testing.assert_allclose(out.value.sum(axis=-1), 1.0, atol=1e-12)


def test_softplus_matches_reference():
    x = np.array([-40.0, -2.0, 0.0, 2.0, 40.0])
    out = dm.softplus(dm.constant(x))
    np.testing.assert_allclose(out.value, np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0))


def test_logsumexp_stable():
    out = dm.logsumexp(dm.constant([1000.0, 1000.0]))
    assert float(out.value) == pytest.approx(1000.0 + np.log(2.0))


def test_all_primitives_pass_finite_differences():
    for result in check_primitives(instances=20):
        assert result.passed, f"{result.name}: {result.max_rel_err}"


def test_random_compositions_pass_finite_differences():
    result = check_random_compositions(count=20)
    assert result.passed, result.max_rel_err


def test_check_gradients_flags_wrong_vjp():
    # A deliberately broken op must be caught by the harness.
    def bad_square(x):
        value = x.value * x.value
        arr = np.ascontiguousarray(value)
        arr.setflags(write=False)
        return dm.Node("bad_square", (x,), arr, lambda g: (g * x.value,))  # missing 2x

    store = dm.ParameterStore()
    store.add("x", [1.5, -0.5])
    err = check_gradients(lambda s: dm.tsum(bad_square(s.get("x"))), store)
    assert err > 1e-2
