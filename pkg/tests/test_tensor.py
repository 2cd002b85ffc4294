import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from delicate import tensor as T
from delicate.tensor import DimensionError, NonFiniteError, Tensor


def leaf(x, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


finite = st.floats(-20, 20, allow_nan=False, width=64)


def test_gelu_zero():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0


def test_gelu_matches_tanh_formula():
    x = np.linspace(-4, 4, 17)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, rtol=1e-12, atol=1e-15)


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros((1, 3)))).data, [[1 / 3] * 3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=finite))
def test_softmax_rows_sum_to_one(x):
    p = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert (p >= 0).all()


def test_softmax_shift_stable():
    p = T.softmax(Tensor(np.array([[1000.0, 1001.0, 1002.0]]))).data
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p, T.softmax(Tensor(np.array([[0.0, 1.0, 2.0]]))).data)


def test_layernorm_row_stats():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(3.0, 5.0, size=(6, 32)))
    y = T.layernorm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-9)


def test_uniform_logits_cross_entropy_is_log_v():
    v = 9
    loss = T.masked_cross_entropy(Tensor(np.zeros((2, 3, v))), np.zeros((2, 3), int), np.ones((2, 3), bool))
    assert loss.item() == pytest.approx(math.log(v), rel=1e-12)


def test_two_class_cross_entropy_oracle():
    # -log(e^10 / (e^10 + e^-10)) = log1p(e^-20)
    loss = T.masked_cross_entropy(Tensor(np.array([[[10.0, -10.0]]])), np.array([[0]]), np.array([[True]]))
    assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert loss.item() == pytest.approx(2.06e-9, rel=1e-2)


def test_cross_entropy_ignores_unmasked_positions():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 4, 5))
    targets = rng.integers(0, 5, size=(2, 4))
    mask = np.array([[True, False, True, False], [False, False, True, True]])
    base = T.masked_cross_entropy(Tensor(logits), targets, mask).item()
    logits2 = logits.copy()
    logits2[~mask] += rng.normal(size=(int((~mask).sum()), 5)) * 10
    assert T.masked_cross_entropy(Tensor(logits2), targets, mask).item() == base


def test_cross_entropy_empty_mask_raises():
    with pytest.raises(ValueError):
        T.masked_cross_entropy(Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2), int), np.zeros((1, 2), bool))


def test_mse_self_is_zero():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert T.mse(x, x).item() == 0.0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(3, 2\)"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_backward_square():
    x = leaf([3.0])
    T.backward(T.sum(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [6.0])


def test_tied_use_sums_gradients():
    w = leaf([1.5])
    T.backward(T.sum(T.add(w, w)))
    np.testing.assert_array_equal(w.grad, [2.0])


def test_backward_twice_doubles():
    rng = np.random.default_rng(3)
    w = leaf(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))

    def loss():
        return T.sum(T.tanh(T.matmul(x, w)))

    T.backward(loss())
    once = w.grad.copy()
    T.backward(loss())
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_non_scalar_raises():
    with pytest.raises(DimensionError):
        T.backward(T.tanh(leaf([1.0, 2.0])))


def test_dropout_identity_without_rng():
    x = Tensor(np.ones((3, 4)))
    assert T.dropout(x, 0.5, None) is x or np.array_equal(T.dropout(x, 0.5, None).data, x.data)


def test_dropout_scales_kept_units():
    x = Tensor(np.ones((200, 50)))
    y = T.dropout(x, 0.25, np.random.default_rng(0)).data
    kept = y != 0
    np.testing.assert_allclose(y[kept], 1 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02


def test_no_grad_records_nothing():
    w = leaf([1.0, 2.0])
    with T.no_grad():
        y = T.mul(w, w)
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_strict_finite_flags_overflow():
    x = Tensor(np.array([1e308]))
    with T.strict_finite(), pytest.raises(NonFiniteError):
        T.scale(x, 10.0)


def test_embedding_scatter_add():
    table = leaf(np.zeros((4, 2)))
    T.backward(T.sum(T.embedding(table, np.array([[1, 1, 3]]))))
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(0.1, 50))
def test_softmax_temperature_keeps_argmax(z, temp):
    top2 = np.sort(z, axis=-1)[:, -2:]
    assume(((top2[:, 1] - top2[:, 0]) / temp > 1e-9).all())
    p = T.softmax(T.scale(Tensor(z), 1.0 / temp)).data
    np.testing.assert_array_equal(np.argmax(p, axis=-1), np.argmax(z, axis=-1))


def test_integer_input_promotes_to_default_float():
    assert Tensor([1, 2]).dtype == T.DEFAULT_DTYPE == np.float32
