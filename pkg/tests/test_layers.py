import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bilinear_reference, finite_difference, maxpool_reference
from pnet.core import (
    EVAL,
    TRAIN,
    BatchNormState,
    add,
    batchnorm_backward,
    batchnorm_forward,
    bilinear_upsample,
    bilinear_upsample_backward,
    concat_channels,
    concat_channels_backward,
    dropout_backward,
    dropout_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu,
    relu_backward,
)
from pnet.errors import ShapeError

# -- maxpool --


def test_maxpool_single_window():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
    y, arg = maxpool2d_forward(x)
    assert y.shape == (1, 1, 1, 1) and y[0, 0, 0, 0] == 4.0
    g = maxpool2d_backward(np.ones_like(y), arg, x.shape)
    np.testing.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])


def test_maxpool_constant_ties_go_to_first():
    x = np.full((1, 2, 4, 4), 3.0, np.float32)
    y, arg = maxpool2d_forward(x)
    assert np.all(y == 3.0)
    g = maxpool2d_backward(np.ones_like(y), arg, x.shape)
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1
    np.testing.assert_array_equal(g[0, 0], expected)


@pytest.mark.parametrize("shape", [(1, 1, 6, 6), (2, 3, 5, 7), (1, 1, 1, 3)])
def test_maxpool_matches_window_scan(shape, rng):
    x = rng.standard_normal(shape).astype(np.float32)
    y, _ = maxpool2d_forward(x)
    np.testing.assert_array_equal(y, maxpool_reference(x))


def test_maxpool_backward_finite_differences(rng):
    x = rng.permutation(36).reshape(1, 1, 6, 6).astype(np.float64)  # distinct values, no ties
    r = rng.standard_normal((1, 1, 3, 3))
    y, arg = maxpool2d_forward(x)
    g = maxpool2d_backward(r, arg, x.shape)
    num = finite_difference(lambda: float((maxpool2d_forward(x)[0] * r).sum()), x, eps=1e-3)
    np.testing.assert_allclose(g.reshape(-1), num, rtol=1e-6, atol=1e-9)


# -- bilinear --


def test_upsample_constant():
    x = np.full((1, 2, 3, 4), 2.5, np.float32)
    for f in (2, 8):
        y = bilinear_upsample(x, f)
        assert y.shape == (1, 2, 3 * f, 4 * f)
        np.testing.assert_allclose(y, 2.5, rtol=0, atol=1e-6)


def test_upsample_single_pixel():
    y = bilinear_upsample(np.full((1, 1, 1, 1), 7.0, np.float32), 2)
    np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 7.0))


def test_upsample_half_pixel_row():
    x = np.array([[[[0.0, 1.0], [0.0, 1.0]]]], np.float32)
    y = bilinear_upsample(x, 2)
    for row in y[0, 0]:
        np.testing.assert_allclose(row, [0, 0.25, 0.75, 1], atol=1e-7)


@pytest.mark.parametrize("factor", [2, 3, 8])
def test_upsample_matches_pointwise_formula(factor, rng):
    x = rng.standard_normal((1, 2, 3, 5))
    np.testing.assert_allclose(bilinear_upsample(x, factor), bilinear_reference(x, factor), atol=1e-12)


@pytest.mark.parametrize("factor", [2, 8])
def test_upsample_backward_is_transpose(factor, rng):
    x = rng.standard_normal((1, 2, 3, 2))
    r = rng.standard_normal((1, 2, 3 * factor, 2 * factor))
    g = bilinear_upsample_backward(r, factor)
    num = finite_difference(lambda: float((bilinear_upsample(x, factor) * r).sum()), x, eps=1e-3)
    np.testing.assert_allclose(g.reshape(-1), num, rtol=1e-5, atol=1e-9)
    # <U x, r> == <x, U^T r>
    assert float((bilinear_upsample(x, factor) * r).sum()) == pytest.approx(float((x * g).sum()), rel=1e-12)


def test_upsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        bilinear_upsample(np.zeros((1, 1, 2, 2), np.float32), 0)


# -- batchnorm --


def test_batchnorm_standardized_input_passes_through(rng):
    x = rng.standard_normal((4, 3, 8, 8))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    y, _ = batchnorm_forward(x, BatchNormState.fresh(3, np.float64), TRAIN)
    np.testing.assert_allclose(y, x, atol=1e-4)


def test_batchnorm_constant_channel_gives_shift():
    state = BatchNormState.fresh(2)
    state.beta[...] = [0.5, -1.5]
    x = np.full((2, 2, 3, 3), 4.0, np.float32)
    y, _ = batchnorm_forward(x, state, TRAIN)
    np.testing.assert_allclose(y[:, 0], 0.5)
    np.testing.assert_allclose(y[:, 1], -1.5)


def test_batchnorm_eval_before_training_uses_init_stats(rng):
    x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    y, _ = batchnorm_forward(x, BatchNormState.fresh(2), EVAL)
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-6)


def test_batchnorm_running_stats_update(rng):
    state = BatchNormState.fresh(1, np.float64)
    x = rng.standard_normal((2, 1, 4, 4)) * 3 + 2
    batchnorm_forward(x, state, TRAIN)
    assert state.running_mean[0] == pytest.approx(0.1 * x.mean())
    assert state.running_var[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        batchnorm_forward(np.zeros((1, 3, 2, 2), np.float32), BatchNormState.fresh(2), TRAIN)


@pytest.mark.parametrize("mode", [TRAIN, EVAL])
def test_batchnorm_backward_finite_differences(mode, rng):
    x = rng.standard_normal((2, 3, 4, 5))
    state = BatchNormState.fresh(3, np.float64)
    state.gamma[...] = rng.uniform(0.5, 1.5, 3)
    state.beta[...] = rng.standard_normal(3)
    state.running_mean[...] = rng.standard_normal(3)
    state.running_var[...] = rng.uniform(0.5, 2, 3)
    r = rng.standard_normal(x.shape)
    frozen = (state.running_mean.copy(), state.running_var.copy())

    def loss():
        state.running_mean[...], state.running_var[...] = frozen
        return float((batchnorm_forward(x, state, mode)[0] * r).sum())

    loss()
    _, cache = batchnorm_forward(x, state, mode)
    gx, gg, gb = batchnorm_backward(cache, r)
    for arr, grad in ((x, gx), (state.gamma, gg), (state.beta, gb)):
        num = finite_difference(loss, arr, eps=1e-5)
        np.testing.assert_allclose(grad.reshape(-1), num, rtol=1e-3, atol=1e-7)


# -- elementwise --


def test_relu_values():
    np.testing.assert_array_equal(relu(np.array([-1.0, 2.0])), [0.0, 2.0])
    np.testing.assert_array_equal(relu_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0])), [0.0, 5.0])


def test_add_zero_and_mismatch(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    np.testing.assert_array_equal(add(x, np.zeros_like(x)), x)
    with pytest.raises(ShapeError):
        add(x, np.zeros((1, 2, 3, 4)))


def test_concat_order_and_backward():
    a = np.arange(2, dtype=np.float32).reshape(1, 2, 1, 1)
    b = np.arange(10, 13, dtype=np.float32).reshape(1, 3, 1, 1)
    y = concat_channels(a, b)
    assert y.shape == (1, 5, 1, 1)
    np.testing.assert_array_equal(y.reshape(-1), [0, 1, 10, 11, 12])
    ga, gb = concat_channels_backward(y, 2)
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gb, b)
    with pytest.raises(ShapeError) as err:
        concat_channels(a, np.zeros((1, 3, 2, 1), np.float32))
    assert err.value.dim == "height"


# -- dropout --


def test_dropout_identities(rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    y, mask = dropout_forward(x, 0.0, TRAIN, rng)
    assert y is x and mask is None
    y, mask = dropout_forward(x, 0.3, EVAL, None)
    assert y is x and mask is None
    np.testing.assert_array_equal(dropout_backward(x, None), x)


def test_dropout_preserves_mean():
    x = np.ones((1, 1, 1000, 1000), np.float32)
    y, mask = dropout_forward(x, 0.3, TRAIN, np.random.default_rng(7))
    assert 0.99 <= y.mean(dtype=np.float64) <= 1.01
    assert set(np.unique(y).tolist()) <= {0.0, np.float32(1 / 0.7)}
    np.testing.assert_array_equal(dropout_backward(x, mask), y)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        dropout_forward(np.ones((1, 1, 1, 1), np.float32), 1.0, TRAIN, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.0, 0.9), seed=st.integers(0, 2**32 - 1))
def test_dropout_eval_is_exact_identity(rate, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, 3, 3)).astype(np.float32)
    y, _ = dropout_forward(x, rate, EVAL, None)
    np.testing.assert_array_equal(y, x)
