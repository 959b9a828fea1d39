import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference
from pnet.core import AdamState, adam_step, softmax_cross_entropy
from pnet.errors import ShapeError


def test_uniform_logits_give_ln2():
    loss, _ = softmax_cross_entropy(np.zeros((2, 2, 3, 3), np.float32), np.zeros((2, 3, 3), np.int64))
    assert loss == pytest.approx(math.log(2), abs=1e-7)


def test_saturated_margin():
    logits = np.zeros((1, 2, 2, 2), np.float32)
    logits[:, 1] = 20.0
    loss, _ = softmax_cross_entropy(logits, np.ones((1, 2, 2), np.int64))
    assert loss < 1e-8


def test_gradient_finite_differences(rng):
    logits = rng.standard_normal((1, 2, 2, 2))
    target = rng.integers(0, 2, (1, 2, 2))
    _, grad = softmax_cross_entropy(logits, target)
    num = finite_difference(lambda: softmax_cross_entropy(logits, target)[0], logits, eps=1e-5)
    np.testing.assert_allclose(grad.reshape(-1), num, atol=1e-4)


def test_target_out_of_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((1, 2, 1, 1)), np.full((1, 1, 1), 2))
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((1, 2, 1, 1)), np.zeros((1, 2, 1), np.int64))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_loss_invariant_to_per_pixel_shift(seed, shift):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((1, 3, 4, 4))
    target = rng.integers(0, 3, (1, 4, 4))
    offsets = shift * rng.random((1, 1, 4, 4))
    base, _ = softmax_cross_entropy(logits, target)
    moved, _ = softmax_cross_entropy(logits + offsets, target)
    assert moved == pytest.approx(base, abs=1e-5)


def test_adam_zero_gradient_is_noop(rng):
    params = {"w": rng.standard_normal((3, 3)).astype(np.float32)}
    before = params["w"].copy()
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.zeros((3, 3), np.float32)}, state, lr=1e-4)
    np.testing.assert_array_equal(params["w"], before)
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    params = {"p": np.array([0.5])}
    state = AdamState.zeros_like(params)
    adam_step(params, {"p": np.array([1.0])}, state, lr=1e-4)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert params["p"][0] == pytest.approx(0.5 - 1e-4 / (1 + 1e-8), abs=1e-15)


def test_adam_second_moment_grows():
    params = {"p": np.array([0.0])}
    state = AdamState.zeros_like(params)
    adam_step(params, {"p": np.array([0.3])}, state)
    v1 = state.v["p"].copy()
    adam_step(params, {"p": np.array([0.3])}, state)
    assert state.v["p"][0] > v1[0] >= 0
    assert state.t == 2


def test_adam_shape_mismatch():
    params = {"p": np.zeros(3)}
    with pytest.raises(ShapeError):
        adam_step(params, {"p": np.zeros(4)}, AdamState.zeros_like(params))
