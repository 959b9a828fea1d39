import itertools

import numpy as np
import pytest

from oracles import conv2d_reference, finite_difference
from pnet.core import ConvSpec, conv2d_backward, conv2d_forward
from pnet.errors import ShapeError


def test_ones_valid_conv():
    x = np.ones((1, 1, 5, 5), np.float32)
    w = np.ones((1, 1, 3, 3), np.float32)
    y = conv2d_forward(x, w, None, ConvSpec((3, 3), 1, 0, 1))
    assert y.shape == (1, 1, 3, 3)
    assert np.all(y == 9.0)


def test_ones_dilated_padded_conv():
    x = np.ones((1, 1, 5, 5), np.float32)
    w = np.ones((1, 1, 3, 3), np.float32)
    spec = ConvSpec((3, 3), stride=1, padding=2, dilation=2)
    y = conv2d_forward(x, w, None, spec)
    ref = conv2d_reference(x, w, None, 1, 2, 2)
    assert y.shape == (1, 1, 5, 5)
    np.testing.assert_array_equal(y, ref)
    assert y[0, 0, 2, 2] == 9.0
    assert y[0, 0, 0, 0] == 4.0


def test_strided_5x5_matches_oracle(rng):
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 5, 5)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    y = conv2d_forward(x, w, b, ConvSpec((5, 5), stride=2, padding=2))
    assert y.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(y, conv2d_reference(x, w, b, 2, 2, 1), rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("dilation", [1, 2, 3, 6, 8])
@pytest.mark.parametrize("size", [(1, 1), (3, 7), (8, 8), (14, 9)])
def test_same_spec_preserves_size(dilation, size):
    spec = ConvSpec.same(3, dilation)
    assert spec.padding == dilation
    assert spec.output_size(*size) == size


def test_channel_mismatch_names_dimension():
    with pytest.raises(ShapeError) as err:
        conv2d_forward(np.zeros((1, 2, 4, 4), np.float32), np.zeros((1, 3, 3, 3), np.float32), None, ConvSpec())
    assert err.value.dim == "in_channels"


def test_nonpositive_output_rejected():
    with pytest.raises(ShapeError) as err:
        conv2d_forward(np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 3, 3), np.float32), None, ConvSpec())
    assert err.value.dim == "height"


def test_backward_zero_grad_out(rng):
    x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    gx, gw, gb = conv2d_backward(x, w, ConvSpec.same(3, 2), np.zeros((1, 3, 6, 6), np.float32))
    assert not gx.any() and not gw.any() and not gb.any()


def test_backward_1x1_hand_chain_rule(rng):
    x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
    w = np.full((1, 1, 1, 1), 2.0, np.float32)
    gx, gw, gb = conv2d_backward(x, w, ConvSpec((1, 1)), np.ones((1, 1, 3, 3), np.float32))
    np.testing.assert_array_equal(gx, np.full_like(x, 2.0))
    assert gw[0, 0, 0, 0] == pytest.approx(x.sum(dtype=np.float64), rel=1e-6)
    assert gb[0] == 9.0


def test_backward_grad_out_shape_checked():
    x = np.zeros((1, 1, 5, 5), np.float32)
    w = np.zeros((1, 1, 3, 3), np.float32)
    with pytest.raises(ShapeError):
        conv2d_backward(x, w, ConvSpec(), np.zeros((1, 1, 5, 5), np.float32))


@pytest.mark.parametrize(
    "spec",
    [ConvSpec((3, 3), 1, 1, 1), ConvSpec((3, 3), 2, 2, 2), ConvSpec((5, 5), 2, 2, 1), ConvSpec((3, 3), 1, 6, 6), ConvSpec((1, 1))],
)
def test_backward_finite_differences(spec, rng):
    x = rng.standard_normal((2, 2, 7, 6))
    w = rng.standard_normal((3, 2, *spec.kernel))
    b = rng.standard_normal(3)
    oh, ow = spec.output_size(7, 6)
    r = rng.standard_normal((2, 3, oh, ow))
    gx, gw, gb = conv2d_backward(x, w, spec, r)

    def loss():
        return float((conv2d_forward(x, w, b, spec) * r).sum())

    # the map is linear in each argument, so the tight tolerance applies
    for arr, grad in ((x, gx), (w, gw), (b, gb)):
        num = finite_difference(loss, arr, eps=1e-3)
        np.testing.assert_allclose(grad.reshape(-1), num, rtol=1e-5, atol=1e-7)


def conv_grid():
    for n, c, h, w, k, stride, dil, pad in itertools.product(
        (1, 2), (1, 2), range(4, 10), range(4, 10), (1, 3, 5), (1, 2), (1, 2, 6), range(7)
    ):
        if h + 2 * pad - dil * (k - 1) - 1 < 0 or w + 2 * pad - dil * (k - 1) - 1 < 0:
            continue
        yield n, c, h, w, k, stride, dil, pad


def run_conv_grid(seed=0):
    """Compare against the loop oracle on every valid grid point; return (cases, worst rel err)."""
    rng = np.random.default_rng(seed)
    cases, worst = 0, 0.0
    for n, c, h, w, k, stride, dil, pad in conv_grid():
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        wt = rng.standard_normal((2, c, k, k)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        got = conv2d_forward(x, wt, b, ConvSpec((k, k), stride, pad, dil))
        ref = conv2d_reference(x, wt, b, stride, pad, dil)
        if got.shape != ref.shape:
            raise AssertionError(f"shape {got.shape} != {ref.shape} for {(n, c, h, w, k, stride, dil, pad)}")
        err = np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)
        worst = max(worst, float(err.max()))
        cases += 1
    return cases, worst


def test_exhaustive_grid_matches_oracle():
    cases, worst = run_conv_grid()
    assert cases > 10000
    assert worst < 1e-5
