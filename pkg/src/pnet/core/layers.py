"""Non-convolution kernels: pooling, upsampling, batchnorm, dropout and
the elementwise glue (relu / add / concat).

Every forward returns what its backward needs; there is no tape.
"""
from dataclasses import dataclass, field

import numpy as np

from pnet.core.tensor import ACCUM_DTYPE, check_tensor4, require_same_shape
from pnet.errors import ShapeError

TRAIN = "train"
EVAL = "eval"


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


# -- max pooling -----------------------------------------------------------


def maxpool2d_forward(x: np.ndarray):
    """2x2 / stride-2 max pooling.

    Odd sizes are padded with -inf on the bottom/right, so the output is
    ``ceil(h/2) x ceil(w/2)``. Returns ``(y, argmax)`` where ``argmax`` holds
    the winning position (0..3, row-major) inside each window; ties go to the
    lowest index.
    """
    check_tensor4(x, "x")
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    oh, ow = (h + ph) // 2, (w + pw) // 2
    windows = x.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    argmax = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), argmax.astype(np.int8)


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    oh, ow = argmax.shape[2:]
    if grad_out.shape != (n, c, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {(n, c, oh, ow)}", dim="grad_out")
    windows = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
    np.put_along_axis(windows, argmax[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    full = windows.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
    return np.ascontiguousarray(full[:, :, :h, :w])


# -- bilinear upsampling ----------------------------------------------------


def interpolation_matrix(size: int, factor: int) -> np.ndarray:
    """Row-stochastic (size*factor, size) matrix for half-pixel bilinear sampling.

    Source coordinate of output ``i`` is ``(i + 0.5) / factor - 0.5``, clamped
    to ``[0, size - 1]`` (align-corners off).
    """
    out = size * factor
    src = (np.arange(out, dtype=ACCUM_DTYPE) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    m = np.zeros((out, size), dtype=ACCUM_DTYPE)
    rows = np.arange(out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _check_factor(factor: int) -> None:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")


def bilinear_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    check_tensor4(x, "x")
    _check_factor(factor)
    if factor == 1:
        return x.copy()
    mh = interpolation_matrix(x.shape[2], factor)
    mw = interpolation_matrix(x.shape[3], factor)
    y = np.einsum("ih,nchw,jw->ncij", mh, x.astype(ACCUM_DTYPE), mw, optimize=True)
    return y.astype(x.dtype)


def bilinear_upsample_backward(grad_out: np.ndarray, factor: int) -> np.ndarray:
    """Transpose of :func:`bilinear_upsample`."""
    check_tensor4(grad_out, "grad_out")
    _check_factor(factor)
    if factor == 1:
        return grad_out.copy()
    h, w = grad_out.shape[2] // factor, grad_out.shape[3] // factor
    if h * factor != grad_out.shape[2] or w * factor != grad_out.shape[3]:
        raise ShapeError(f"grad_out spatial size {grad_out.shape[2:]} not divisible by {factor}", dim="height")
    mh = interpolation_matrix(h, factor)
    mw = interpolation_matrix(w, factor)
    g = np.einsum("ih,ncij,jw->nchw", mh, grad_out.astype(ACCUM_DTYPE), mw, optimize=True)
    return g.astype(grad_out.dtype)


# -- batch normalization ----------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    ``gamma``/``beta`` are learned; the running stats are updated in place
    during train-mode forwards with ``running = (1 - momentum) * running +
    momentum * batch`` (unbiased batch variance).
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    mode: str
    dtype: np.dtype = field(default=np.dtype(np.float32))


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: str = TRAIN):
    check_tensor4(x, "x")
    _check_mode(mode)
    if x.shape[1] != state.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, batchnorm has {state.channels}", dim="channels")
    x64 = x.astype(ACCUM_DTYPE)
    if mode == TRAIN:
        mean = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / max(count - 1, 1)
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean.astype(ACCUM_DTYPE)
        var = state.running_var.astype(ACCUM_DTYPE)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x64 - mean[None, :, None, None]) * inv_std[None, :, None, None]
    gamma = state.gamma.astype(ACCUM_DTYPE)
    y = xhat * gamma[None, :, None, None] + state.beta.astype(ACCUM_DTYPE)[None, :, None, None]
    return y.astype(x.dtype), BatchNormCache(xhat, inv_std, gamma, mode, x.dtype)


def batchnorm_backward(cache: BatchNormCache, grad_out: np.ndarray):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    g = grad_out.astype(ACCUM_DTYPE)
    xhat = cache.xhat
    grad_beta = g.sum(axis=(0, 2, 3))
    grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
    scale = (cache.gamma * cache.inv_std)[None, :, None, None]
    if cache.mode == EVAL:
        grad_x = g * scale
    else:
        count = g.shape[0] * g.shape[2] * g.shape[3]
        grad_x = scale * (
            g - grad_beta[None, :, None, None] / count - xhat * grad_gamma[None, :, None, None] / count
        )
    dt = cache.dtype
    return grad_x.astype(dt), grad_gamma.astype(dt), grad_beta.astype(dt)


# -- elementwise -------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """``y`` may be either the relu input or its output; only its sign is used."""
    return grad_out * (y > 0)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    require_same_shape(a, b, "add")
    return a + b


def add_backward(grad_out: np.ndarray):
    return grad_out, grad_out


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack ``a`` then ``b`` along the channel axis."""
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    for axis, dim in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[axis] != b.shape[axis]:
            raise ShapeError(f"concat: {dim} mismatch {a.shape} vs {b.shape}", dim=dim)
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(grad_out: np.ndarray, first_channels: int):
    return grad_out[:, :first_channels], grad_out[:, first_channels:]


# -- dropout -----------------------------------------------------------------


def dropout_forward(x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None for identity."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == EVAL or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return grad_out
    return grad_out * mask
