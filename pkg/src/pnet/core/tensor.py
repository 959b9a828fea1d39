"""Rank-4 tensor helpers.

Activations, weights and gradients are plain ``numpy.ndarray`` objects in
NCHW order. Storage is float32; kernels accumulate in float64 and cast the
result back to the input dtype, so the same kernels also run a full float64
path for gradient checking.
"""
import numpy as np

from pnet.errors import ShapeError

STORAGE_DTYPE = np.float32
ACCUM_DTYPE = np.float64

_DIM_NAMES = ("batch", "channels", "height", "width")


def check_tensor4(x: np.ndarray, name: str = "x") -> np.ndarray:
    """Validate that ``x`` is a rank-4 array with every dimension >= 1."""
    if not isinstance(x, np.ndarray):
        raise TypeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (NCHW), got shape {x.shape}", dim="rank")
    for size, dim in zip(x.shape, _DIM_NAMES):
        if size < 1:
            raise ShapeError(f"{name} has empty {dim} dimension: shape {x.shape}", dim=dim)
    return x


def zeros(n: int, c: int, h: int, w: int, dtype=STORAGE_DTYPE) -> np.ndarray:
    return np.zeros((n, c, h, w), dtype=dtype)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        for size_a, size_b, dim in zip(a.shape, b.shape, _DIM_NAMES):
            if size_a != size_b:
                raise ShapeError(f"{what}: {dim} mismatch {a.shape} vs {b.shape}", dim=dim)
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}", dim="rank")
