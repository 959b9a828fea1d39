"""2-D cross-correlation with stride, zero padding and dilation.

Both directions go through an im2col view built with ``as_strided`` over the
padded input, followed by one GEMM in float64.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from pnet.core.tensor import ACCUM_DTYPE, check_tensor4
from pnet.errors import ShapeError


@dataclass(frozen=True)
class ConvSpec:
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        kh, kw = self.kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel must be positive, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @classmethod
    def same(cls, k: int = 3, dilation: int = 1) -> "ConvSpec":
        """Stride-1 spec whose output keeps the input size (odd ``k``)."""
        return cls((k, k), 1, dilation * (k - 1) // 2, dilation)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        d, p, s = self.dilation, self.padding, self.stride
        oh = (h + 2 * p - d * (kh - 1) - 1) // s + 1
        ow = (w + 2 * p - d * (kw - 1) - 1) // s + 1
        if oh < 1:
            raise ShapeError(f"conv output height {oh} < 1 for input height {h} and {self}", dim="height")
        if ow < 1:
            raise ShapeError(f"conv output width {ow} < 1 for input width {w} and {self}", dim="width")
        return oh, ow


def _check_weight(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> None:
    check_tensor4(w, "w")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but weight expects {w.shape[1]}", dim="in_channels"
        )
    if tuple(w.shape[2:]) != tuple(spec.kernel):
        raise ShapeError(f"weight kernel {w.shape[2:]} does not match spec {spec.kernel}", dim="kernel")


def _columns(x: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, int, int]:
    """Return the (C*kh*kw, N*oh*ow) float64 patch matrix and output size."""
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    oh, ow = spec.output_size(h, w)
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(c, kh, kw, n, oh, ow),
        strides=(sc, sh * d, sw * d, sn, sh * s, sw * s),
        writeable=False,
    )
    cols = np.ascontiguousarray(view, dtype=ACCUM_DTYPE).reshape(c * kh * kw, n * oh * ow)
    return cols, oh, ow


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` (N,C,H,W) with ``w`` (O,C,kh,kw) and add bias ``b`` (O,)."""
    check_tensor4(x, "x")
    _check_weight(x, w, spec)
    n = x.shape[0]
    out_c = w.shape[0]
    cols, oh, ow = _columns(x, spec)
    y = w.reshape(out_c, -1).astype(ACCUM_DTYPE) @ cols
    if b is not None:
        if b.shape != (out_c,):
            raise ShapeError(f"bias shape {b.shape} != ({out_c},)", dim="out_channels")
        y += b.astype(ACCUM_DTYPE)[:, None]
    y = y.reshape(out_c, n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(y, dtype=x.dtype)


def conv2d_backward(x: np.ndarray, w: np.ndarray, spec: ConvSpec, grad_out: np.ndarray):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weight and bias."""
    check_tensor4(x, "x")
    _check_weight(x, w, spec)
    n, c, h, wd = x.shape
    out_c, _, kh, kw = w.shape
    oh, ow = spec.output_size(h, wd)
    if grad_out.shape != (n, out_c, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != forward output {(n, out_c, oh, ow)}", dim="grad_out"
        )
    cols, _, _ = _columns(x, spec)
    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3), dtype=ACCUM_DTYPE).reshape(out_c, -1)

    grad_w = (g @ cols.T).reshape(w.shape)
    grad_b = g.sum(axis=1)
    gcols = (w.reshape(out_c, -1).astype(ACCUM_DTYPE).T @ g).reshape(c, kh, kw, n, oh, ow)

    p, s, d = spec.padding, spec.stride, spec.dilation
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=ACCUM_DTYPE)
    for i in range(kh):
        r0 = i * d
        for j in range(kw):
            c0 = j * d
            gxp[:, :, r0 : r0 + s * (oh - 1) + 1 : s, c0 : c0 + s * (ow - 1) + 1 : s] += gcols[
                :, i, j
            ].transpose(1, 0, 2, 3)
    grad_x = gxp[:, :, p : p + h, p : p + wd]
    return (
        grad_x.astype(x.dtype),
        grad_w.astype(w.dtype),
        grad_b.astype(w.dtype),
    )
