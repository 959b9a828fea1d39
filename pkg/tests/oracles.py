"""Independent reference implementations for the test suite.

None of these share code with the package kernels: convolution is a plain
7-deep loop nest (JIT-compiled by numba when available so the exhaustive
grid stays fast), pooling is a window scan, gradients are central finite
differences, and dilation coverage is checked by painting a grid.
"""
import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(fn=None, **_):
        return fn if fn is not None else (lambda f: f)


@njit(cache=True)
def _conv_loops(x, w, b, stride, pad, dil, oh, ow):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    out = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = b[oc]
                    for ic in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                r = i * stride - pad + p * dil
                                s = j * stride - pad + q * dil
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[bi, ic, r, s] * w[oc, ic, p, q]
                    out[bi, oc, i, j] = acc
    return out


def conv2d_reference(x, w, b, stride=1, pad=0, dil=1):
    kh, kw = w.shape[2:]
    oh = (x.shape[2] + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    ow = (x.shape[3] + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    if b is None:
        b = np.zeros(w.shape[0])
    return _conv_loops(
        np.asarray(x, np.float64), np.asarray(w, np.float64), np.asarray(b, np.float64), stride, pad, dil, oh, ow
    )


def maxpool_reference(x):
    n, c, h, w = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for bi in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    out[bi, ch, i, j] = x[bi, ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def bilinear_reference(x, factor):
    """Per-pixel half-pixel bilinear evaluation (align corners off, edge clamp)."""
    n, c, h, w = x.shape
    out = np.empty((n, c, h * factor, w * factor))
    for i in range(h * factor):
        sy = min(max((i + 0.5) / factor - 0.5, 0.0), h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(w * factor):
            sx = min(max((j + 0.5) / factor - 0.5, 0.0), w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, :, i, j] = (
                (1 - fy) * (1 - fx) * x[:, :, y0, x0]
                + (1 - fy) * fx * x[:, :, y0, x1]
                + fy * (1 - fx) * x[:, :, y1, x0]
                + fy * fx * x[:, :, y1, x1]
            )
    return out


def finite_difference(f, arr, eps=1e-3, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place, then restored)."""
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = []
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + eps
        up = f()
        flat[idx] = orig - eps
        down = f()
        flat[idx] = orig
        grads.append((up - down) / (2 * eps))
    return np.array(grads)


def directional_derivative(f, arr, direction, eps=1e-6):
    orig = arr.copy()
    arr += eps * direction
    up = f()
    arr[...] = orig - eps * direction
    down = f()
    arr[...] = orig
    return (up - down) / (2 * eps)


def paint_coverage(r1, r2, grid=33):
    """Paint one row of the second conv's taps and the first conv's span into its gaps.

    Along each axis the second dilated 3x3 conv has taps at ``-r2, 0, r2``.
    Into every gap, starting right after a tap, we paint one copy of the
    first conv's full footprint (``2*r1 + 1`` pixels wide, found by
    stamping its three taps and filling between them). The 2-D grid is
    painted with the outer product of those 1-D segments. The pair covers
    exactly when every cell in the taps' bounding box is painted exactly
    once: no holes and no overlaps.
    """
    centre = grid // 2
    first = np.zeros(grid, dtype=int)
    taps = [centre - r1, centre, centre + r1]
    first[min(taps) : max(taps) + 1] = 1
    width = int(first.sum())

    segments = []
    for b in (-1, 0, 1):
        tap = centre + b * r2
        segments.append((tap, tap + 1))
        if b < 1:
            segments.append((tap + 1, tap + 1 + width))

    canvas = np.zeros((grid, grid), dtype=int)
    for y0, y1 in segments:
        for x0, x1 in segments:
            canvas[max(y0, 0) : min(y1, grid), max(x0, 0) : min(x1, grid)] += 1
    lo, hi = centre - r2, centre + r2 + 1
    return bool(np.all(canvas[lo:hi, lo:hi] == 1))
