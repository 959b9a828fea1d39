import numpy as np

from pnet.core.tensor import ACCUM_DTYPE, check_tensor4
from pnet.errors import ShapeError


def softmax_cross_entropy(logits: np.ndarray, target: np.ndarray):
    """Pixel-wise softmax cross entropy averaged over every pixel.

    Args:
        logits: (N, K, H, W) class scores.
        target: (N, H, W) integer labels in ``[0, K)``.

    Returns:
        ``(loss, grad_logits)`` with ``loss`` a Python float and
        ``grad_logits = (softmax - onehot) / (N*H*W)`` in the logits dtype.
    """
    check_tensor4(logits, "logits")
    n, k, h, w = logits.shape
    if target.shape != (n, h, w):
        raise ShapeError(f"target shape {target.shape} != {(n, h, w)}", dim="target")
    if not np.issubdtype(target.dtype, np.integer):
        raise TypeError(f"target must be integer, got {target.dtype}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target labels must lie in [0, {k}), got range [{target.min()}, {target.max()}]")

    z = logits.astype(ACCUM_DTYPE)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_prob = z - log_norm
    idx = target[:, None].astype(np.intp)
    picked = np.take_along_axis(log_prob, idx, axis=1)
    count = n * h * w
    loss = float(-picked.sum() / count)

    grad = np.exp(log_prob)
    np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=1) - 1.0, axis=1)
    grad /= count
    return loss, grad.astype(logits.dtype)
