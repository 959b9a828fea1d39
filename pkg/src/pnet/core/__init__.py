"""Minimal differentiable numeric core: rank-4 kernels, loss and Adam."""
from pnet.core.conv import ConvSpec, conv2d_backward, conv2d_forward
from pnet.core.layers import (
    EVAL,
    TRAIN,
    BatchNormState,
    add,
    add_backward,
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
from pnet.core.loss import softmax_cross_entropy
from pnet.core.optim import AdamState, adam_step
from pnet.core.tensor import check_tensor4

__all__ = [
    "EVAL",
    "TRAIN",
    "AdamState",
    "BatchNormState",
    "ConvSpec",
    "adam_step",
    "add",
    "add_backward",
    "batchnorm_backward",
    "batchnorm_forward",
    "bilinear_upsample",
    "bilinear_upsample_backward",
    "check_tensor4",
    "concat_channels",
    "concat_channels_backward",
    "conv2d_backward",
    "conv2d_forward",
    "dropout_backward",
    "dropout_forward",
    "maxpool2d_backward",
    "maxpool2d_forward",
    "relu",
    "relu_backward",
    "softmax_cross_entropy",
]
