"""PNet: four (downsample -> Patch block) encoder stages and a light decoder.

The backward pass is an explicit reverse walk over the caches each forward
returns. Parameters live in an insertion-ordered ``dict`` whose order is the
canonical serialization order:

    enc{1..4}.down.{w, b, bn.gamma, bn.beta}
    enc{1..4}.patch.conv_a.{w, b, bn.gamma, bn.beta}
    enc{1..4}.patch.conv_b.{w, b, bn.gamma, bn.beta}
    dec.fuse.{w, b, bn.gamma, bn.beta}
    dec.mix.{w, b, bn.gamma, bn.beta}
    dec.cls.{w, b}

(encoder names are grouped per stage: enc1.down, enc1.patch..., enc2.down...).
Batchnorm running statistics live in a separate ``buffers`` dict under
``<unit>.bn.running_mean`` / ``<unit>.bn.running_var``.
"""
from dataclasses import dataclass

import numpy as np

from pnet.arch.config import ModelConfig
from pnet.core.conv import ConvSpec, conv2d_backward, conv2d_forward
from pnet.core.layers import (
    EVAL,
    TRAIN,
    BatchNormState,
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
from pnet.core.tensor import STORAGE_DTYPE, check_tensor4
from pnet.errors import ShapeError
from pnet.rng import substream

SPATIAL_MULTIPLE = 16
DECODER_UPSAMPLE = 8


@dataclass(frozen=True)
class ConvUnit:
    """conv -> [2x2 maxpool] -> [batchnorm] -> [relu]"""

    name: str
    in_channels: int
    out_channels: int
    spec: ConvSpec
    norm: bool = True
    act: bool = True
    pool: bool = False

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, *self.spec.kernel)

    def param_names(self) -> list[str]:
        names = [f"{self.name}.w", f"{self.name}.b"]
        if self.norm:
            names += [f"{self.name}.bn.gamma", f"{self.name}.bn.beta"]
        return names

    def buffer_names(self) -> list[str]:
        if not self.norm:
            return []
        return [f"{self.name}.bn.running_mean", f"{self.name}.bn.running_var"]


def downsample_unit(name: str, in_c: int, out_c: int, variant: str) -> ConvUnit:
    if variant == "conv5x5":
        return ConvUnit(name, in_c, out_c, ConvSpec((5, 5), stride=2, padding=2))
    if variant == "conv3x3":
        return ConvUnit(name, in_c, out_c, ConvSpec((3, 3), stride=2, padding=1))
    if variant == "conv3x3_maxpool":
        return ConvUnit(name, in_c, out_c, ConvSpec((3, 3), stride=1, padding=1), pool=True)
    raise ValueError(f"unknown downsample variant {variant!r}")


def patch_units(prefix: str, channels: int, pair: tuple[int, int]) -> tuple[ConvUnit, ConvUnit]:
    r1, r2 = pair
    return (
        ConvUnit(f"{prefix}conv_a", channels, channels, ConvSpec.same(3, r1)),
        ConvUnit(f"{prefix}conv_b", channels, channels, ConvSpec.same(3, r2)),
    )


def decoder_units(config: ModelConfig) -> tuple[ConvUnit, ConvUnit, ConvUnit]:
    widths, dw = config.stage_widths, config.decoder_width
    return (
        ConvUnit("dec.fuse", widths[3] + widths[0], dw, ConvSpec((3, 3), stride=1, padding=1)),
        ConvUnit("dec.mix", dw, dw, ConvSpec((1, 1))),
        ConvUnit("dec.cls", dw, config.num_classes, ConvSpec((1, 1)), norm=False, act=False),
    )


def build_plan(config: ModelConfig) -> list[ConvUnit]:
    """All conv units in canonical order."""
    units = []
    in_c = config.input_channels
    for i, width in enumerate(config.stage_widths, start=1):
        units.append(downsample_unit(f"enc{i}.down", in_c, width, config.downsample_variant))
        units.extend(patch_units(f"enc{i}.patch.", width, config.dilation_pair))
        in_c = width
    units.extend(decoder_units(config))
    return units


def init_unit(unit: ConvUnit, rng: np.random.Generator, params: dict, buffers: dict, dtype=STORAGE_DTYPE):
    """Kaiming fan-in normal weights, zero bias, unit/zero batchnorm."""
    kh, kw = unit.spec.kernel
    fan_in = unit.in_channels * kh * kw
    params[f"{unit.name}.w"] = (rng.standard_normal(unit.weight_shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    params[f"{unit.name}.b"] = np.zeros(unit.out_channels, dtype=dtype)
    if unit.norm:
        bn = BatchNormState.fresh(unit.out_channels, dtype)
        params[f"{unit.name}.bn.gamma"] = bn.gamma
        params[f"{unit.name}.bn.beta"] = bn.beta
        buffers[f"{unit.name}.bn.running_mean"] = bn.running_mean
        buffers[f"{unit.name}.bn.running_var"] = bn.running_var


def _bn_state(unit: ConvUnit, params: dict, buffers: dict | None) -> BatchNormState:
    if buffers is None:
        fresh = BatchNormState.fresh(unit.out_channels, params[f"{unit.name}.bn.gamma"].dtype)
        running_mean, running_var = fresh.running_mean, fresh.running_var
    else:
        running_mean = buffers[f"{unit.name}.bn.running_mean"]
        running_var = buffers[f"{unit.name}.bn.running_var"]
    return BatchNormState(
        gamma=params[f"{unit.name}.bn.gamma"],
        beta=params[f"{unit.name}.bn.beta"],
        running_mean=running_mean,
        running_var=running_var,
    )


def unit_forward(x, unit: ConvUnit, params: dict, buffers: dict | None, mode: str):
    w = params[f"{unit.name}.w"]
    if w.shape != unit.weight_shape:
        raise ShapeError(f"{unit.name}.w has shape {w.shape}, expected {unit.weight_shape}", dim="channels")
    y = conv2d_forward(x, w, params[f"{unit.name}.b"], unit.spec)
    conv_shape, pool_arg, bn_cache = y.shape, None, None
    if unit.pool:
        y, pool_arg = maxpool2d_forward(y)
    if unit.norm:
        y, bn_cache = batchnorm_forward(y, _bn_state(unit, params, buffers), mode)
    if unit.act:
        y = relu(y)
    return y, (unit, x, conv_shape, pool_arg, bn_cache, y)


def unit_backward(cache, grad: np.ndarray, params: dict, grads: dict) -> np.ndarray:
    unit, x, conv_shape, pool_arg, bn_cache, y = cache
    if unit.act:
        grad = relu_backward(y, grad)
    if unit.norm:
        grad, g_gamma, g_beta = batchnorm_backward(bn_cache, grad)
        grads[f"{unit.name}.bn.gamma"] = g_gamma
        grads[f"{unit.name}.bn.beta"] = g_beta
    if unit.pool:
        grad = maxpool2d_backward(grad, pool_arg, conv_shape)
    gx, gw, gb = conv2d_backward(x, params[f"{unit.name}.w"], unit.spec, grad)
    grads[f"{unit.name}.w"] = gw
    grads[f"{unit.name}.b"] = gb
    return gx


def init_patch_block(channels: int, pair=(2, 6), seed: int = 0, prefix: str = "", dtype=STORAGE_DTYPE):
    """Fresh ``(params, buffers)`` for a standalone Patch block."""
    params, buffers = {}, {}
    rng = substream(seed, "init")
    for unit in patch_units(prefix, channels, pair):
        init_unit(unit, rng, params, buffers, dtype)
    return params, buffers


def patch_block_forward(x, params: dict, pair=(2, 6), *, prefix: str = "", buffers: dict | None = None, mode: str = TRAIN):
    """Residual block ``y = x + f_b(f_a(x))``.

    ``f_a``/``f_b`` are 3x3 conv (dilation ``pair[0]`` / ``pair[1]``, padding
    equal to the dilation) -> batchnorm -> relu. The sum itself is not
    activated, so a zeroed path returns ``x`` unchanged.
    """
    check_tensor4(x, "x")
    unit_a, unit_b = patch_units(prefix, x.shape[1], pair)
    h, cache_a = unit_forward(x, unit_a, params, buffers, mode)
    h, cache_b = unit_forward(h, unit_b, params, buffers, mode)
    return x + h, (cache_a, cache_b)


def patch_block_backward(cache, grad: np.ndarray, params: dict, grads: dict) -> np.ndarray:
    cache_a, cache_b = cache
    g = unit_backward(cache_b, grad, params, grads)
    g = unit_backward(cache_a, g, params, grads)
    return grad + g


def downsample_forward(x, params: dict, variant: str = "conv5x5", *, prefix: str = "", buffers: dict | None = None, mode: str = TRAIN):
    """Halve the resolution with a learned strided conv (or conv + maxpool)."""
    check_tensor4(x, "x")
    out_c = params[f"{prefix}down.w"].shape[0]
    unit = downsample_unit(f"{prefix}down", x.shape[1], out_c, variant)
    return unit_forward(x, unit, params, buffers, mode)


def _check_input(x: np.ndarray, config: ModelConfig) -> None:
    check_tensor4(x, "x")
    if x.shape[1] != config.input_channels:
        raise ShapeError(f"expected {config.input_channels} input channels, got {x.shape[1]}", dim="channels")
    for size, dim in ((x.shape[2], "height"), (x.shape[3], "width")):
        if size % SPATIAL_MULTIPLE:
            raise ShapeError(
                f"input {dim} {size} is not divisible by {SPATIAL_MULTIPLE}; resize the images "
                f"(e.g. to {max(SPATIAL_MULTIPLE, round(size / SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE)})",
                dim=dim,
            )


class PNet:
    """Parameters, running statistics and configuration of one PNet model."""

    def __init__(self, config: ModelConfig | None = None, params=None, buffers=None, seed: int = 0, dtype=STORAGE_DTYPE):
        self.config = config or ModelConfig()
        self.units = build_plan(self.config)
        self.units_by_name = {u.name: u for u in self.units}
        if params is None:
            params, buffers = {}, {}
            rng = substream(seed, "init")
            for unit in self.units:
                init_unit(unit, rng, params, buffers, dtype)
        self.params = params
        self.buffers = buffers
        self._check_names()

    def _check_names(self):
        expected = [n for u in self.units for n in u.param_names()]
        if list(self.params) != expected:
            raise ShapeError("parameter names/order do not match the configuration", dim="params")
        expected_buf = [n for u in self.units for n in u.buffer_names()]
        if list(self.buffers) != expected_buf:
            raise ShapeError("buffer names/order do not match the configuration", dim="buffers")
        for unit in self.units:
            w = self.params[f"{unit.name}.w"]
            if w.shape != unit.weight_shape:
                raise ShapeError(f"{unit.name}.w has shape {w.shape}, expected {unit.weight_shape}", dim=unit.name)

    def param_names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "PNet":
        return PNet(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def copy(self) -> "PNet":
        return PNet(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def _unit(self, name):
        return self.units_by_name[name]

    def forward(self, x: np.ndarray, mode: str = EVAL, rng: np.random.Generator | None = None):
        """Return ``(logits, cache)``; logits are (N, num_classes, H, W)."""
        cfg = self.config
        _check_input(x, cfg)
        params, buffers = self.params, self.buffers
        h = x
        stages = []
        skip = None
        for i in range(1, 5):
            h, c_down = unit_forward(h, self._unit(f"enc{i}.down"), params, buffers, mode)
            pre = h
            h, c_patch = patch_block_forward(h, params, cfg.dilation_pair, prefix=f"enc{i}.patch.", buffers=buffers, mode=mode)
            if i == 1:
                skip = h if cfg.skip_tap == "post_patch" else pre
            stages.append((c_down, c_patch))
        up = bilinear_upsample(h, DECODER_UPSAMPLE)
        fused_in = concat_channels(up, skip)
        f, c_fuse = unit_forward(fused_in, self._unit("dec.fuse"), params, buffers, mode)
        f, drop_mask = dropout_forward(f, cfg.dropout_rate, mode, rng)
        f, c_mix = unit_forward(f, self._unit("dec.mix"), params, buffers, mode)
        f, c_cls = unit_forward(f, self._unit("dec.cls"), params, buffers, mode)
        logits = bilinear_upsample(f, 2)
        cache = (stages, up.shape[1], c_fuse, drop_mask, c_mix, c_cls)
        return logits, cache

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, EVAL)[0]

    def backward(self, cache, grad_logits: np.ndarray):
        """Return ``(grads, grad_input)``; ``grads`` follows canonical order."""
        stages, up_channels, c_fuse, drop_mask, c_mix, c_cls = cache
        params = self.params
        grads = {}
        g = bilinear_upsample_backward(grad_logits, 2)
        g = unit_backward(c_cls, g, params, grads)
        g = unit_backward(c_mix, g, params, grads)
        g = dropout_backward(g, drop_mask)
        g = unit_backward(c_fuse, g, params, grads)
        g_up, g_skip = concat_channels_backward(g, up_channels)
        g = bilinear_upsample_backward(np.ascontiguousarray(g_up), DECODER_UPSAMPLE)
        for i in range(4, 0, -1):
            c_down, c_patch = stages[i - 1]
            if i == 1 and self.config.skip_tap == "post_patch":
                g = g + g_skip
            g = patch_block_backward(c_patch, g, params, grads)
            if i == 1 and self.config.skip_tap == "pre_patch":
                g = g + g_skip
            g = unit_backward(c_down, g, params, grads)
        ordered = {name: grads[name] for name in params}
        return ordered, g


def pnet_forward(x: np.ndarray, model: PNet, mode: str = EVAL, rng=None):
    return model.forward(x, mode, rng)


def pnet_train_step(images: np.ndarray, masks: np.ndarray, model: PNet, adam: AdamState, lr: float = 1e-4, rng=None) -> float:
    """Train-mode forward, loss, full backward and one Adam update. Returns the loss."""
    logits, cache = model.forward(images, TRAIN, rng)
    loss, grad = softmax_cross_entropy(logits, masks)
    grads, _ = model.backward(cache, grad)
    adam_step(model.params, grads, adam, lr)
    return loss
