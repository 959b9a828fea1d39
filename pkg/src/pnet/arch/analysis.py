"""Static accounting for PNet: per-layer shapes, parameters and FLOPs, plus
dilated-kernel geometry.

FLOP conventions (all per forward pass, batch 1):

    conv         2*kh*kw*in*out*oh*ow   (multiply + add per tap)
                 + out*oh*ow            (bias)
    maxpool 2x2  3 per output           (comparisons)
    batchnorm    2 per element          (folded scale + shift)
    relu         1 per element
    residual add 1 per element
    bilinear     7 per output element   (4 weighted neighbours)
    concat, dropout (eval)  0
"""
from dataclasses import dataclass, field

from pnet.arch.config import ModelConfig
from pnet.arch.model import DECODER_UPSAMPLE, SPATIAL_MULTIPLE, ConvUnit, build_plan
from pnet.errors import ShapeError

BILINEAR_FLOPS_PER_OUTPUT = 7


@dataclass(frozen=True)
class LayerRecord:
    name: str
    kind: str
    out_shape: tuple[int, int, int]
    params: int
    flops: int


@dataclass
class StageTrace:
    height: int
    width: int
    layers: list[LayerRecord] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.layers)

    def encoder_resolutions(self) -> list[tuple[int, int]]:
        return [r.out_shape[1:] for r in self.layers if r.kind == "patch_add"]

    def format_table(self) -> str:
        head = f"{'layer':<26}{'kind':<12}{'output (CxHxW)':>18}{'params':>12}{'FLOPs':>16}"
        lines = [head, "-" * len(head)]
        for r in self.layers:
            shape = "x".join(str(s) for s in r.out_shape)
            lines.append(f"{r.name:<26}{r.kind:<12}{shape:>18}{r.params:>12,}{r.flops:>16,}")
        lines.append("-" * len(head))
        lines.append(f"{'total':<56}{self.total_params:>12,}{self.total_flops:>16,}")
        return "\n".join(lines)


def unit_params(unit: ConvUnit) -> int:
    kh, kw = unit.spec.kernel
    n = unit.out_channels * unit.in_channels * kh * kw + unit.out_channels
    if unit.norm:
        n += 2 * unit.out_channels
    return n


def _trace_unit(unit: ConvUnit, h: int, w: int, records: list[LayerRecord]) -> tuple[int, int]:
    kh, kw = unit.spec.kernel
    oh, ow = unit.spec.output_size(h, w)
    c = unit.out_channels
    conv_flops = 2 * kh * kw * unit.in_channels * c * oh * ow + c * oh * ow
    conv_params = c * unit.in_channels * kh * kw + c
    records.append(LayerRecord(unit.name, "conv", (c, oh, ow), conv_params, conv_flops))
    if unit.pool:
        oh, ow = (oh + 1) // 2, (ow + 1) // 2
        records.append(LayerRecord(f"{unit.name}.pool", "maxpool", (c, oh, ow), 0, 3 * c * oh * ow))
    if unit.norm:
        records.append(LayerRecord(f"{unit.name}.bn", "batchnorm", (c, oh, ow), 2 * c, 2 * c * oh * ow))
    if unit.act:
        records.append(LayerRecord(f"{unit.name}.relu", "relu", (c, oh, ow), 0, c * oh * ow))
    return oh, ow


def stage_shapes(config: ModelConfig, height: int, width: int) -> StageTrace:
    """Every layer of the forward pass at ``height x width`` with params and FLOPs."""
    for size, dim in ((height, "height"), (width, "width")):
        if size < 1 or size % SPATIAL_MULTIPLE:
            raise ShapeError(f"{dim} {size} must be a positive multiple of {SPATIAL_MULTIPLE}", dim=dim)
    units = {u.name: u for u in build_plan(config)}
    trace = StageTrace(height, width)
    rec = trace.layers
    h, w = height, width
    skip_shape = None
    for i, width_i in enumerate(config.stage_widths, start=1):
        h, w = _trace_unit(units[f"enc{i}.down"], h, w, rec)
        pre = (width_i, h, w)
        h, w = _trace_unit(units[f"enc{i}.patch.conv_a"], h, w, rec)
        h, w = _trace_unit(units[f"enc{i}.patch.conv_b"], h, w, rec)
        rec.append(LayerRecord(f"enc{i}.patch.add", "patch_add", (width_i, h, w), 0, width_i * h * w))
        if i == 1:
            skip_shape = (width_i, h, w) if config.skip_tap == "post_patch" else pre
    c4 = config.stage_widths[3]
    uh, uw = h * DECODER_UPSAMPLE, w * DECODER_UPSAMPLE
    rec.append(LayerRecord("dec.up8", "upsample", (c4, uh, uw), 0, BILINEAR_FLOPS_PER_OUTPUT * c4 * uh * uw))
    if (uh, uw) != skip_shape[1:]:
        raise ShapeError(f"decoder upsample {uh}x{uw} does not meet skip {skip_shape[1:]}", dim="height")
    rec.append(LayerRecord("dec.concat", "concat", (c4 + skip_shape[0], uh, uw), 0, 0))
    h, w = _trace_unit(units["dec.fuse"], uh, uw, rec)
    rec.append(LayerRecord("dec.dropout", "dropout", (config.decoder_width, h, w), 0, 0))
    h, w = _trace_unit(units["dec.mix"], h, w, rec)
    h, w = _trace_unit(units["dec.cls"], h, w, rec)
    k = config.num_classes
    rec.append(LayerRecord("dec.up2", "upsample", (k, 2 * h, 2 * w), 0, BILINEAR_FLOPS_PER_OUTPUT * k * 4 * h * w))
    return trace


def param_count(config: ModelConfig) -> int:
    """Learned scalars: conv weights + biases and batchnorm scale/shift."""
    return sum(unit_params(u) for u in build_plan(config))


def flop_count(config: ModelConfig, height: int, width: int) -> int:
    return stage_shapes(config, height, width).total_flops


def effective_kernel(k: int = 3, rate: int = 1) -> int:
    """Pixel span of a ``k``-tap kernel dilated by ``rate``."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {k}")
    if rate < 1:
        raise ValueError(f"dilation rate must be >= 1, got {rate}")
    return k + (k - 1) * (rate - 1)


def dilation_pair_covers(r1: int, r2: int, mode: str = "exact") -> bool:
    """Does the second rate's tap gap hold the first conv's full span?

    ``exact``: the gap between neighbouring taps of the second conv
    (``r2 - 1`` pixels) equals the first conv's span, i.e. ``r2 ==
    effective_kernel(3, r1) + 1``. ``at_least``: the gap is at least that
    span.
    """
    if r1 < 1 or r2 < 1:
        raise ValueError(f"dilation rates must be >= 1, got ({r1}, {r2})")
    needed = effective_kernel(3, r1) + 1
    if mode == "exact":
        return r2 == needed
    if mode == "at_least":
        return r2 >= needed
    raise ValueError(f"coverage mode must be 'exact' or 'at_least', got {mode!r}")
