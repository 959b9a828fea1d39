"""The PNet model and its static analyzers."""
from pnet.arch.analysis import (
    LayerRecord,
    StageTrace,
    dilation_pair_covers,
    effective_kernel,
    flop_count,
    param_count,
    stage_shapes,
)
from pnet.arch.config import DOWNSAMPLE_VARIANTS, SKIP_TAPS, ModelConfig
from pnet.arch.model import (
    PNet,
    downsample_forward,
    init_patch_block,
    patch_block_backward,
    patch_block_forward,
    pnet_forward,
    pnet_train_step,
)

__all__ = [
    "DOWNSAMPLE_VARIANTS",
    "SKIP_TAPS",
    "LayerRecord",
    "ModelConfig",
    "PNet",
    "StageTrace",
    "dilation_pair_covers",
    "downsample_forward",
    "effective_kernel",
    "flop_count",
    "init_patch_block",
    "param_count",
    "patch_block_backward",
    "patch_block_forward",
    "pnet_forward",
    "pnet_train_step",
    "stage_shapes",
]
