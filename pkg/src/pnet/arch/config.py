from dataclasses import asdict, dataclass, fields

from pnet.errors import ConfigError

DOWNSAMPLE_VARIANTS = ("conv5x5", "conv3x3", "conv3x3_maxpool")
SKIP_TAPS = ("post_patch", "pre_patch")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of PNet.

    ``skip_tap`` selects whether the decoder skip connection reads stage 1
    after its Patch block (default) or straight after the first downsample.
    """

    stage_widths: tuple[int, int, int, int] = (32, 64, 128, 256)
    decoder_width: int = 64
    num_classes: int = 2
    dilation_pair: tuple[int, int] = (2, 6)
    downsample_variant: str = "conv5x5"
    dropout_rate: float = 0.3
    input_channels: int = 3
    skip_tap: str = "post_patch"

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(c) for c in self.stage_widths))
        object.__setattr__(self, "dilation_pair", tuple(int(r) for r in self.dilation_pair))
        if len(self.stage_widths) != 4:
            raise ConfigError(f"stage_widths needs exactly 4 entries, got {self.stage_widths}")
        if any(c < 1 for c in self.stage_widths) or self.decoder_width < 1 or self.input_channels < 1:
            raise ConfigError("channel widths must be positive")
        if len(self.dilation_pair) != 2 or min(self.dilation_pair) < 1:
            raise ConfigError(f"dilation_pair must be two rates >= 1, got {self.dilation_pair}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.downsample_variant not in DOWNSAMPLE_VARIANTS:
            raise ConfigError(f"downsample_variant must be one of {DOWNSAMPLE_VARIANTS}, got {self.downsample_variant!r}")
        if self.skip_tap not in SKIP_TAPS:
            raise ConfigError(f"skip_tap must be one of {SKIP_TAPS}, got {self.skip_tap!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        d["dilation_pair"] = list(self.dilation_pair)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)
