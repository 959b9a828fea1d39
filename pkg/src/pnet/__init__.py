"""PNet medical image segmentation on a small numpy engine."""

__version__ = "0.1.0"
