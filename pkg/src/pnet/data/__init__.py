"""Dataset ingestion, splitting, augmentation and batching."""
from pnet.data.manifest import Entry, SampleManifest, check_target_size, scan_dataset, split
from pnet.data.samples import (
    AugmentPolicy,
    Batch,
    Sample,
    augment,
    load_image,
    load_mask,
    load_sample,
    make_batches,
    save_mask_png,
)
from pnet.data.synth import make_disk_dataset

__all__ = [
    "AugmentPolicy",
    "Batch",
    "Entry",
    "Sample",
    "SampleManifest",
    "augment",
    "check_target_size",
    "load_image",
    "load_mask",
    "load_sample",
    "make_batches",
    "make_disk_dataset",
    "save_mask_png",
    "scan_dataset",
    "split",
]
