"""Decoding, resizing, augmentation and batching of image/mask pairs."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from pnet.data.manifest import Entry, SampleManifest, check_target_size
from pnet.errors import DataError
from pnet.rng import substream

MASK_THRESHOLD = 127


@dataclass
class Sample:
    image: np.ndarray  # (1, 3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    stem: str = ""


@dataclass
class Batch:
    images: np.ndarray  # (N, 3, H, W) float32
    masks: np.ndarray  # (N, H, W) int64
    stems: list[str]

    def __len__(self):
        return len(self.stems)


@dataclass(frozen=True)
class AugmentPolicy:
    rotate90: bool = True
    mirror_p: float = 0.5
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if not 0.0 <= self.mirror_p <= 1.0:
            raise ValueError(f"mirror_p must be in [0, 1], got {self.mirror_p}")
        for name in ("brightness", "contrast"):
            lo, hi = getattr(self, name)
            if not lo <= 1.0 <= hi or lo < 0:
                raise ValueError(f"{name} range {lo, hi} must contain 1.0 and be non-negative")


def _open(path: str, mode: str) -> Image.Image:
    try:
        with Image.open(path) as im:
            im.load()
            return im.convert(mode)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc


def load_image(path: str, target_size) -> np.ndarray:
    """Decode, bilinear-resize to ``target_size=(W, H)`` and scale to [0, 1]."""
    w, h = target_size
    im = _open(path, "RGB")
    if im.size != (w, h):
        im = im.resize((w, h), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


def load_mask(path: str, target_size) -> np.ndarray:
    w, h = target_size
    im = _open(path, "L")
    if im.size != (w, h):
        im = im.resize((w, h), Image.NEAREST)
    return (np.asarray(im) > MASK_THRESHOLD).astype(np.uint8)


def load_sample(entry: Entry, target_size) -> Sample:
    target_size = check_target_size(target_size)
    return Sample(load_image(entry.image, target_size), load_mask(entry.mask, target_size), entry.stem)


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a binary class grid as a 0/255 grayscale PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def augment(sample: Sample, policy: AugmentPolicy, rng: np.random.Generator) -> Sample:
    """Random rotation/mirror (image and mask) then brightness/contrast (image).

    All four draws are consumed on every call so the stream position does not
    depend on the policy. Non-square samples only rotate by 0 or 180 degrees,
    which keeps the shape fixed.
    """
    k = int(rng.integers(4))
    mirror = rng.random() < policy.mirror_p
    bright = rng.uniform(*policy.brightness)
    contrast = rng.uniform(*policy.contrast)

    image, mask = sample.image[0], sample.mask
    if not policy.rotate90:
        k = 0
    elif mask.shape[0] != mask.shape[1]:
        k = 2 * (k % 2) if k in (1, 3) else k
    if k:
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k)
    if mirror:
        image = image[:, :, ::-1]
        mask = mask[:, ::-1]
    image = image * np.float32(bright)
    mean = image.mean(dtype=np.float64)
    image = (image - mean) * contrast + mean
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(np.ascontiguousarray(image[None]), np.ascontiguousarray(mask), sample.stem)


def make_batches(
    manifest: SampleManifest,
    split: str,
    batch_size: int,
    shuffle_seed: int,
    policy: AugmentPolicy | None = None,
    *,
    epoch: int = 0,
    shuffle: bool = True,
    cache: dict | None = None,
    workers: int = 1,
):
    """Yield :class:`Batch` objects for one epoch of ``split``.

    The order is a permutation seeded by ``(shuffle_seed, epoch)``; the last
    partial batch is kept. Augmentation draws come from a per-sample stream
    keyed by ``(shuffle_seed, epoch, position)``, so a worker pool yields the
    same batches as a single thread.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    entries = manifest.select(split)
    order = np.arange(len(entries))
    if shuffle:
        order = substream(shuffle_seed, "shuffle", epoch).permutation(len(entries))

    def prepare(pos: int) -> Sample:
        entry = entries[order[pos]]
        if cache is not None and entry in cache:
            sample = cache[entry]
        else:
            sample = load_sample(entry, manifest.target_size)
            if cache is not None:
                cache[entry] = sample
        if policy is not None:
            sample = augment(sample, policy, substream(shuffle_seed, "augment", epoch, pos))
        return sample

    positions = range(len(entries))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(prepare, positions))
    else:
        samples = [prepare(p) for p in positions]
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        yield Batch(
            np.concatenate([s.image for s in chunk]),
            np.stack([s.mask for s in chunk]).astype(np.int64),
            [s.stem for s in chunk],
        )
