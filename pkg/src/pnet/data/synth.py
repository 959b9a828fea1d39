"""Synthetic 'disks on noise' dataset used for smoke tests."""
from pathlib import Path

import numpy as np
from PIL import Image

from pnet.rng import substream


def disk_sample(rng: np.random.Generator, size: int = 96):
    """One RGB noise image with a single bright disk, plus its 0/255 mask."""
    yy, xx = np.mgrid[:size, :size]
    radius = rng.uniform(size / 8, size / 3.5)
    cy, cx = rng.uniform(radius, size - radius, 2)
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    image = rng.uniform(0.0, 0.5, (size, size, 3))
    colour = rng.uniform(0.6, 1.0, 3)
    image[inside] = colour * rng.uniform(0.85, 1.0, (int(inside.sum()), 3))
    return (image * 255).round().astype(np.uint8), inside.astype(np.uint8) * 255


def make_disk_dataset(root, n: int = 10, size: int = 96, seed: int = 0) -> Path:
    """Write ``n`` PNG pairs under ``root/images`` and ``root/masks``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = substream(seed, "synth")
    for i in range(n):
        image, mask = disk_sample(rng, size)
        Image.fromarray(image, mode="RGB").save(root / "images" / f"disk_{i:03d}.png")
        Image.fromarray(mask, mode="L").save(root / "masks" / f"disk_{i:03d}.png")
    return root
