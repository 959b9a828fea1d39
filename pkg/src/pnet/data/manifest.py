"""Dataset index: scanning image/mask directories, splitting, CSV round-trip."""
import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from pnet.errors import DataError
from pnet.rng import substream

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class Entry:
    image: str
    mask: str
    split: str = ""

    @property
    def stem(self) -> str:
        return Path(self.image).stem


@dataclass
class SampleManifest:
    """``target_size`` is ``(W, H)``; both must be multiples of 16."""

    entries: list[Entry]
    name: str = "dataset"
    target_size: tuple[int, int] = (224, 224)
    seed: int = 0
    unmatched: list[str] = field(default_factory=list)
    split_ratio: float | None = None

    def __post_init__(self):
        check_target_size(self.target_size)

    def __len__(self):
        return len(self.entries)

    def select(self, split: str) -> list[Entry]:
        return [e for e in self.entries if e.split == split]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image", "mask", "split"])
        for e in self.entries:
            writer.writerow([e.image, e.mask, e.split])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, name="dataset", target_size=(224, 224), seed=0) -> "SampleManifest":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        entries = [Entry(r["image"], r["mask"], r.get("split", "")) for r in rows]
        return cls(entries, name, tuple(target_size), seed)


def check_target_size(size) -> tuple[int, int]:
    w, h = size
    if w < 16 or h < 16 or w % 16 or h % 16:
        raise DataError(f"target size {w}x{h} must have both sides divisible by 16")
    return int(w), int(h)


def _index(directory: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if path.stem in found:
            raise DataError(f"duplicate stem {path.stem!r} in {directory}: {found[path.stem].name}, {path.name}")
        found[path.stem] = path
    return found


def scan_dataset(image_dir, mask_dir, target_size, name: str = "dataset", seed: int = 0) -> SampleManifest:
    """Pair images and masks by file stem, in lexicographic stem order.

    Files without a partner are listed in ``manifest.unmatched`` and skipped.
    """
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    for d in (image_dir, mask_dir):
        if not d.is_dir():
            raise DataError(f"directory not found: {d}")
    images = _index(image_dir)
    masks = _index(mask_dir)
    stems = sorted(images.keys() & masks.keys())
    if not stems:
        raise DataError(f"no image/mask pairs found under {image_dir} and {mask_dir}")
    unmatched = sorted(str(images[s]) for s in images.keys() - masks.keys())
    unmatched += sorted(str(masks[s]) for s in masks.keys() - images.keys())
    entries = [Entry(str(images[s]), str(masks[s])) for s in stems]
    return SampleManifest(entries, name, check_target_size(target_size), seed, unmatched)


def split(manifest: SampleManifest, ratio: float = 0.8, seed: int | None = None) -> SampleManifest:
    """Seeded shuffle; the first ``floor(ratio * N)`` entries become train."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(manifest.entries)
    if n < 2:
        raise DataError(f"need at least 2 entries to split, got {n}")
    seed = manifest.seed if seed is None else seed
    order = substream(seed, "split").permutation(n)
    n_train = math.floor(ratio * n + 1e-9)
    tags = [""] * n
    for rank, idx in enumerate(order):
        tags[idx] = "train" if rank < n_train else "test"
    entries = [replace(e, split=t) for e, t in zip(manifest.entries, tags)]
    return replace(manifest, entries=entries, seed=seed, split_ratio=ratio)
