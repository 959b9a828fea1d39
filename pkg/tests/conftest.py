import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pnet.arch import ModelConfig  # noqa: E402
from pnet.data import make_disk_dataset, scan_dataset, split  # noqa: E402

TINY = ModelConfig(stage_widths=(4, 6, 8, 8), decoder_width=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disk_root(tmp_path_factory):
    return make_disk_dataset(tmp_path_factory.mktemp("disks"), n=10, size=96, seed=0)


@pytest.fixture(scope="session")
def small_disk_root(tmp_path_factory):
    return make_disk_dataset(tmp_path_factory.mktemp("small_disks"), n=6, size=32, seed=3)


@pytest.fixture
def small_manifest(small_disk_root):
    m = scan_dataset(small_disk_root / "images", small_disk_root / "masks", (32, 32), "small", seed=0)
    return split(m, 0.5, seed=0)


def all_train(manifest):
    return replace(manifest, entries=[replace(e, split="train") for e in manifest.entries])
