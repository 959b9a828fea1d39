"""Epoch loop, evaluation and checkpoint management."""
import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from pnet.arch.analysis import flop_count, param_count
from pnet.arch.config import ModelConfig
from pnet.arch.model import PNet, pnet_train_step
from pnet.checkpoint import Checkpoint, save_checkpoint
from pnet.core.optim import AdamState
from pnet.data.manifest import SampleManifest
from pnet.data.samples import AugmentPolicy, load_sample, make_batches, save_mask_png
from pnet.errors import ConfigError, DataError, NumericError
from pnet.metrics import (
    ConfusionCounts,
    MetricsReport,
    confusion,
    dice,
    fps_benchmark,
    iou,
    per_image_means,
    predict_mask,
)
from pnet.rng import substream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = 2
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentPolicy | None = field(default_factory=AugmentPolicy)
    eval_every: int = 5
    checkpoint_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    test_iou: float | None
    test_dice: float | None
    wall_time: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    def append(self, row: EpochRow):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.rows.append(row)

    def without_timing(self) -> list[tuple]:
        """Rows minus wall time: the part that must repeat exactly for a fixed seed."""
        return [(r.epoch, r.train_loss, r.test_iou, r.test_dice) for r in self.rows]

    def to_csv(self, include_timing: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["epoch", "train_loss", "test_iou", "test_dice"]
        writer.writerow(header + ["wall_time"] if include_timing else header)
        for r in self.rows:
            row = [
                r.epoch,
                repr(r.train_loss),
                "" if r.test_iou is None else f"{r.test_iou:.6f}",
                "" if r.test_dice is None else f"{r.test_dice:.6f}",
            ]
            if include_timing:
                row.append(f"{r.wall_time:.3f}")
            writer.writerow(row)
        return buf.getvalue()


def _meta(cfg: TrainConfig, manifest: SampleManifest) -> dict:
    aug = None if cfg.augment is None else asdict(cfg.augment)
    return {
        "dataset": manifest.name,
        "target_size": list(manifest.target_size),
        "seed": manifest.seed,
        "split_ratio": manifest.split_ratio,
        "train_seed": cfg.seed,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "augment": aug,
    }


def split_counts(model: PNet, manifest: SampleManifest, split: str, cache: dict | None = None, dump_dir=None):
    """Eval-mode per-image confusion counts for every entry of ``split``."""
    entries = manifest.select(split)
    if not entries:
        raise DataError(f"split {split!r} has no entries")
    counts = []
    for entry in entries:
        sample = cache.get(entry) if cache is not None else None
        if sample is None:
            sample = load_sample(entry, manifest.target_size)
            if cache is not None:
                cache[entry] = sample
        pred = predict_mask(model.predict_logits(sample.image))[0]
        counts.append(confusion(pred, sample.mask))
        if dump_dir is not None:
            save_mask_png(pred, Path(dump_dir) / f"{entry.stem}.png")
    return counts


def _total(counts) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total


def train(cfg: TrainConfig, manifest: SampleManifest, resume: Checkpoint | None = None, progress=print):
    """Train PNet on the train split of ``manifest``.

    Returns ``(final_checkpoint, train_log)``. With ``cfg.checkpoint_dir`` set,
    ``final.ckpt``, ``best.ckpt`` (highest test Dice) and ``train_log.csv``
    are written there.
    """
    if not manifest.select("train"):
        raise DataError("manifest has no train entries; run split() first")
    has_test = bool(manifest.select("test"))
    if resume is not None:
        adam = resume.require_resumable()
        model = resume.to_model()
        adam = AdamState(
            {k: v.copy() for k, v in adam.m.items()},
            {k: v.copy() for k, v in adam.v.items()},
            adam.t,
            adam.beta1,
            adam.beta2,
            adam.eps,
        )
        start = resume.epoch
        if resume.config != cfg.model:
            raise ConfigError("resume checkpoint was trained with a different model config")
    else:
        model = PNet(cfg.model, seed=cfg.seed)
        adam = AdamState.zeros_like(model.params)
        start = 0
    meta = _meta(cfg, manifest)
    out_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    cache: dict = {}
    train_log = TrainLog()
    best_dice = -1.0
    t0 = time.perf_counter()
    for epoch in range(start, cfg.epochs):
        losses = []
        batches = make_batches(
            manifest, "train", cfg.batch_size, cfg.seed, cfg.augment, epoch=epoch, cache=cache, workers=cfg.workers
        )
        for bi, batch in enumerate(batches):
            rng = substream(cfg.seed, "dropout", epoch, bi)
            loss = pnet_train_step(batch.images, batch.masks, model, adam, cfg.lr, rng)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch + 1}, batch {bi} (samples {batch.stems})")
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        test_iou = test_dice = None
        if has_test and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            total = _total(split_counts(model, manifest, "test", cache))
            test_iou, test_dice = iou(total), dice(total)
            if test_dice > best_dice:
                best_dice = test_dice
                if out_dir is not None:
                    best = Checkpoint.from_model(model, None, epoch + 1, {"seed": cfg.seed}, {**meta, "test_dice": test_dice})
                    save_checkpoint(best, out_dir / "best.ckpt")
        row = EpochRow(epoch + 1, mean_loss, test_iou, test_dice, time.perf_counter() - t0)
        train_log.append(row)
        msg = f"epoch {row.epoch}/{cfg.epochs} loss {mean_loss:.4f}"
        if test_dice is not None:
            msg += f" test iou {test_iou:.4f} dice {test_dice:.4f}"
        if progress is not None:
            progress(msg)
        log.info(msg)

    final = Checkpoint.from_model(model, adam, cfg.epochs, {"seed": cfg.seed, "next_epoch": cfg.epochs}, meta)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.ckpt")
        # wall time kept apart so train_log.csv is reproducible for a fixed seed
        (out_dir / "train_log.csv").write_text(train_log.to_csv(include_timing=False))
        (out_dir / "timing.csv").write_text(train_log.to_csv())
        manifest.write_csv(out_dir / "manifest.csv")
    return final, train_log


def evaluate(
    ckpt: Checkpoint,
    manifest: SampleManifest,
    split: str = "test",
    *,
    method: str = "PNet",
    averaging: str = "micro",
    fps_warmup: int = 10,
    fps_iters: int = 100,
    dump_masks=None,
) -> MetricsReport:
    """Eval-mode metrics on ``split`` plus params, FLOPs and FPS at the data resolution."""
    trained = ckpt.meta.get("target_size")
    if trained is not None and tuple(trained) != tuple(manifest.target_size):
        raise ConfigError(
            f"checkpoint was trained at {trained[0]}x{trained[1]} but the dataset is {manifest.target_size[0]}x{manifest.target_size[1]}"
        )
    if averaging not in ("micro", "per_image"):
        raise ConfigError(f"averaging must be 'micro' or 'per_image', got {averaging!r}")
    model = ckpt.to_model()
    counts = split_counts(model, manifest, split, dump_dir=dump_masks)
    if averaging == "micro":
        total = _total(counts)
        m_iou, m_dice = iou(total), dice(total)
    else:
        m_iou, m_dice = per_image_means(counts)
    w, h = manifest.target_size
    fps, hardware = 0.0, ""
    if fps_iters > 0:
        result = fps_benchmark(model.predict_logits, (1, ckpt.config.input_channels, h, w), fps_warmup, fps_iters)
        fps, hardware = result.fps, result.hardware
    return MetricsReport(
        manifest.name,
        method,
        m_iou,
        m_dice,
        param_count(ckpt.config),
        flop_count(ckpt.config, h, w),
        fps,
        {"split": split, "images": len(counts), "averaging": averaging, "hardware": hardware},
    )
