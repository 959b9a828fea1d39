"""Foreground IoU / Dice, throughput, and Table-1 style CSV reports."""
import csv
import io
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from pnet.errors import ShapeError

REPORT_HEADER = ("Dataset", "Method", "IOU", "Dice", "Params", "FLOPs", "FPS")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def predict_mask(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis of (N, K, H, W) logits; ties go to the lower class."""
    if logits.ndim != 4 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be (N, K>=2, H, W), got {logits.shape}", dim="channels")
    return logits.argmax(axis=1)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Foreground (class 1) confusion counts of two binary masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth {gt.shape}", dim="mask")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def accumulate_confusion(pairs) -> ConfusionCounts:
    """Micro-accumulate counts over an iterable of ``(pred, gt)`` pairs."""
    total = ConfusionCounts()
    for pred, gt in pairs:
        total = total + confusion(pred, gt)
    return total


def iou(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def per_image_means(counts: list[ConfusionCounts]) -> tuple[float, float]:
    """Mean of per-image IoU and Dice (the non-default averaging mode)."""
    if not counts:
        raise ValueError("no images to average")
    return float(np.mean([iou(c) for c in counts])), float(np.mean([dice(c) for c in counts]))


def hardware_description() -> str:
    return f"{platform.processor() or platform.machine()}; {os.cpu_count()} cpu; {platform.system()} {platform.release()}"


@dataclass(frozen=True)
class FpsResult:
    fps: float
    seconds: float
    iters: int
    hardware: str


def fps_benchmark(forward, input_shape, warmup: int = 10, iters: int = 100, clock=time.perf_counter, dtype=np.float32) -> FpsResult:
    """Forward-only frames per second at batch 1.

    ``forward`` is any callable taking one (1, C, H, W) array, typically
    ``model.predict_logits``. ``clock`` is injectable for testing.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    shape = tuple(input_shape)
    if len(shape) == 3:
        shape = (1, *shape)
    if shape[0] != 1:
        raise ShapeError(f"FPS is measured at batch 1, got input shape {shape}", dim="batch")
    x = np.random.default_rng(0).random(shape, dtype=np.float64).astype(dtype)
    for _ in range(warmup):
        forward(x)
    start = clock()
    for _ in range(iters):
        forward(x)
    seconds = clock() - start
    return FpsResult(iters / seconds if seconds > 0 else float("inf"), seconds, iters, hardware_description())


@dataclass
class MetricsReport:
    dataset: str
    method: str
    iou: float
    dice: float
    params: int
    flops: int
    fps: float
    meta: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        return [
            self.dataset,
            self.method,
            f"{self.iou:.4f}",
            f"{self.dice:.4f}",
            str(self.params),
            str(self.flops),
            f"{self.fps:.4f}",
        ]


def emit_report(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()
