"""Command-line interface: ``pnet {train,eval,analyze,ablate,predict,synth}``.

Options shared with the INI config file are declared once in ``OPTIONS``;
each key ``foo_bar`` is the flag ``--foo-bar``. Precedence, lowest first:
built-in default, dataset preset, ``--config`` file, explicit flag.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
import argparse
import configparser
import contextlib
import csv
import io
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from pnet.arch.analysis import dilation_pair_covers, effective_kernel, stage_shapes
from pnet.arch.config import DOWNSAMPLE_VARIANTS, SKIP_TAPS, ModelConfig
from pnet.checkpoint import load_checkpoint
from pnet.data.manifest import check_target_size, scan_dataset, split
from pnet.data.samples import AugmentPolicy, load_image, save_mask_png
from pnet.data.synth import make_disk_dataset
from pnet.errors import CheckpointError, ConfigError, DataError, NumericError, ShapeError
from pnet.metrics import REPORT_HEADER, emit_report, predict_mask
from pnet.train import TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# name -> (image size WxH, batch size)
PRESETS = {
    "cvc": ((384, 288), 2),
    "etis": ((512, 384), 2),
    "skin": ((224, 224), 4),
}

DOWNSAMPLE_GRID = ("conv3x3", "conv3x3_maxpool", "conv5x5")
DILATION_GRID = ((2, 5), (2, 6), (2, 7), (3, 8))
_VARIANT_TAGS = {"conv3x3": "3X3", "conv3x3_maxpool": "pool", "conv5x5": "5X5"}


class UsageError(Exception):
    pass


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"size must look like WxH, got {text!r}") from None
    try:
        return check_target_size((w, h))
    except DataError as exc:
        raise UsageError(str(exc)) from None


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).replace(" ", "").split(","))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _size_text(size) -> str:
    return f"{size[0]}x{size[1]}"


@dataclass(frozen=True)
class Option:
    key: str
    parse: object
    default: object
    help: str
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


OPTIONS = {
    o.key: o
    for o in [
        Option("data_dir", str, None, "dataset root holding images/ and masks/"),
        Option("dataset_name", str, "dataset", "dataset label used in reports"),
        Option("preset", str, "none", "dataset preset bundling size and batch size", ("none", *PRESETS)),
        Option("size", parse_size, "224x224", "training resolution WxH (multiples of 16)"),
        Option("split_ratio", float, 0.8, "train fraction of the seeded split"),
        Option("epochs", int, 200, "training epochs"),
        Option("lr", float, 1e-4, "Adam learning rate"),
        Option("batch_size", int, 2, "images per batch"),
        Option("seed", int, 0, "global seed (split, init, shuffle, augmentation, dropout)"),
        Option("eval_every", int, 5, "evaluate the test split every N epochs (0 = never)"),
        Option("out", str, "runs/pnet", "output directory"),
        Option("stage_widths", _ints, "32,64,128,256", "encoder channel widths, comma separated"),
        Option("decoder_width", int, 64, "decoder channel width"),
        Option("num_classes", int, 2, "number of classes"),
        Option("dilation_pair", _ints, "2,6", "Patch block dilation rates r1,r2"),
        Option("downsample_variant", str, "conv5x5", "downsample block", DOWNSAMPLE_VARIANTS),
        Option("dropout_rate", float, 0.3, "decoder dropout rate"),
        Option("skip_tap", str, "post_patch", "where the skip connection reads stage 1", SKIP_TAPS),
        Option("augment", _bool, "true", "enable training-time augmentation"),
        Option("rotate90", _bool, "true", "random 90-degree rotations"),
        Option("mirror_p", float, 0.5, "horizontal mirror probability"),
        Option("brightness", _floats, "0.8,1.2", "brightness factor range lo,hi"),
        Option("contrast", _floats, "0.8,1.2", "contrast factor range lo,hi"),
        Option("coverage", str, "exact", "dilation coverage reading for reports", ("exact", "at_least")),
    ]
}

MODEL_KEYS = ("stage_widths", "decoder_width", "num_classes", "dilation_pair", "downsample_variant", "dropout_rate", "skip_tap")
DATA_KEYS = ("data_dir", "dataset_name", "preset", "size", "split_ratio")
TRAIN_KEYS = ("epochs", "lr", "batch_size", "seed", "eval_every", "out")
AUG_KEYS = ("augment", "rotate90", "mirror_p", "brightness", "contrast")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_options(parser: argparse.ArgumentParser, keys) -> None:
    parser.add_argument("--config", help="INI file whose keys mirror these flags (default: none)")
    for key in keys:
        opt = OPTIONS[key]
        kwargs = {"dest": key, "default": None, "help": f"{opt.help} (default: {opt.default})"}
        if opt.choices:
            kwargs["choices"] = opt.choices
        parser.add_argument(opt.flag, **kwargs)


def read_config_file(path, allowed) -> dict[str, str]:
    """Read ``key = value`` lines; section headers are optional and ignored."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    values = {}
    for section in cp.sections():
        for key, value in cp.items(section, raw=True):
            if key not in allowed:
                raise UsageError(f"unknown config key {key!r} in {path}")
            values[key] = value
    return values


def resolve(args: argparse.Namespace, keys) -> dict:
    """Merge defaults, preset, config file and flags; return parsed values."""
    file_values = read_config_file(args.config, keys) if getattr(args, "config", None) else {}
    raw = {k: OPTIONS[k].default for k in keys}
    preset = getattr(args, "preset", None) or file_values.get("preset") or raw.get("preset", "none")
    if preset not in ("none", *PRESETS):
        raise UsageError(f"unknown preset {preset!r}")
    if preset != "none":
        size, batch = PRESETS[preset]
        for key, value in (("size", _size_text(size)), ("batch_size", batch), ("dataset_name", preset)):
            if key in raw:
                raw[key] = value
    raw.update(file_values)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    parsed = {}
    for key, value in raw.items():
        opt = OPTIONS[key]
        if value is None:
            parsed[key] = None
            continue
        try:
            parsed[key] = opt.parse(value)
        except UsageError:
            raise
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {opt.flag}: {value!r} ({exc})") from None
        if opt.choices and parsed[key] not in opt.choices:
            raise UsageError(f"{opt.flag} must be one of {opt.choices}, got {value!r}")
    return parsed


def model_config(values: dict) -> ModelConfig:
    return ModelConfig(**{k: values[k] for k in MODEL_KEYS})


def augment_policy(values: dict) -> AugmentPolicy | None:
    if not values["augment"]:
        return None
    return AugmentPolicy(values["rotate90"], values["mirror_p"], tuple(values["brightness"]), tuple(values["contrast"]))


def _manifest(values: dict):
    if not values.get("data_dir"):
        raise UsageError("--data-dir is required")
    root = Path(values["data_dir"])
    manifest = scan_dataset(root / "images", root / "masks", values["size"], values["dataset_name"], values["seed"])
    for path in manifest.unmatched:
        print(f"warning: no partner for {path}", file=sys.stderr)
    return split(manifest, values["split_ratio"], values["seed"])


def _train_config(values: dict, out_dir) -> TrainConfig:
    return TrainConfig(
        epochs=values["epochs"],
        lr=values["lr"],
        batch_size=values["batch_size"],
        seed=values["seed"],
        model=model_config(values),
        augment=augment_policy(values),
        eval_every=values["eval_every"],
        checkpoint_dir=str(out_dir),
        workers=_threads(),
    )


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PNET_THREADS", "1")))
    except ValueError:
        return 1


def _write_resolved(values: dict, path: Path) -> None:
    cp = configparser.ConfigParser()
    cp["pnet"] = {}
    for key, value in values.items():
        if value is None:
            continue
        if key == "size":
            text = _size_text(value)
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value).lower() if isinstance(value, bool) else str(value)
        cp["pnet"][key] = text
    with open(path, "w") as fh:
        cp.write(fh)


# -- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    values = resolve(args, DATA_KEYS + TRAIN_KEYS + MODEL_KEYS + AUG_KEYS)
    cfg = _train_config(values, values["out"])
    manifest = _manifest(values)
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(values, out / "config.ini")
    print(f"training on {len(manifest.select('train'))} images, testing on {len(manifest.select('test'))}")
    train(cfg, manifest)
    print(f"checkpoints and logs written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    meta = ckpt.meta
    size = tuple(meta.get("target_size") or parse_size(args.size or "224x224"))
    seed = meta.get("seed", 0)
    ratio = meta.get("split_ratio") or 0.8
    root = Path(args.data_dir)
    manifest = scan_dataset(root / "images", root / "masks", size, meta.get("dataset", "dataset"), seed)
    manifest = split(manifest, ratio, seed)
    report = evaluate(
        ckpt,
        manifest,
        args.split,
        method=args.method,
        averaging=args.averaging,
        fps_warmup=args.fps_warmup,
        fps_iters=args.fps_iters,
        dump_masks=args.dump_masks,
    )
    text = emit_report([report])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if report.meta.get("hardware"):
        print(f"# fps measured on: {report.meta['hardware']}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    values = resolve(args, MODEL_KEYS + ("size", "coverage"))
    config = model_config(values)
    sizes = [parse_size(s) for s in args.sizes] if args.sizes else [values["size"]]
    base = None
    for w, h in sizes:
        trace = stage_shapes(config, h, w)
        print(f"== {w}x{h} (input tensor 1x{config.input_channels}x{h}x{w}) ==")
        print(trace.format_table())
        print(f"total params: {trace.total_params}")
        print(f"total FLOPs: {trace.total_flops}")
        enc = ", ".join(f"{rw}x{rh}" for rh, rw in trace.encoder_resolutions())
        print(f"encoder resolutions (WxH): {enc}")
        if base is None:
            base = (w, h, trace.total_flops)
        else:
            print(f"flop ratio {w}x{h} / {base[0]}x{base[1]} = {trace.total_flops / base[2]:.4f}")
        print()
    r1, r2 = config.dilation_pair
    print(f"dilation pair: ({r1}, {r2})")
    print(f"effective kernels: {effective_kernel(3, r1)} and {effective_kernel(3, r2)}")
    print(f"covers: {str(dilation_pair_covers(r1, r2, values['coverage'])).lower()} ({values['coverage']})")
    return EXIT_OK


def ablation_grid(grid: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if grid == "downsample":
        return [(f"PNet({_VARIANT_TAGS[v]})", replace(base, downsample_variant=v)) for v in DOWNSAMPLE_GRID]
    if grid == "dilation":
        return [(f"PNet({a}{b})", replace(base, dilation_pair=(a, b))) for a, b in DILATION_GRID]
    raise UsageError(f"unknown grid {grid!r}")


def cmd_ablate(args) -> int:
    values = resolve(args, DATA_KEYS + TRAIN_KEYS + MODEL_KEYS + AUG_KEYS + ("coverage",))
    manifest = _manifest(values)
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest.write_csv(out / "manifest.csv")
    base = _train_config(values, out)
    rows = []
    for tag, config in ablation_grid(args.grid, base.model):
        run_dir = out / tag.replace("(", "_").replace(")", "")
        print(f"== {tag} ==")
        ckpt, _ = train(replace(base, model=config, checkpoint_dir=str(run_dir)), manifest)
        report = evaluate(ckpt, manifest, "test", method=tag, fps_warmup=min(2, args.fps_iters), fps_iters=args.fps_iters)
        r1, r2 = config.dilation_pair
        rows.append((report, config.downsample_variant, f"{r1},{r2}", dilation_pair_covers(r1, r2, values["coverage"])))
    rows.sort(key=lambda r: -r[0].dice)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*REPORT_HEADER, "Downsample", "Dilation", "Covers"])
    for report, variant, pair, covers in rows:
        writer.writerow([*report.row(), variant, pair, str(covers).lower()])
    (out / "ablation.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    size = ckpt.meta.get("target_size")
    size = parse_size(args.size) if args.size else tuple(size or (224, 224))
    image = load_image(args.image, size)
    model = ckpt.to_model()
    mask = predict_mask(model.predict_logits(image))[0]
    save_mask_png(mask, args.out)
    print(f"foreground fraction: {float(mask.mean()):.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    root = make_disk_dataset(args.out, args.count, args.image_size, args.seed)
    print(f"wrote {args.count} image/mask pairs under {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pnet", description="PNet segmentation: train, evaluate and analyze.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_options(p, DATA_KEYS + TRAIN_KEYS + MODEL_KEYS + AUG_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and emit a CSV report")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (required)")
    p.add_argument("--data-dir", required=True, help="dataset root holding images/ and masks/ (required)")
    p.add_argument("--split", default="test", choices=("train", "test"), help="split to evaluate (default: test)")
    p.add_argument("--out", default=None, help="write the CSV report here (default: stdout only)")
    p.add_argument("--dump-masks", default=None, help="directory for 0/255 predicted mask PNGs (default: none)")
    p.add_argument("--size", default=None, help="resolution WxH when the checkpoint lacks one (default: from checkpoint)")
    p.add_argument("--method", default="PNet", help="method label in the report (default: PNet)")
    p.add_argument("--averaging", default="micro", choices=("micro", "per_image"), help="IoU/Dice averaging (default: micro)")
    p.add_argument("--fps-warmup", type=int, default=10, help="FPS warmup iterations (default: 10)")
    p.add_argument("--fps-iters", type=int, default=100, help="FPS timed iterations, 0 to skip (default: 100)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="print per-layer shapes, params, FLOPs and dilation geometry")
    _add_options(p, MODEL_KEYS + ("size", "coverage"))
    p.add_argument("--sizes", nargs="+", default=None, metavar="WxH", help="several resolutions; ratios are printed against the first (default: --size)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train and rank the downsample or dilation ablation grid")
    _add_options(p, DATA_KEYS + TRAIN_KEYS + MODEL_KEYS + AUG_KEYS + ("coverage",))
    p.add_argument("--grid", required=True, choices=("downsample", "dilation"), help="which grid to run (required)")
    p.add_argument("--fps-iters", type=int, default=10, help="FPS timed iterations per row, 0 to skip (default: 10)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="segment one image")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (required)")
    p.add_argument("--image", required=True, help="input image (required)")
    p.add_argument("--out", required=True, help="output mask PNG (required)")
    p.add_argument("--size", default=None, help="override resolution WxH (default: the checkpoint's training size)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write the synthetic disks-on-noise dataset")
    p.add_argument("--out", required=True, help="dataset root to create (required)")
    p.add_argument("--count", type=int, default=10, help="number of images (default: 10)")
    p.add_argument("--image-size", type=int, default=96, help="square image side in pixels (default: 96)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = _threads()
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=threads) if "PNET_THREADS" in os.environ else contextlib.nullcontext()
    except ImportError:  # pragma: no cover
        limiter = contextlib.nullcontext()
    try:
        with limiter:
            return args.func(args)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"pnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"pnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"pnet: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
