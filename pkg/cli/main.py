"""Command-line entry point: argument parsing and command dispatch."""

import argparse
import logging
import platform
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from engine import Tensor, get_numeric_mode, no_grad, numeric_mode, set_numeric_mode
from model import DualStreamDetector
from pipeline import (
    TRANSFORM_KINDS,
    ImageDataset,
    TransformSpec,
    decode_image,
    load_manifest,
    make_split,
    resize_bilinear,
    save_grayscale_png,
    save_manifest,
)
from services import (
    Evaluator,
    JsonlLogCallback,
    MetricsReport,
    Trainer,
    format_rows,
    load_checkpoint,
    load_detector,
    run_gradcheck_suite,
)
from srm import build_filter_bank, extract_residuals, residual_channel_names
from utils.errors import ArgumentError, ConfigError, DetectorError
from utils.logger import setup_logging

from . import __version__
from .config import RunConfig, load_run_config

logger = logging.getLogger(__name__)

PROG = "dsnet"
BORDER = 2
MID_GRAY = 128


class UsageError(ConfigError):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value (repeatable)")
    parser.add_argument("--output-dir", type=Path, help="Directory receiving the run's outputs")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR (default: LOG_LEVEL or INFO)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Dual-stream detector of AI-generated images")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    init = commands.add_parser("init-config", help="Write a commented default configuration")
    init.add_argument("path", type=Path, nargs="?", default=Path("dsnet.toml"))
    init.add_argument("--force", action="store_true", help="Overwrite an existing file")
    init.add_argument("--log-level")

    train = commands.add_parser("train", help="Train a detector")
    _common(train)
    train.add_argument("--manifest", type=Path)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float, dest="lr0")
    train.add_argument("--seed", type=int)
    train.add_argument("--side", type=int, dest="input_side")
    train.add_argument("--resume", type=Path, help="Continue from a checkpoint")

    for name, help_text in (("eval", "Clean TPR/TNR/ACC on a split"),
                            ("robustness", "Metrics under post-processing transforms")):
        sub = commands.add_parser(name, help=help_text)
        _common(sub)
        sub.add_argument("--checkpoint", type=Path)
        sub.add_argument("--manifest", type=Path)
        sub.add_argument("--split", default="test", choices=["train", "val", "test"])
        sub.add_argument("--threshold", type=float)
        if name == "robustness":
            sub.add_argument("--transforms", help=f"Comma-separated subset of {','.join(TRANSFORM_KINDS)}")
            sub.add_argument("--master-seed", type=int)
            sub.add_argument("--audit", type=int, dest="audit_count", help="Dump N transformed images per kind")

    grad = commands.add_parser("gradcheck", help="Finite-difference gradient suite")
    grad.add_argument("--side", type=int, default=32)
    grad.add_argument("--heads", type=int, default=8)
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--families", help="Comma-separated subset of layer families")
    grad.add_argument("--log-level")

    residuals = commands.add_parser("dump-residuals", help="Write the SRM residual maps of an image")
    residuals.add_argument("image", type=Path)
    _common(residuals)
    residuals.add_argument("--side", type=int, help="Resize before filtering")
    residuals.add_argument("--filters", help="Comma-separated kernel or channel names (e.g. first_order.e,G.square_5x5)")
    residuals.add_argument("--keep-border", action="store_true", help="Keep the zero-padding ring")

    features = commands.add_parser("dump-features", help="Write content-head and pre-attention feature maps")
    _common(features)
    features.add_argument("image", type=Path)
    features.add_argument("--checkpoint", type=Path)

    version = commands.add_parser("version", help="Print build metadata")
    version.add_argument("--log-level")
    return parser


def _load(args: argparse.Namespace, model: Optional[Dict] = None, train: Optional[Dict] = None,
          evaluation: Optional[Dict] = None) -> RunConfig:
    paths = {
        "output_dir": getattr(args, "output_dir", None),
        "manifest": getattr(args, "manifest", None),
        "checkpoint": getattr(args, "checkpoint", None) or getattr(args, "resume", None),
    }
    return load_run_config(
        args.config,
        args.overrides,
        flags={"model": model or {}, "train": train or {}, "eval": evaluation or {}, "paths": paths},
    )


def _start(config: RunConfig, command: str, log_level: Optional[str]) -> Path:
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    log_file = config.paths.log_file
    if log_file is not None and not log_file.is_absolute():
        log_file = out / log_file
    setup_logging(log_level, log_file)
    set_numeric_mode(config.train.numeric_mode)
    config.write_resolved(out, note=f"command: {command}")
    return out


def _manifest(config: RunConfig):
    if config.paths.manifest is None:
        raise ConfigError("No manifest given (--manifest or paths.manifest)")
    manifest = load_manifest(config.paths.manifest)
    if not manifest.is_split:
        manifest = make_split(manifest.records, tuple(config.train.split_ratios), config.train.split_seed)
    return manifest


def cmd_init_config(args: argparse.Namespace) -> int:
    setup_logging(args.log_level)
    if args.path.exists() and not args.force:
        raise ConfigError(f"{args.path} exists (use --force to overwrite)")
    args.path.parent.mkdir(parents=True, exist_ok=True)
    args.path.write_text(RunConfig().render(note="defaults"), encoding="utf-8")
    print(args.path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load(
        args,
        model={"input_side": args.input_side},
        train={"epochs": args.epochs, "batch_size": args.batch_size, "lr0": args.lr0, "seed": args.seed},
    )
    out = _start(config, "train", args.log_level)

    manifest = _manifest(config)
    save_manifest(manifest, out / "split_manifest.csv")

    trainer_state = None
    if args.resume is not None:
        checkpoint = load_checkpoint(args.resume, config.model if config.explicit("model") else None)
        detector = checkpoint.build_detector()
        trainer_state = (checkpoint.optimizer, checkpoint.epoch)
    else:
        detector = DualStreamDetector(config.model)

    train_set = ImageDataset(manifest.require_both_classes("train"), detector.config.input_side,
                             cache_size=config.train.cache_images)
    train_set.preload(config.train.workers)
    val_records = manifest.split("val")
    val_set = (ImageDataset(val_records, detector.config.input_side, cache_size=config.train.cache_images)
               if val_records else None)
    if val_set is not None:
        val_set.preload(config.train.workers)

    trainer = Trainer(detector, config.train)
    if trainer_state is not None:
        trainer.restore(*trainer_state)
    report = trainer.fit(train_set, val_set, [JsonlLogCallback(out / "train_log.jsonl")], out)

    (out / "training_report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    final = report.final
    print(f"epochs={final.epoch} train_loss={final.train_loss:.6f} train_acc={final.train_acc:.1f}")
    if report.best_val_acc is not None:
        print(f"best_epoch={report.best_epoch} best_val_acc={report.best_val_acc:.1f}")
    print(f"checkpoint={report.best_checkpoint}")
    return 0


def _evaluation_setup(args: argparse.Namespace, command: str, eval_flags: Dict):
    config = _load(args, evaluation=eval_flags)
    out = _start(config, command, args.log_level)
    if config.paths.checkpoint is None:
        raise ConfigError("No checkpoint given (--checkpoint or paths.checkpoint)")
    detector = load_detector(config.paths.checkpoint, config.model if config.explicit("model") else None)
    manifest = _manifest(config)
    dataset = ImageDataset(manifest.split(args.split), detector.config.input_side, config.eval.preprocess,
                           config.eval.cache_images)
    dataset.preload(config.eval.workers)
    return config, out, detector, dataset


def _emit(report: MetricsReport, out: Path) -> None:
    table = report.to_table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    (out / "metrics.txt").write_text(report.to_key_values(), encoding="utf-8")
    print(table)
    logger.info(f"Reports written to {out / 'report.txt'} and {out / 'metrics.txt'}")


def cmd_eval(args: argparse.Namespace) -> int:
    config, out, detector, dataset = _evaluation_setup(args, "eval", {"threshold": args.threshold})
    report = Evaluator(detector, config.eval).evaluate(dataset)
    _emit(report, out)
    return 0


def cmd_robustness(args: argparse.Namespace) -> int:
    kinds = [k.strip() for k in args.transforms.split(",") if k.strip()] if args.transforms else None
    flags = {
        "threshold": args.threshold,
        "master_seed": args.master_seed,
        "transforms": kinds,
        "audit_count": args.audit_count,
    }
    config, out, detector, dataset = _evaluation_setup(args, "robustness", flags)
    transforms = [TransformSpec(kind=kind) for kind in config.eval.transforms]
    report = Evaluator(detector, config.eval).robustness(dataset, transforms, out / "audit")
    _emit(report, out)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    setup_logging(args.log_level)
    families = [f.strip() for f in args.families.split(",")] if args.families else None
    rows = run_gradcheck_suite(args.side, args.heads, args.seed, families)
    print(format_rows(rows))
    failed = [row.family for row in rows if not row.passed]
    if failed:
        print(f"error: gradient check failed for {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def normalize_map(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; maps without dynamic range become mid-gray."""
    low, high = float(values.min()), float(values.max())
    if high - low <= 1e-12 * max(1.0, abs(high), abs(low)):
        return np.full(values.shape, MID_GRAY, dtype=np.uint8)
    return np.round((values - low) / (high - low) * 255.0).astype(np.uint8)


def _select(names: List[str], wanted: Optional[str]) -> List[int]:
    if not wanted:
        return list(range(len(names)))
    keys = [w.strip() for w in wanted.split(",") if w.strip()]
    chosen = [i for i, name in enumerate(names) if any(name == k or name.endswith(f".{k}") for k in keys)]
    if not chosen:
        raise ArgumentError(f"No residual maps match {keys}")
    return chosen


def cmd_dump_residuals(args: argparse.Namespace) -> int:
    out = _start(_load(args), "dump-residuals", args.log_level)
    img = decode_image(args.image)
    if args.side:
        img = resize_bilinear(img, args.side)
    bank = build_filter_bank()
    names = residual_channel_names(bank)
    indices = _select(names, args.filters)
    with numeric_mode("float64"), no_grad():
        maps = extract_residuals(Tensor(img[None]), bank).numpy()[0]
    if not args.keep_border:
        if min(maps.shape[1:]) <= 2 * BORDER:
            raise ArgumentError(f"Image {maps.shape[1]}×{maps.shape[2]} is too small to crop a {BORDER}-pixel border")
        maps = maps[:, BORDER:-BORDER, BORDER:-BORDER]
    for i in indices:
        save_grayscale_png(normalize_map(maps[i]), out / f"{i:02d}_{names[i]}.png")
    print(f"{len(indices)} residual maps written to {out}")
    return 0


def cmd_dump_features(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _start(config, "dump-features", args.log_level)
    if config.paths.checkpoint is not None:
        detector = load_detector(config.paths.checkpoint, config.model if config.explicit("model") else None)
    else:
        detector = DualStreamDetector(config.model)
    img = resize_bilinear(decode_image(args.image), detector.config.input_side)
    trace: Dict[str, Tensor] = {}
    with no_grad():
        detector.forward(img[None], training=False, trace=trace)

    written = 0
    if "content.difference" in trace:
        difference = trace["content.difference"].numpy()[0]
        for channel in range(difference.shape[0]):
            save_grayscale_png(normalize_map(difference[channel]), out / f"content_difference_{channel}.png")
            written += 1
    for stream in ("residual", "content"):
        key = f"{stream}.features"
        if key in trace:
            save_grayscale_png(normalize_map(trace[key].numpy()[0].mean(axis=0)), out / f"{stream}_features_mean.png")
            written += 1
    print(f"{written} feature maps written to {out}")
    return 0


def cmd_version(args: argparse.Namespace) -> int:
    print(f"{PROG} {__version__}")
    print(f"python {platform.python_version()}")
    print(f"numpy {np.__version__}")
    print(f"numeric_mode {get_numeric_mode()}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "init-config": cmd_init_config,
    "train": cmd_train,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "gradcheck": cmd_gradcheck,
    "dump-residuals": cmd_dump_residuals,
    "dump-features": cmd_dump_features,
    "version": cmd_version,
}


def dispatch(command: str, args: argparse.Namespace) -> int:
    """Run one command and return its exit status."""
    handler = COMMANDS.get(command)
    if handler is None:
        raise UsageError(f"Unknown command '{command}'. Supported: {', '.join(COMMANDS)}")
    return handler(args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and dispatch.

    Returns:
        0 success, 1 usage or bad config, 2 data error, 3 numeric failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        return dispatch(args.command, args)
    except DetectorError as e:
        logger.debug(f"Command failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, PermissionError) as e:
        logger.debug(f"I/O failure: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
