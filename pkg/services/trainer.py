"""Adam optimization, learning-rate schedule and the epoch loop."""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from engine import Tensor, backward, bce_loss, get_numeric_mode, no_grad, sigmoid
from model import DualStreamDetector
from pipeline import DatasetManifest, ImageDataset
from utils.errors import TrainingError

from .evaluator import EvalConfig, Evaluator, MetricsReport

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Optimization settings; defaults are the full-scale training recipe."""

    lr0: float = Field(default=2e-4, description="Initial learning rate", gt=0)
    batch_size: int = Field(default=64, description="Mini-batch size", ge=1)
    epochs: int = Field(default=120, description="Training epochs (0 reports initialization metrics only)", ge=0)
    lr_decay: float = Field(default=0.1, description="Multiplicative learning-rate decay", gt=0, le=1)
    decay_every: int = Field(default=30, description="Epochs between learning-rate decays", ge=1)
    beta1: float = Field(default=0.9, description="Adam first-moment decay", ge=0, lt=1)
    beta2: float = Field(default=0.999, description="Adam second-moment decay", ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, description="Adam denominator epsilon", gt=0)
    seed: int = Field(default=0, description="Shuffle seed")
    numeric_mode: str = Field(default="float32", description="float32 for training, float64 for verification")
    split_ratios: List[float] = Field(default=[12, 3, 5], description="train:val:test ratios for unsplit manifests")
    split_seed: int = Field(default=0, description="Seed of the stratified split")
    workers: int = Field(default=0, description="Threads used to preload images (0 = sequential)", ge=0)
    cache_images: int = Field(default=1024, description="Decoded images kept in memory per split (0 = decode every time)", ge=0)

    @field_validator("numeric_mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value not in ("float32", "float64"):
            raise ValueError(f"numeric_mode must be float32 or float64, got '{value}'")
        return value

    @field_validator("split_ratios")
    @classmethod
    def _three_ratios(cls, value: List[float]) -> List[float]:
        if len(value) != 3 or any(r < 0 for r in value) or sum(value) <= 0:
            raise ValueError(f"split_ratios needs three non-negative numbers with a positive sum, got {value}")
        return value


@dataclass
class OptimizerState:
    """Adam moments per parameter name and the step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    """lr0 · decay^floor(epoch / decay_every), epochs counted from 0."""
    if epoch < 0:
        raise TrainingError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.lr_decay ** (epoch // config.decay_every)


def adam_step(
    named_params: Iterable[Tuple[str, Tensor]],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    Apply one bias-corrected Adam update in place using each tensor's `.grad`.

    Args:
        named_params: (name, tensor) pairs; every tensor must carry a gradient
        state: Moments, created on first use; `t` is incremented once
        lr: Step size
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator epsilon

    Raises:
        TrainingError: A parameter has no gradient
    """
    named_params = list(named_params)
    missing = [name for name, tensor in named_params if tensor.grad is None]
    if missing:
        raise TrainingError(f"Missing gradient for parameter '{missing[0]}'" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))

    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, tensor in named_params:
        g = tensor.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m.astype(tensor.dtype, copy=False)
        state.v[name] = v.astype(tensor.dtype, copy=False)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        tensor.data -= update.astype(tensor.dtype, copy=False)


class EpochLog(BaseModel):
    """Metrics of one epoch (epoch 0 = before any update)."""

    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_tpr: Optional[float] = None
    val_tnr: Optional[float] = None
    val_acc: Optional[float] = None
    seconds: float = 0.0


class TrainingReport(BaseModel):
    """Outcome of a fit run."""

    history: List[EpochLog] = Field(default_factory=list)
    best_epoch: Optional[int] = Field(default=None, description="Epoch with the best validation accuracy")
    best_val_acc: Optional[float] = None
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None

    @property
    def initial(self) -> EpochLog:
        return self.history[0]

    @property
    def final(self) -> EpochLog:
        return self.history[-1]


class TrainingCallback:
    """Hooks called by Trainer.fit; override what you need."""

    def on_epoch_end(self, log: EpochLog) -> None:
        pass

    def on_train_end(self, report: TrainingReport) -> None:
        pass


class JsonlLogCallback(TrainingCallback):
    """Append one JSON object per epoch to a log file."""

    FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_tpr", "val_tnr", "val_acc")

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def on_epoch_end(self, log: EpochLog) -> None:
        record = {key: getattr(log, key) for key in self.FIELDS}
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record) + "\n")


class Trainer:
    """Fits a detector with Adam on a training dataset."""

    def __init__(self, detector: DualStreamDetector, config: TrainConfig):
        """
        Initialize Trainer.

        Args:
            detector: Model to train (updated in place)
            config: Optimization settings
        """
        self.detector = detector
        self.config = config
        self.optimizer = OptimizerState()
        self.start_epoch = 0

    def restore(self, optimizer: Optional[OptimizerState], epoch: int) -> None:
        """Resume from a checkpointed optimizer state after `epoch` finished epochs."""
        if optimizer is not None:
            self.optimizer = optimizer
        self.start_epoch = epoch
        logger.info(f"Resuming after epoch {epoch} (optimizer step {self.optimizer.t})")

    def _batches(self, order: np.ndarray) -> List[np.ndarray]:
        size = self.config.batch_size
        return [order[i:i + size] for i in range(0, len(order), size)]

    def _train_step(self, images: np.ndarray, labels: np.ndarray, epoch: int, batch: int, lr: float) -> Tuple[float, int]:
        params = self.detector.params
        logits = self.detector.forward(Tensor(images), training=True)
        loss = bce_loss(sigmoid(logits), labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"Non-finite loss {value} at epoch {epoch}, batch {batch}")
        params.zero_grad()
        backward(loss)
        adam_step(params.named_parameters(), self.optimizer, lr, self.config.beta1, self.config.beta2, self.config.adam_eps)
        correct = int(np.sum((logits.data >= 0).astype(np.int64) == labels))
        return value, correct

    def _initial_log(self, train: ImageDataset) -> EpochLog:
        total_loss = 0.0
        correct = 0
        order = np.arange(len(train))
        with no_grad():
            for indices in self._batches(order):
                images, labels = train.batch(indices)
                logits = self.detector.forward(Tensor(images), training=False)
                total_loss += bce_loss(sigmoid(logits), labels).item() * len(indices)
                correct += int(np.sum((logits.data >= 0).astype(np.int64) == labels))
        return EpochLog(
            epoch=self.start_epoch,
            lr=lr_at_epoch(self.start_epoch, self.config),
            train_loss=total_loss / len(train),
            train_acc=100.0 * correct / len(train),
        )

    def _validate(self, evaluator: Optional[Evaluator], val: Optional[ImageDataset], log: EpochLog) -> Optional[MetricsReport]:
        if evaluator is None or val is None:
            return None
        report = evaluator.evaluate(val)
        log.val_tpr, log.val_tnr, log.val_acc = report.tpr, report.tnr, report.acc
        return report

    def fit(
        self,
        train: ImageDataset,
        val: Optional[ImageDataset] = None,
        callbacks: Sequence[TrainingCallback] = (),
        output_dir: Optional[Union[str, Path]] = None,
    ) -> TrainingReport:
        """
        Run the epoch loop.

        Each epoch shuffles with a seeded generator, keeps the final partial
        batch, and steps Adam once per batch. When a validation set with both
        classes is given, the checkpoint with the best validation accuracy is
        kept as best.ckpt.

        Args:
            train: Training images
            val: Optional validation images
            callbacks: Receive every EpochLog (epoch 0 included)
            output_dir: Where best.ckpt and last.ckpt are written

        Returns:
            TrainingReport
        """
        # Imported lazily: checkpoint imports TrainConfig from this module
        from .checkpoint import save_checkpoint

        if len(train) == 0:
            raise TrainingError("Training set is empty")
        if get_numeric_mode() != self.config.numeric_mode:
            logger.warning(f"Numeric mode is {get_numeric_mode()}, config asks for {self.config.numeric_mode}")

        out = Path(output_dir) if output_dir is not None else None
        evaluator = None
        if val is not None and len(set(val.labels.tolist())) == 2:
            evaluator = Evaluator(self.detector, EvalConfig(batch_size=self.config.batch_size))
        elif val is not None:
            logger.warning("Validation set lacks one class; skipping validation metrics")

        report = TrainingReport()
        rng = np.random.default_rng(self.config.seed)
        for _ in range(self.start_epoch):
            rng.permutation(len(train))

        initial = self._initial_log(train)
        self._validate(evaluator, val, initial)
        self._record(report, initial, callbacks)
        if initial.val_acc is not None:
            report.best_epoch, report.best_val_acc = initial.epoch, initial.val_acc

        logger.info(
            f"Training {self.detector!r} for {self.config.epochs} epoch(s) on {len(train)} images, "
            f"batch {self.config.batch_size}, lr0 {self.config.lr0:g}"
        )
        for epoch in range(self.start_epoch, self.start_epoch + self.config.epochs):
            started = time.perf_counter()
            lr = lr_at_epoch(epoch, self.config)
            order = rng.permutation(len(train))
            total_loss = 0.0
            correct = 0
            for batch_index, indices in enumerate(self._batches(order)):
                images, labels = train.batch(indices)
                loss, hits = self._train_step(images, labels, epoch + 1, batch_index, lr)
                total_loss += loss * len(indices)
                correct += hits
                logger.debug(f"epoch {epoch + 1} batch {batch_index}: loss {loss:.6f}")

            log = EpochLog(
                epoch=epoch + 1,
                lr=lr,
                train_loss=total_loss / len(train),
                train_acc=100.0 * correct / len(train),
            )
            self._validate(evaluator, val, log)
            log.seconds = time.perf_counter() - started
            self._record(report, log, callbacks)

            if out is not None:
                report.last_checkpoint = save_checkpoint(
                    out / "last.ckpt", self.detector, self.config, self.optimizer, epoch + 1
                )
            if log.val_acc is not None and (report.best_val_acc is None or log.val_acc > report.best_val_acc):
                report.best_epoch, report.best_val_acc = log.epoch, log.val_acc
                if out is not None:
                    report.best_checkpoint = save_checkpoint(
                        out / "best.ckpt", self.detector, self.config, self.optimizer, epoch + 1
                    )

        if out is not None and report.last_checkpoint is None:
            report.last_checkpoint = save_checkpoint(
                out / "last.ckpt", self.detector, self.config, self.optimizer, self.start_epoch
            )
        if out is not None and report.best_checkpoint is None:
            report.best_checkpoint = report.last_checkpoint

        for callback in callbacks:
            callback.on_train_end(report)
        logger.info(
            f"Training finished: loss {report.final.train_loss:.4f}, train ACC {report.final.train_acc:.1f}"
            + (f", best val ACC {report.best_val_acc:.1f} at epoch {report.best_epoch}" if report.best_val_acc is not None else "")
        )
        return report

    def _record(self, report: TrainingReport, log: EpochLog, callbacks: Sequence[TrainingCallback]) -> None:
        report.history.append(log)
        for callback in callbacks:
            callback.on_epoch_end(log)
        val = f", val TPR {log.val_tpr:.1f} TNR {log.val_tnr:.1f} ACC {log.val_acc:.1f}" if log.val_acc is not None else ""
        logger.info(f"epoch {log.epoch}: lr {log.lr:.2e}, loss {log.train_loss:.4f}, train ACC {log.train_acc:.1f}{val}")


def fit(
    detector: DualStreamDetector,
    manifest: DatasetManifest,
    config: TrainConfig,
    callbacks: Sequence[TrainingCallback] = (),
    output_dir: Optional[Union[str, Path]] = None,
) -> TrainingReport:
    """
    Train on the manifest's train split and validate on its val split.

    Raises:
        ManifestError: The train split lacks a class
    """
    train_records = manifest.require_both_classes("train")
    side = detector.config.input_side
    train = ImageDataset(train_records, side, cache_size=config.cache_images)
    train.preload(config.workers)
    val_records = manifest.split("val")
    val = ImageDataset(val_records, side, cache_size=config.cache_images) if val_records else None
    if val is not None:
        val.preload(config.workers)
    return Trainer(detector, config).fit(train, val, callbacks, output_dir)
