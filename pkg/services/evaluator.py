"""Confusion-based metrics and the robustness harness."""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from pipeline import (
    TRANSFORM_KINDS,
    ImageDataset,
    TransformSpec,
    apply_transform,
    encode_ppm,
    resolve_transform,
)
from utils.errors import MetricsError

logger = logging.getLogger(__name__)


class Scorer(Protocol):
    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        ...


class EvalConfig(BaseModel):
    """Evaluation settings."""

    threshold: float = Field(default=0.5, description="Probability at or above which an image is called generated", ge=0, le=1)
    batch_size: int = Field(default=64, description="Images scored per forward pass", ge=1)
    preprocess: Literal["resize", "center_crop"] = Field(default="resize", description="How test images reach the input side")
    master_seed: int = Field(default=0, description="Seed of per-record transform parameters")
    transforms: List[str] = Field(default=list(TRANSFORM_KINDS), description="Robustness transform kinds")
    audit_count: int = Field(default=0, description="Transformed images per kind dumped as PPM", ge=0)
    workers: int = Field(default=0, description="Threads used to preload images", ge=0)
    cache_images: int = Field(default=1024, description="Decoded images kept in memory (0 = decode every time)", ge=0)

    @field_validator("transforms")
    @classmethod
    def _known_kinds(cls, value: List[str]) -> List[str]:
        unknown = [kind for kind in value if kind not in TRANSFORM_KINDS]
        if unknown:
            raise ValueError(f"Unknown transform kind(s) {unknown}. Supported: {', '.join(TRANSFORM_KINDS)}")
        return value


def confusion_counts(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> Tuple[int, int, int, int]:
    """
    (TP, FN, TN, FP) with generated (label 1) as the positive class.

    A sample is predicted generated when its probability is >= threshold.
    """
    probs = np.asarray(probs).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if probs.shape != labels.shape:
        raise MetricsError(f"{probs.size} probabilities for {labels.size} labels")
    predicted = probs >= threshold
    positive = labels == 1
    tp = int(np.sum(predicted & positive))
    fn = int(np.sum(~predicted & positive))
    tn = int(np.sum(~predicted & ~positive))
    fp = int(np.sum(predicted & ~positive))
    return tp, fn, tn, fp


class MetricsReport(BaseModel):
    """TPR/TNR/ACC in percent with the counts behind them."""

    name: str = Field(default="clean", description="Row label")
    tp: int = Field(ge=0)
    fn: int = Field(ge=0)
    tn: int = Field(ge=0)
    fp: int = Field(ge=0)
    tpr: float = Field(ge=0, le=100)
    tnr: float = Field(ge=0, le=100)
    acc: float = Field(ge=0, le=100)
    threshold: float = 0.5
    per_transform: Dict[str, "MetricsReport"] = Field(default_factory=dict)
    average_acc: Optional[float] = Field(default=None, description="Mean ACC over the transform rows")

    @classmethod
    def from_counts(cls, tp: int, fn: int, tn: int, fp: int, name: str = "clean", threshold: float = 0.5) -> "MetricsReport":
        """
        Raises:
            MetricsError: One class has no samples (TPR or TNR undefined)
        """
        if tp + fn == 0:
            raise MetricsError("TPR is undefined: no generated images in the split")
        if tn + fp == 0:
            raise MetricsError("TNR is undefined: no photographs in the split")
        total = tp + fn + tn + fp
        return cls(
            name=name,
            tp=tp, fn=fn, tn=tn, fp=fp,
            tpr=100.0 * tp / (tp + fn),
            tnr=100.0 * tn / (tn + fp),
            acc=100.0 * (tp + tn) / total,
            threshold=threshold,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def rows(self) -> List["MetricsReport"]:
        return [self] + list(self.per_transform.values())

    def to_table(self) -> str:
        """Human-readable table, rates to one decimal."""
        header = f"{'':<16}{'TPR':>7}{'TNR':>7}{'ACC':>7}{'TP':>7}{'FN':>7}{'TN':>7}{'FP':>7}"
        lines = [header]
        for row in self.rows():
            lines.append(
                f"{row.name:<16}{row.tpr:>7.1f}{row.tnr:>7.1f}{row.acc:>7.1f}"
                f"{row.tp:>7}{row.fn:>7}{row.tn:>7}{row.fp:>7}"
            )
        if self.average_acc is not None:
            lines.append(f"{'average acc':<16}{'':>14}{self.average_acc:>7.1f}")
        return "\n".join(lines)

    def to_key_values(self) -> str:
        """`key=value` lines, one per metric, prefixed by the row name."""
        lines = [f"threshold={self.threshold:g}"]
        for row in self.rows():
            for key in ("tp", "fn", "tn", "fp"):
                lines.append(f"{row.name}.{key}={getattr(row, key)}")
            for key in ("tpr", "tnr", "acc"):
                lines.append(f"{row.name}.{key}={getattr(row, key):.1f}")
        if self.average_acc is not None:
            lines.append(f"average_acc={self.average_acc:.1f}")
        return "\n".join(lines) + "\n"


MetricsReport.model_rebuild()


class Evaluator:
    """Scores datasets with any object exposing `predict_proba`."""

    def __init__(self, scorer: Scorer, config: Optional[EvalConfig] = None):
        """
        Initialize Evaluator.

        Args:
            scorer: Maps an N×3×s×s batch to N generated-class probabilities
            config: Evaluation settings
        """
        self.scorer = scorer
        self.config = config or EvalConfig()

    def score(self, dataset: ImageDataset, hook=None) -> np.ndarray:
        """Probabilities for every record, in dataset order."""
        probs = []
        for start in range(0, len(dataset), self.config.batch_size):
            indices = list(range(start, min(start + self.config.batch_size, len(dataset))))
            images, _ = dataset.batch(indices, hook)
            probs.append(np.asarray(self.scorer.predict_proba(images), dtype=np.float64).reshape(-1))
        return np.concatenate(probs) if probs else np.zeros(0)

    def _check_classes(self, dataset: ImageDataset) -> None:
        if len(dataset) == 0:
            raise MetricsError("Cannot evaluate an empty split")
        present = set(dataset.labels.tolist())
        if present != {0, 1}:
            raise MetricsError(f"Split has only class {sorted(present)}: TPR or TNR is undefined")

    def evaluate(self, dataset: ImageDataset, name: str = "clean") -> MetricsReport:
        self._check_classes(dataset)
        probs = self.score(dataset)
        counts = confusion_counts(probs, dataset.labels, self.config.threshold)
        return MetricsReport.from_counts(*counts, name=name, threshold=self.config.threshold)

    def robustness(
        self,
        dataset: ImageDataset,
        transforms: Optional[Sequence[TransformSpec]] = None,
        audit_dir: Optional[Union[str, Path]] = None,
    ) -> MetricsReport:
        """
        Clean metrics plus one row per transform.

        Every record gets its own parameter, drawn from (master_seed, kind,
        record index) unless the TransformSpec pins it.
        """
        self._check_classes(dataset)
        if transforms is None:
            transforms = [TransformSpec(kind=kind) for kind in self.config.transforms]
        seed = self.config.master_seed
        report = self.evaluate(dataset)

        for spec in transforms:
            audit = Path(audit_dir) / spec.kind if audit_dir is not None and self.config.audit_count else None

            def hook(img: np.ndarray, index: int, spec: TransformSpec = spec, audit: Optional[Path] = audit) -> np.ndarray:
                out = apply_transform(img, resolve_transform(spec, seed, index))
                if audit is not None and index < self.config.audit_count:
                    encode_ppm(out, audit / f"{index:05d}.ppm")
                return out

            probs = self.score(dataset, hook)
            counts = confusion_counts(probs, dataset.labels, self.config.threshold)
            key = spec.kind if spec.kind not in report.per_transform else spec.label()
            row = MetricsReport.from_counts(*counts, name=key, threshold=self.config.threshold)
            report.per_transform[key] = row
            logger.info(f"{spec.label()}: TPR {row.tpr:.1f} TNR {row.tnr:.1f} ACC {row.acc:.1f}")

        if report.per_transform:
            report.average_acc = float(np.mean([row.acc for row in report.per_transform.values()]))
        return report


def evaluate(scorer: Scorer, dataset: ImageDataset, threshold: float = 0.5) -> MetricsReport:
    """Clean TPR/TNR/ACC of `scorer` on a split."""
    return Evaluator(scorer, EvalConfig(threshold=threshold)).evaluate(dataset)


def robustness_eval(
    scorer: Scorer,
    dataset: ImageDataset,
    transforms: Sequence[TransformSpec],
    master_seed: int = 0,
    threshold: float = 0.5,
) -> MetricsReport:
    """Clean metrics with one sub-report per transform and the average ACC."""
    config = EvalConfig(threshold=threshold, master_seed=master_seed)
    return Evaluator(scorer, config).robustness(dataset, transforms)
