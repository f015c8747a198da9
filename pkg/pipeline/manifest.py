"""Dataset manifests (CSV `path,label,split`) and stratified splits."""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from utils.errors import ManifestError

logger = logging.getLogger(__name__)

PHOTO = 0
GENERATED = 1
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (12, 3, 5)

LABEL_NAMES = {
    "0": PHOTO, "photo": PHOTO, "photograph": PHOTO, "pg": PHOTO, "real": PHOTO,
    "1": GENERATED, "generated": GENERATED, "t2i": GENERATED, "fake": GENERATED, "ai": GENERATED,
}

Split = Literal["train", "val", "test"]


class ImageRecord(BaseModel):
    """One labelled image of the corpus."""

    path: Path = Field(description="Image file path")
    label: int = Field(description="0 = photograph, 1 = generated", ge=0, le=1)
    split: Optional[Split] = Field(default=None, description="Assigned split, or None before make_split")
    side: Optional[int] = Field(default=None, description="Side length after preprocessing", ge=32)

    @field_validator("side")
    @classmethod
    def _side_multiple_of_32(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value % 32 != 0:
            raise ValueError(f"side must be a multiple of 32, got {value}")
        return value


class DatasetManifest(BaseModel):
    """Records of a corpus with their split assignment."""

    records: List[ImageRecord] = Field(default_factory=list)

    def split(self, name: str) -> List[ImageRecord]:
        if name not in SPLITS:
            raise ManifestError(f"Unknown split '{name}'. Supported: {', '.join(SPLITS)}")
        return [r for r in self.records if r.split == name]

    def class_counts(self) -> Dict[str, Dict[int, int]]:
        """Per split: {label: count}."""
        counts = {name: {PHOTO: 0, GENERATED: 0} for name in SPLITS}
        for record in self.records:
            if record.split is not None:
                counts[record.split][record.label] += 1
        return counts

    @property
    def is_split(self) -> bool:
        return bool(self.records) and all(r.split is not None for r in self.records)

    def require_both_classes(self, name: str) -> List[ImageRecord]:
        """Records of a split, which must contain both classes."""
        records = self.split(name)
        present = {r.label for r in records}
        if present != {PHOTO, GENERATED}:
            missing = sorted({PHOTO, GENERATED} - present)
            raise ManifestError(f"Split '{name}' ({len(records)} records) has no samples of class {missing}")
        return records

    def summary(self) -> str:
        return ", ".join(
            f"{name}: {c[GENERATED]} generated / {c[PHOTO]} photo" for name, c in self.class_counts().items()
        )


def parse_label(value: str) -> Optional[int]:
    return LABEL_NAMES.get(value.strip().lower())


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """
    Read a manifest CSV with header path,label,split.

    Relative image paths are resolved against the manifest's directory. The
    split column may be empty for records that make_split will assign.

    Raises:
        ManifestError: Missing header columns, unknown labels or splits, missing
            files, duplicated paths across splits or an empty class
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")

    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [column for column in ("path", "label", "split") if column not in header]
        if missing:
            raise ManifestError(f"{path}: missing header column(s) {', '.join(missing)}")
        reader.fieldnames = header
        rows = list(reader)

    records: List[ImageRecord] = []
    bad_labels, bad_splits, missing_files = [], [], []
    for row_number, row in enumerate(rows, start=2):
        label = parse_label(row.get("label") or "")
        split = (row.get("split") or "").strip().lower() or None
        image_path = Path((row.get("path") or "").strip())
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        if label is None:
            bad_labels.append(row_number)
            continue
        if split is not None and split not in SPLITS:
            bad_splits.append(row_number)
            continue
        if check_files and not image_path.is_file():
            missing_files.append(row_number)
            continue
        records.append(ImageRecord(path=image_path, label=label, split=split))

    if bad_labels:
        raise ManifestError(f"{path}: unknown label", rows=bad_labels)
    if bad_splits:
        raise ManifestError(f"{path}: unknown split (expected {', '.join(SPLITS)})", rows=bad_splits)
    if missing_files:
        raise ManifestError(f"{path}: image file not found", rows=missing_files)

    _check_disjoint(records)
    for label in (PHOTO, GENERATED):
        if not any(r.label == label for r in records):
            raise ManifestError(f"{path}: class {label} has no records")

    manifest = DatasetManifest(records=records)
    logger.info(f"Loaded {len(records)} records from {path} ({manifest.summary()})")
    return manifest


def _check_disjoint(records: Sequence[ImageRecord]) -> None:
    seen: Dict[Path, Optional[str]] = {}
    clashes = []
    for index, record in enumerate(records):
        if record.path in seen and seen[record.path] != record.split:
            clashes.append(index + 2)
        seen.setdefault(record.path, record.split)
    if clashes:
        raise ManifestError("Image listed in more than one split", rows=clashes)


def _split_sizes(count: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    total = float(sum(ratios))
    train = int(round(count * ratios[0] / total))
    val = min(count - train, int(round(count * ratios[1] / total)))
    return train, val, count - train - val


def make_split(
    records: Sequence[ImageRecord],
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> DatasetManifest:
    """
    Assign train/val/test per class with a seeded shuffle.

    Args:
        records: Records to assign (existing splits are overwritten)
        ratios: Relative train:val:test sizes
        seed: Shuffle seed

    Returns:
        DatasetManifest whose splits partition `records`
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ManifestError(f"Split ratios must be three non-negative numbers with a positive sum, got {ratios}")
    rng = np.random.default_rng(seed)
    assigned: List[Optional[ImageRecord]] = [None] * len(records)

    for label in (PHOTO, GENERATED):
        indices = [i for i, r in enumerate(records) if r.label == label]
        if not indices:
            raise ManifestError(f"Cannot split: class {label} has no records")
        order = rng.permutation(len(indices))
        train, val, _ = _split_sizes(len(indices), ratios)
        for rank, position in enumerate(order):
            split = "train" if rank < train else "val" if rank < train + val else "test"
            index = indices[position]
            assigned[index] = records[index].model_copy(update={"split": split})

    manifest = DatasetManifest(records=assigned)
    logger.info(f"Split {len(records)} records {ratios[0]}:{ratios[1]}:{ratios[2]} with seed {seed} ({manifest.summary()})")
    return manifest


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """Write a manifest CSV with absolute paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "split"])
        for record in manifest.records:
            writer.writerow([str(record.path), record.label, record.split or ""])
    return path
