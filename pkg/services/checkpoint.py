"""Checkpoint files: a JSON header followed by raw little-endian tensor payloads.

Layout:
    8 bytes   magic b"DSNETCKP"
    8 bytes   header length L (uint64, little endian)
    L bytes   UTF-8 JSON header (format version, configs, epoch, optimizer step,
              tensor index with name/shape/dtype/offset/nbytes)
    payloads  concatenated in index order, offsets relative to the payload start

Tensors are stored as float32 ("<f4") when the model runs in 32-bit mode and as
float64 ("<f8") in 64-bit mode.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import ValidationError

from model import DualStreamDetector, ModelConfig, init_parameters
from utils.errors import CheckpointError, DimensionError

from .trainer import OptimizerState, TrainConfig

logger = logging.getLogger(__name__)

MAGIC = b"DSNETCKP"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_DTYPES = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""

    model_config: ModelConfig
    state: Dict[str, np.ndarray]
    train_config: Optional[TrainConfig] = None
    optimizer: Optional[OptimizerState] = None
    epoch: int = 0
    version: int = FORMAT_VERSION
    tensor_dtypes: Dict[str, str] = field(default_factory=dict)

    def build_detector(self) -> DualStreamDetector:
        """Detector with these parameters, in the current numeric mode."""
        params = init_parameters(self.model_config, self.model_config.seed)
        params.load_state_arrays(self.state)
        return DualStreamDetector(self.model_config, params)


def _storage_dtype(array: np.ndarray) -> str:
    return _DTYPES.get(array.dtype, "<f4")


def save_checkpoint(
    path: Union[str, Path],
    detector: DualStreamDetector,
    train_config: Optional[TrainConfig] = None,
    optimizer: Optional[OptimizerState] = None,
    epoch: int = 0,
) -> Path:
    """
    Write a detector (and optionally its optimizer state) to `path`.

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays: Dict[str, np.ndarray] = detector.params.state_arrays()
    if optimizer is not None:
        for name in detector.params.names():
            if name in optimizer.m:
                arrays[f"optimizer.m.{name}"] = optimizer.m[name]
                arrays[f"optimizer.v.{name}"] = optimizer.v[name]

    index: List[dict] = []
    payloads: List[bytes] = []
    offset = 0
    for name, array in arrays.items():
        dtype = _storage_dtype(array)
        blob = np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes()
        index.append({"name": name, "shape": list(array.shape), "dtype": dtype, "offset": offset, "nbytes": len(blob)})
        payloads.append(blob)
        offset += len(blob)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": detector.config.model_dump(),
        "train_config": train_config.model_dump() if train_config is not None else None,
        "epoch": epoch,
        "optimizer_step": optimizer.t if optimizer is not None else None,
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_LENGTH.pack(len(header_bytes)))
        handle.write(header_bytes)
        for blob in payloads:
            handle.write(blob)
    tmp.replace(path)
    logger.info(f"Checkpoint written to {path} (epoch {epoch}, {len(index)} tensors, {offset:,} payload bytes)")
    return path


def _read_header(data: bytes, path: Path) -> dict:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    start = len(MAGIC) + _LENGTH.size
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated before the header length")
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    if len(data) < start + length:
        raise CheckpointError(f"{path}: truncated header ({len(data) - start} of {length} bytes)")
    try:
        header = json.loads(data[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    header["_payload_start"] = start + length
    return header


def load_checkpoint(path: Union[str, Path], expected: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read and validate a checkpoint.

    Args:
        path: Checkpoint file
        expected: When given, the stored model configuration must equal it

    Raises:
        CheckpointError: Bad magic or version, truncation, config mismatch, or a
            tensor whose name or shape does not match the model layout
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"Checkpoint not found: {path}") from None

    header = _read_header(data, path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")

    try:
        model_config = ModelConfig(**header["model_config"])
        train_config = TrainConfig(**header["train_config"]) if header.get("train_config") else None
    except (KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"{path}: invalid stored configuration ({e})") from e
    if expected is not None and expected != model_config:
        changed = [key for key, value in expected.model_dump().items() if model_config.model_dump().get(key) != value]
        raise CheckpointError(f"{path}: checkpoint was trained with a different model config ({', '.join(changed)})")

    layout = init_parameters(model_config, model_config.seed).state_arrays()
    payload_start = header["_payload_start"]
    state: Dict[str, np.ndarray] = {}
    moments: Dict[str, Dict[str, np.ndarray]] = {"m": {}, "v": {}}
    dtypes: Dict[str, str] = {}
    for entry in header.get("tensors", []):
        name = entry["name"]
        shape = tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"])
        begin = payload_start + entry["offset"]
        end = begin + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload for '{name}'")
        array = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=begin).reshape(shape)

        if name.startswith("optimizer."):
            _, kind, param = name.split(".", 2)
            moments[kind][param] = array.astype(array.dtype.newbyteorder("="))
            continue
        if name not in layout:
            raise CheckpointError(f"{path}: unexpected tensor '{name}'")
        if shape != layout[name].shape:
            raise CheckpointError(f"{path}: tensor '{name}' has shape {shape}, model expects {layout[name].shape}")
        state[name] = array.astype(array.dtype.newbyteorder("="))
        dtypes[name] = entry["dtype"]

    missing = [name for name in layout if name not in state]
    if missing:
        raise CheckpointError(f"{path}: missing tensor '{missing[0]}'" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))

    optimizer = None
    if header.get("optimizer_step") is not None:
        optimizer = OptimizerState(m=moments["m"], v=moments["v"], t=int(header["optimizer_step"]))

    logger.info(f"Loaded checkpoint {path} (epoch {header.get('epoch', 0)}, {len(state)} tensors)")
    return Checkpoint(
        model_config=model_config,
        state=state,
        train_config=train_config,
        optimizer=optimizer,
        epoch=int(header.get("epoch", 0)),
        version=version,
        tensor_dtypes=dtypes,
    )


def load_detector(path: Union[str, Path], expected: Optional[ModelConfig] = None) -> DualStreamDetector:
    """Checkpoint straight to a ready detector."""
    checkpoint = load_checkpoint(path, expected)
    try:
        return checkpoint.build_detector()
    except DimensionError as e:
        raise CheckpointError(f"{path}: {e}") from e
