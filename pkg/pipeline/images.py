"""Image decoding, encoding, resizing and cropping.

Images are float64 arrays of shape 3×H×W with values in [0, 1], channel
order R, G, B.
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.errors import ArgumentError, DecodeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255
_WHITESPACE = b" \t\n\r\v\f"


def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            newline = data.find(b"\n", pos)
            pos = len(data) if newline < 0 else newline + 1
        elif data[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DecodeError("Unexpected end of PPM header", offset=start)
    return data[start:pos], pos


def _header_int(data: bytes, pos: int, field: str) -> Tuple[int, int]:
    token, end = _read_token(data, pos)
    if not token.isdigit():
        raise DecodeError(f"Invalid PPM {field} {token!r}", offset=end - len(token))
    return int(token), end


def decode_ppm_bytes(data: bytes) -> np.ndarray:
    """
    Decode a binary P6 PPM with maxval 255.

    Args:
        data: Raw file contents

    Returns:
        3×H×W float64 array, values byte/255
    """
    if data[:2] != PPM_MAGIC:
        raise DecodeError(f"Not a binary PPM: magic {data[:2]!r}", offset=0)
    pos = 2
    width, pos = _header_int(data, pos, "width")
    height, pos = _header_int(data, pos, "height")
    maxval, pos = _header_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"Invalid PPM size {width}×{height}", offset=pos)
    if maxval != PPM_MAXVAL:
        raise DecodeError(f"Unsupported PPM maxval {maxval} (only {PPM_MAXVAL})", offset=pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError("Missing whitespace after PPM header", offset=pos)
    pos += 1

    expected = width * height * 3
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"Truncated PPM payload: {len(payload)} of {expected} bytes", offset=pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def decode_image(path: PathLike) -> np.ndarray:
    """
    Read an image file as a 3×H×W array in [0, 1].

    PPM (P6) is decoded directly and bit-exactly; other containers go through
    Pillow and are converted to RGB.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DecodeError(f"Image not found: {path}") from None
    except OSError as e:
        raise DecodeError(f"Cannot read {path}: {e}") from e

    if data[:2] == PPM_MAGIC or path.suffix.lower() == ".ppm":
        try:
            return decode_ppm_bytes(data)
        except DecodeError as e:
            raise DecodeError(f"{path}: {e}") from e

    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"{path}: unsupported or corrupt image ({e})", offset=0) from e
    return rgb.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """H×W×3 uint8 view of a 3×H×W image: round(clamp(v)·255)."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def encode_ppm(img: np.ndarray, path: PathLike) -> Path:
    """Write a 3×H×W image as binary P6 with maxval 255."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ArgumentError(f"encode_ppm expects a 3×H×W image, got {img.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _, height, width = img.shape
    header = f"P6\n{width} {height}\n{PPM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + to_bytes(img).tobytes())
    return path


def save_grayscale_png(values: np.ndarray, path: PathLike) -> Path:
    """Write an H×W uint8 array as a grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values, dtype=np.uint8)
    if values.ndim != 2:
        raise ArgumentError(f"save_grayscale_png expects an H×W array, got {values.shape}")
    Image.fromarray(values).save(path)
    return path


def _resize_axis(img: np.ndarray, axis: int, out: int) -> np.ndarray:
    size = img.shape[axis]
    if size == out:
        return img
    coords = (np.arange(out) + 0.5) * (size / out) - 0.5
    coords = np.clip(coords, 0.0, size - 1)
    lower = np.floor(coords).astype(np.int64)
    upper = np.minimum(lower + 1, size - 1)
    t = coords - lower
    shape = [1] * img.ndim
    shape[axis] = out
    t = t.reshape(shape)
    a = np.take(img, lower, axis=axis)
    b = np.take(img, upper, axis=axis)
    return a + (b - a) * t


def resize_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    """
    Separable bilinear resize to side×side with half-pixel center alignment.

    Args:
        img: 3×H×W image, H, W >= 2
        side: Output side length

    Returns:
        3×side×side image clamped to [0, 1]
    """
    if side < 1:
        raise ArgumentError(f"resize side must be >= 1, got {side}")
    if img.ndim != 3 or img.shape[1] < 2 or img.shape[2] < 2:
        raise ArgumentError(f"resize_bilinear expects a 3×H×W image with H, W >= 2, got {img.shape}")
    out = _resize_axis(_resize_axis(img, 1, side), 2, side)
    return np.clip(out, 0.0, 1.0)


def center_crop(img: np.ndarray, side: int) -> np.ndarray:
    """Central side×side window of a 3×H×W image."""
    _, height, width = img.shape
    if side < 1 or side > height or side > width:
        raise ArgumentError(f"Cannot center-crop {height}×{width} to {side}×{side}")
    top = (height - side) // 2
    left = (width - side) // 2
    return img[:, top:top + side, left:left + side].copy()
