"""Post-processing transforms replayed during robustness evaluation."""

import logging
import math
from typing import Literal, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import ArgumentError

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SMOOTH_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0
BLUR_SIZE = 5
GAUSSIAN_SIGMA = 1.1
FACTOR_RANGE = (0.5, 2.5)
SHARPNESS_LEVELS = 5

ENHANCE_KINDS = ("chromaticity", "brightness", "contrast", "sharpness")
TRANSFORM_KINDS = ENHANCE_KINDS + ("rotation", "gaussian_blur", "mean_blur")

TransformKind = Literal["chromaticity", "brightness", "contrast", "sharpness", "rotation", "gaussian_blur", "mean_blur"]


class TransformSpec(BaseModel):
    """One post-processing transform; unset parameters are sampled per record."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: TransformKind = Field(description="Transform family")
    factor: Optional[float] = Field(default=None, description="Enhancement factor (enhance kinds only)")
    degrees: Optional[float] = Field(default=None, description="Counter-clockwise rotation in degrees")
    rng_seed: Optional[int] = Field(default=None, description="Seed the sampled parameter was drawn with")

    @model_validator(mode="after")
    def _check_parameters(self) -> "TransformSpec":
        if self.factor is not None:
            if self.kind not in ENHANCE_KINDS:
                raise ValueError(f"'{self.kind}' takes no factor")
            if self.kind == "sharpness":
                if self.factor != int(self.factor) or not 0 <= self.factor < SHARPNESS_LEVELS:
                    raise ValueError(f"sharpness factor must be an integer in 0..{SHARPNESS_LEVELS - 1}")
            elif not FACTOR_RANGE[0] <= self.factor <= FACTOR_RANGE[1]:
                raise ValueError(f"{self.kind} factor must lie in [{FACTOR_RANGE[0]}, {FACTOR_RANGE[1]}]")
        if self.degrees is not None:
            if self.kind != "rotation":
                raise ValueError(f"'{self.kind}' takes no degrees")
            if not 0.0 <= self.degrees < 360.0:
                raise ValueError("rotation degrees must lie in [0, 360)")
        return self

    @property
    def is_pinned(self) -> bool:
        """True when no parameter needs sampling."""
        if self.kind in ENHANCE_KINDS:
            return self.factor is not None
        if self.kind == "rotation":
            return self.degrees is not None
        return True

    def label(self) -> str:
        if self.factor is not None:
            return f"{self.kind}(factor={self.factor:g})"
        if self.degrees is not None:
            return f"{self.kind}(degrees={self.degrees:g})"
        return self.kind


def luma(img: np.ndarray) -> np.ndarray:
    """H×W luma of a 3×H×W image."""
    return np.tensordot(LUMA_WEIGHTS, img, axes=(0, 0))


def _smooth(img: np.ndarray) -> np.ndarray:
    out = img.copy()
    if img.shape[1] < 3 or img.shape[2] < 3:
        return out
    windows = sliding_window_view(img, (3, 3), axis=(1, 2))
    out[:, 1:-1, 1:-1] = np.tensordot(windows, SMOOTH_KERNEL, axes=([3, 4], [0, 1]))
    return out


def enhance(img: np.ndarray, kind: str, factor: float) -> np.ndarray:
    """
    Blend an image with its degenerate version: clamp(d + factor·(img − d)).

    Args:
        img: 3×H×W image in [0, 1]
        kind: chromaticity, brightness, contrast or sharpness
        factor: Blend factor >= 0; 1 returns the input unchanged

    Returns:
        Enhanced image of the same shape
    """
    if kind not in ENHANCE_KINDS:
        raise ArgumentError(f"Unknown enhancement '{kind}'. Supported: {', '.join(ENHANCE_KINDS)}")
    if factor < 0:
        raise ArgumentError(f"Enhancement factor must be >= 0, got {factor}")
    if factor == 1:
        return img.copy()

    if kind == "chromaticity":
        degenerate = np.broadcast_to(luma(img), img.shape)
    elif kind == "brightness":
        degenerate = np.zeros_like(img)
    elif kind == "contrast":
        degenerate = np.full_like(img, luma(img).mean())
    else:
        degenerate = _smooth(img)
    return np.clip(degenerate + factor * (img - degenerate), 0.0, 1.0)


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.round(coords)
    return np.where(np.abs(coords - nearest) < 1e-9, nearest, coords)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """
    Rotate counter-clockwise about the image center on a fixed canvas.

    Inverse mapping with bilinear sampling; samples outside the source are 0.
    """
    if degrees % 360.0 == 0:
        return img.copy()
    _, height, width = img.shape
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0

    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    src_x = _snap(cx + (u - cx) * cos - (v - cy) * sin)
    src_y = _snap(cy + (u - cx) * sin + (v - cy) * cos)

    inside = (src_x >= 0) & (src_x <= width - 1) & (src_y >= 0) & (src_y <= height - 1)
    x = np.clip(src_x, 0, width - 1)
    y = np.clip(src_y, 0, height - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    tx = x - x0
    ty = y - y0

    top = img[:, y0, x0] + (img[:, y0, x1] - img[:, y0, x0]) * tx
    bottom = img[:, y1, x0] + (img[:, y1, x1] - img[:, y1, x0]) * tx
    out = top + (bottom - top) * ty
    return np.clip(np.where(inside, out, 0.0), 0.0, 1.0)


def gaussian_taps(size: int = BLUR_SIZE, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps exp(−d²/2σ²)."""
    d = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    return taps / taps.sum()


def _separable(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    radius = len(taps) // 2
    padded = np.pad(img, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    rows = sliding_window_view(padded, len(taps), axis=1) @ taps
    return sliding_window_view(rows, len(taps), axis=2) @ taps


def blur(img: np.ndarray, kind: str) -> np.ndarray:
    """5×5 Gaussian (σ = 1.1) or mean filter per channel with edge replication."""
    if img.shape[1] < BLUR_SIZE or img.shape[2] < BLUR_SIZE:
        raise ArgumentError(f"blur needs images of at least {BLUR_SIZE}×{BLUR_SIZE}, got {img.shape[1:]}")
    if kind == "gaussian":
        taps = gaussian_taps()
    elif kind == "mean":
        taps = np.full(BLUR_SIZE, 1.0 / BLUR_SIZE)
    else:
        raise ArgumentError(f"Unknown blur '{kind}'. Supported: gaussian, mean")
    return np.clip(_separable(img, taps), 0.0, 1.0)


def sample_transform(kind: str, master_seed: int, record_index: int) -> TransformSpec:
    """
    Draw the parameter of `kind` for one record.

    Pure function of (kind, master_seed, record_index): enhancement factors are
    uniform in [0.5, 2.5], sharpness an integer in 0..4, rotation uniform in
    [0, 360); blurs take no parameter.
    """
    if kind not in TRANSFORM_KINDS:
        raise ArgumentError(f"Unknown transform '{kind}'. Supported: {', '.join(TRANSFORM_KINDS)}")
    rng = np.random.default_rng([master_seed, TRANSFORM_KINDS.index(kind), record_index])
    if kind == "sharpness":
        return TransformSpec(kind=kind, factor=float(rng.integers(0, SHARPNESS_LEVELS)), rng_seed=master_seed)
    if kind in ENHANCE_KINDS:
        return TransformSpec(kind=kind, factor=float(rng.uniform(*FACTOR_RANGE)), rng_seed=master_seed)
    if kind == "rotation":
        return TransformSpec(kind=kind, degrees=float(rng.uniform(0.0, 360.0)), rng_seed=master_seed)
    return TransformSpec(kind=kind, rng_seed=master_seed)


def resolve_transform(spec: TransformSpec, master_seed: int, record_index: int) -> TransformSpec:
    """Pinned specs pass through; others are sampled for the record."""
    if spec.is_pinned:
        return spec
    seed = spec.rng_seed if spec.rng_seed is not None else master_seed
    return sample_transform(spec.kind, seed, record_index)


def apply_transform(img: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply a fully parameterized transform."""
    if not spec.is_pinned:
        raise ArgumentError(f"Transform '{spec.kind}' has no parameter; resolve it first")
    if spec.kind in ENHANCE_KINDS:
        return enhance(img, spec.kind, spec.factor)
    if spec.kind == "rotation":
        return rotate(img, spec.degrees)
    return blur(img, "gaussian" if spec.kind == "gaussian_blur" else "mean")


def default_transforms() -> list:
    """The seven robustness transforms with sampled parameters."""
    return [TransformSpec(kind=kind) for kind in TRANSFORM_KINDS]
