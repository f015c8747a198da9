"""The 30 basic SRM high-pass kernels and residual extraction.

Kernels are generated from direction vectors and stored 5×5, centered, with
their divisors already applied. Canonical order is class-major then
direction-minor:

    first_order  ×8   divisor 1
    second_order ×4   divisor 2
    third_order  ×8   divisor 3
    square_3x3   ×1   divisor 4
    square_5x5   ×1   divisor 12
    edge_3x3     ×4   divisor 4
    edge_5x5     ×4   divisor 12
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from engine import Tensor, conv2d, reshape
from utils.errors import DimensionError

logger = logging.getLogger(__name__)

KERNEL_SIZE = 5
CENTER = KERNEL_SIZE // 2

# (row, col) steps, counter-clockwise starting east
_DIRECTIONS_8: Tuple[Tuple[str, Tuple[int, int]], ...] = (
    ("e", (0, 1)),
    ("ne", (-1, 1)),
    ("n", (-1, 0)),
    ("nw", (-1, -1)),
    ("w", (0, -1)),
    ("sw", (1, -1)),
    ("s", (1, 0)),
    ("se", (1, 1)),
)
_DIRECTIONS_4 = _DIRECTIONS_8[:4]

_SQUARE_3X3 = np.array([
    [-1, 2, -1],
    [2, -4, 2],
    [-1, 2, -1],
], dtype=np.float64)

_SQUARE_5X5 = np.array([
    [-1, 2, -2, 2, -1],
    [2, -6, 8, -6, 2],
    [-2, 8, -12, 8, -2],
    [2, -6, 8, -6, 2],
    [-1, 2, -2, 2, -1],
], dtype=np.float64)

# Edge kernels keep the top half of the square kernels; rotations give the other three
_EDGE_3X3 = np.vstack([_SQUARE_3X3[:2], np.zeros((1, 3))])
_EDGE_5X5 = np.vstack([_SQUARE_5X5[:3], np.zeros((2, 5))])
_EDGE_ORIENTATIONS = ("up", "left", "down", "right")


@dataclass(frozen=True)
class SrmKernel:
    """One high-pass kernel: name, 5×5 taps (pre-divided) and its divisor."""

    name: str
    taps: np.ndarray
    divisor: float


@dataclass(frozen=True)
class FilterBank:
    """Immutable, ordered bank of SRM kernels."""

    kernels: Tuple[SrmKernel, ...]

    def __len__(self) -> int:
        return len(self.kernels)

    @property
    def names(self) -> List[str]:
        return [k.name for k in self.kernels]

    def weights(self) -> np.ndarray:
        """Stacked taps, shape (len, 1, 5, 5), float64."""
        return np.stack([k.taps for k in self.kernels])[:, None, :, :]


def _embed(small: np.ndarray) -> np.ndarray:
    taps = np.zeros((KERNEL_SIZE, KERNEL_SIZE))
    offset = (KERNEL_SIZE - small.shape[0]) // 2
    taps[offset:offset + small.shape[0], offset:offset + small.shape[1]] = small
    return taps


def _line_kernel(coefficients: Sequence[Tuple[int, float]], step: Tuple[int, int]) -> np.ndarray:
    """Place coefficients at CENTER + k·step for each (k, value)."""
    taps = np.zeros((KERNEL_SIZE, KERNEL_SIZE))
    for k, value in coefficients:
        taps[CENTER + k * step[0], CENTER + k * step[1]] = value
    return taps


def _kernel(name: str, integer_taps: np.ndarray, divisor: float) -> SrmKernel:
    taps = integer_taps / divisor
    taps.setflags(write=False)
    return SrmKernel(name=name, taps=taps, divisor=divisor)


@lru_cache(maxsize=1)
def build_filter_bank() -> FilterBank:
    """
    Build the canonical 30-kernel bank.

    Returns:
        FilterBank with every kernel summing to zero
    """
    kernels: List[SrmKernel] = []

    for label, step in _DIRECTIONS_8:
        kernels.append(_kernel(f"first_order.{label}", _line_kernel([(0, -1), (1, 1)], step), 1.0))
    for label, step in _DIRECTIONS_4:
        kernels.append(_kernel(f"second_order.{label}", _line_kernel([(-1, 1), (0, -2), (1, 1)], step), 2.0))
    for label, step in _DIRECTIONS_8:
        kernels.append(
            _kernel(f"third_order.{label}", _line_kernel([(-1, 1), (0, -3), (1, 3), (2, -1)], step), 3.0)
        )
    kernels.append(_kernel("square_3x3", _embed(_SQUARE_3X3), 4.0))
    kernels.append(_kernel("square_5x5", _SQUARE_5X5.copy(), 12.0))
    for quarter, label in enumerate(_EDGE_ORIENTATIONS):
        kernels.append(_kernel(f"edge_3x3.{label}", _embed(np.rot90(_EDGE_3X3, quarter)), 4.0))
    for quarter, label in enumerate(_EDGE_ORIENTATIONS):
        kernels.append(_kernel(f"edge_5x5.{label}", np.rot90(_EDGE_5X5, quarter).copy(), 12.0))

    bank = FilterBank(kernels=tuple(kernels))
    logger.debug(f"Built SRM filter bank with {len(bank)} kernels")
    return bank


def residual_channel_names(bank: FilterBank) -> List[str]:
    """Names of the extracted maps in output order (channel-major)."""
    return [f"{channel}.{name}" for channel in "RGB" for name in bank.names]


def extract_residuals(image: Tensor, bank: FilterBank) -> Tensor:
    """
    Filter every color channel with every kernel of the bank.

    Args:
        image: N×3×s×s batch, s >= 5
        bank: Filter bank (constant, never receives gradients)

    Returns:
        N×(3·len(bank))×s×s residuals ordered R·k1..kK, G·k1..kK, B·k1..kK
    """
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"extract_residuals expects N×3×s×s images, got {image.shape}")
    n, _, h, w = image.shape
    if h < KERNEL_SIZE or w < KERNEL_SIZE:
        raise DimensionError(f"extract_residuals: images must be at least {KERNEL_SIZE} pixels, got {h}×{w}")

    kernels = Tensor(bank.weights(), requires_grad=False, dtype=image.dtype)
    per_channel = reshape(image, (n * 3, 1, h, w))
    filtered = conv2d(per_channel, kernels, stride=1, padding=CENTER)
    return reshape(filtered, (n, 3 * len(bank), h, w))
