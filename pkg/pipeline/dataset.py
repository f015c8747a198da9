"""In-memory image dataset over manifest records."""

import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ArgumentError

from .images import center_crop, decode_image, resize_bilinear
from .manifest import ImageRecord

logger = logging.getLogger(__name__)

Preprocess = Literal["resize", "center_crop"]
ImageHook = Callable[[np.ndarray, int], np.ndarray]

# 1024 float64 images at 256×256 hold about 1.6 GB
DEFAULT_CACHE_SIZE = 1024


class ImageDataset:
    """
    Records decoded lazily to 3×side×side arrays, kept in a bounded LRU cache.

    Args:
        records: Manifest records in a fixed order
        side: Model input side
        preprocess: "resize" (bilinear) or "center_crop"
        cache_size: Most decoded images held at once (0 disables caching)
    """

    def __init__(
        self,
        records: Sequence[ImageRecord],
        side: int,
        preprocess: Preprocess = "resize",
        cache_size: int = DEFAULT_CACHE_SIZE,
    ):
        if preprocess not in ("resize", "center_crop"):
            raise ArgumentError(f"Unknown preprocess '{preprocess}'. Supported: resize, center_crop")
        if cache_size < 0:
            raise ArgumentError(f"cache_size must be >= 0, got {cache_size}")
        self.records: List[ImageRecord] = list(records)
        self.side = side
        self.preprocess = preprocess
        self.cache_size = cache_size
        self._cached = lru_cache(maxsize=cache_size)(self._load)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def cached_count(self) -> int:
        return self._cached.cache_info().currsize

    def _load(self, index: int) -> np.ndarray:
        img = decode_image(self.records[index].path)
        if self.preprocess == "center_crop":
            return center_crop(img, self.side)
        return resize_bilinear(img, self.side)

    def image(self, index: int) -> np.ndarray:
        return self._cached(index)

    def preload(self, workers: int = 0) -> None:
        """Decode the first records that fit in the cache; the rest load on demand."""
        count = min(len(self), self.cache_size)
        if count == 0:
            return
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(self.image, range(count)))
        else:
            for index in range(count):
                self.image(index)
        if count < len(self):
            logger.info(f"Preloaded {count} of {len(self)} images (cache_size={self.cache_size})")
        else:
            logger.info(f"Preloaded {count} images at {self.side}×{self.side} ({self.preprocess})")

    def batch(self, indices: Sequence[int], hook: Optional[ImageHook] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Stack the images of `indices`.

        Args:
            indices: Record positions
            hook: Optional (image, record index) -> image applied per sample

        Returns:
            (N×3×side×side float64 array, N labels)
        """
        images = []
        for index in indices:
            img = self.image(int(index))
            images.append(hook(img, int(index)) if hook is not None else img)
        labels = np.array([self.records[int(i)].label for i in indices], dtype=np.int64)
        return np.stack(images), labels
