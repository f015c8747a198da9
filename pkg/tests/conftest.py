"""Shared fixtures: seeded generators, 64-bit mode, tiny models and a synthetic corpus."""

import csv
from pathlib import Path

import numpy as np
import pytest

from engine import numeric_mode
from model import ModelConfig

SMOKE_SIDE = 32


def write_ppm(path: Path, pixels: np.ndarray) -> Path:
    """Write an H×W×3 uint8 array as binary P6 (independent of the package encoder)."""
    height, width, _ = pixels.shape
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes())
    return path


def noise_image(rng: np.random.Generator, side: int = SMOKE_SIDE) -> np.ndarray:
    return rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8)


def smooth_image(rng: np.random.Generator, side: int = SMOKE_SIDE) -> np.ndarray:
    y, x = np.mgrid[0:side, 0:side] / (side - 1)
    a, b = rng.uniform(-0.5, 0.5, size=(2, 3))
    base = rng.uniform(0.25, 0.75, size=3)
    img = base + a * x[..., None] + b * y[..., None]
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Run the test in 64-bit numeric mode."""
    with numeric_mode("float64"):
        yield


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Narrow model at s=32 for fast structural tests."""
    return ModelConfig(
        input_side=32,
        heads=2,
        embed_width=16,
        mlp_ratio=2,
        channel_plan=[8, 12, 16],
        post_channel_plan=[16, 8],
        seed=7,
    )


@pytest.fixture
def smoke_corpus(tmp_path: Path) -> Path:
    """
    16 images at 32×32: 8 noise images labelled generated, 8 smooth gradients
    labelled photo, all in the train split. Returns the manifest path.
    """
    gen = np.random.default_rng(2024)
    root = tmp_path / "corpus"
    root.mkdir()
    rows = []
    for i in range(8):
        write_ppm(root / f"gen_{i}.ppm", noise_image(gen))
        rows.append((f"gen_{i}.ppm", "generated", "train"))
        write_ppm(root / f"photo_{i}.ppm", smooth_image(gen))
        rows.append((f"photo_{i}.ppm", "photo", "train"))
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "split"])
        writer.writerows(rows)
    return manifest


@pytest.fixture
def split_corpus(tmp_path: Path) -> Path:
    """24 images with an empty split column, for make_split and evaluation runs."""
    gen = np.random.default_rng(99)
    root = tmp_path / "unsplit"
    root.mkdir()
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "split"])
        for i in range(12):
            write_ppm(root / f"g{i}.ppm", noise_image(gen))
            writer.writerow([f"g{i}.ppm", "1", ""])
            write_ppm(root / f"p{i}.ppm", smooth_image(gen))
            writer.writerow([f"p{i}.ppm", "0", ""])
    return manifest
