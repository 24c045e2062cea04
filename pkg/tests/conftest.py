"""Shared fixtures: tiny synthetic IDX datasets and small architectures."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from pcl.data import IDX_FILES, LabeledDataset, load_dataset
from pcl.model import ArchitectureSpec


def write_idx_images(path: Path, pixels: np.ndarray) -> Path:
    """Write uint8 images of shape [N, rows, cols] as an IDX3 file."""
    count, rows, cols = pixels.shape
    path.write_bytes(struct.pack(">IIII", 0x00000803, count, rows, cols) + pixels.astype(np.uint8).tobytes())
    return path


def write_idx_labels(path: Path, labels: np.ndarray) -> Path:
    path.write_bytes(struct.pack(">II", 0x00000801, labels.size) + labels.astype(np.uint8).tobytes())
    return path


def synthetic_pixels(labels: np.ndarray, seed: int) -> np.ndarray:
    """Noisy 28x28 images with a bright 5x5 block whose position encodes the class."""
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 40, size=(labels.size, 28, 28))
    for i, label in enumerate(labels):
        row, col = 2 + 5 * (label // 5) + 8, 2 + 5 * (label % 5)
        images[i, row:row + 5, col:col + 5] = 255
    return images.astype(np.uint8)


def write_dataset(data_dir: Path, dataset: str = "mnist", per_class: tuple[int, int] = (24, 8)) -> Path:
    """Write train and test IDX files for ``dataset`` under ``data_dir``."""
    target = data_dir / dataset
    target.mkdir(parents=True, exist_ok=True)
    for (split, (images_name, labels_name)), n, seed in zip(IDX_FILES.items(), per_class, (1, 2)):
        labels = np.repeat(np.arange(10), n)
        np.random.default_rng(seed).shuffle(labels)
        write_idx_images(target / images_name, synthetic_pixels(labels, seed))
        write_idx_labels(target / labels_name, labels)
    return data_dir


@pytest.fixture
def data_dir(tmp_path: Path) -> Path:
    return write_dataset(tmp_path / "data")


@pytest.fixture
def datasets(data_dir: Path) -> tuple[LabeledDataset, LabeledDataset]:
    return load_dataset(data_dir, "mnist", "train"), load_dataset(data_dir, "mnist", "test")


@pytest.fixture
def tiny_pairwise_spec() -> ArchitectureSpec:
    return ArchitectureSpec(backbone="mlp", widths=[24], head="pairwise", pairwise_budget=600, density_pct=25)


@pytest.fixture
def tiny_fc_spec() -> ArchitectureSpec:
    return ArchitectureSpec(backbone="mlp", widths=[24], head="fc", density_pct=25)
