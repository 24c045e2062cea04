"""
Dataset ingestion and continual learning task streams.

Reads MNIST and Fashion-MNIST from IDX files and turns them into Split
(five disjoint class pairs) or Permuted (fixed pixel shuffles) task streams.
The training side of a stream only ever yields ``(x, y)`` batches; task
identity and class masks are available through the multi-head and
evaluation methods.
"""

from __future__ import annotations

import gzip
import struct
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .layers import ClassMask
from .logger import get_logger


DATASETS = ("mnist", "fashion_mnist")
SPLITS = ("train", "test")

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

N_CLASSES = 10
IMAGE_SIZE = 28 * 28

# Canonical pairing before the task order is shuffled.
SPLIT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))

# File names per split, as published by both dataset mirrors.
IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DatasetError(Exception):
    """Raised when dataset files are missing, malformed or incomplete."""
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images scaled to [0, 1] and their integer labels.

    Attributes:
        images: float32 array of shape [N, 1, 28, 28].
        labels: int64 array of shape [N], values in 0..9.
        split: ``"train"`` or ``"test"``.
        source: File the images were read from, for error messages.
    """
    images: np.ndarray
    labels: np.ndarray
    split: str
    source: str = ""

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"{self.source}: {self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DatasetError(f"{self.source}: labels outside 0..{N_CLASSES - 1}")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def indices_of(self, classes: tuple[int, ...]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.labels, classes))


# ============================================================================
# IDX files
# ============================================================================

def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except (OSError, EOFError) as e:
        raise DatasetError(f"{path}: cannot read ({e})")


def _parse_images(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DatasetError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise DatasetError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise DatasetError(f"{path}: truncated, {len(raw)} bytes for {count} images of {rows}x{cols}")
    if len(raw) > expected:
        raise DatasetError(f"{path}: count mismatch, header says {count} images")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return (pixels.reshape(count, 1, rows, cols).astype(np.float32)) / np.float32(255.0)


def _parse_labels(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DatasetError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise DatasetError(f"{path}: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(raw) - 8 < count:
        raise DatasetError(f"{path}: truncated, {len(raw) - 8} labels for header count {count}")
    if len(raw) - 8 > count:
        raise DatasetError(f"{path}: count mismatch, header says {count} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() >= N_CLASSES:
        raise DatasetError(f"{path}: label {int(labels.max())} outside 0..{N_CLASSES - 1}")
    return labels


def load_idx(
    images_path: Path | str, labels_path: Path | str, split: str = "train"
) -> LabeledDataset:
    """Read an IDX image file and its label file.

    Files ending in ``.gz`` are decompressed on the fly.

    Raises:
        DatasetError: On a bad magic number, a truncated file or a count
            mismatch. The message names the offending file.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _parse_images(images_path)
    labels = _parse_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images in {images_path}"
        )
    return LabeledDataset(images=images, labels=labels, split=split, source=str(images_path))


def dataset_dir(data_dir: Path | str, dataset: str) -> Path:
    if dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got {dataset!r}")
    return Path(data_dir).expanduser() / dataset


def _locate(directory: Path, name: str) -> Path:
    plain = directory / name
    if plain.exists():
        return plain
    gz = directory / f"{name}.gz"
    if gz.exists():
        return gz
    raise DatasetError(f"{plain}: file not found (run `pcl fetch-data` first)")


def load_dataset(data_dir: Path | str, dataset: str, split: str) -> LabeledDataset:
    """Load one split of a dataset from ``<data_dir>/<dataset>/``."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    directory = dataset_dir(data_dir, dataset)
    images_name, labels_name = IDX_FILES[split]
    ds = load_idx(_locate(directory, images_name), _locate(directory, labels_name), split)
    get_logger().debug(f"Loaded {dataset}/{split}: {len(ds)} samples")
    return ds


# ============================================================================
# Permutations
# ============================================================================

@dataclass(frozen=True, eq=False)
class Permutation:
    """A fixed shuffle of flattened pixels: ``out[..., i] = in[..., mapping[i]]``."""
    mapping: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        mapping = np.asarray(self.mapping, dtype=np.int64)
        if mapping.ndim != 1 or not np.array_equal(np.sort(mapping), np.arange(mapping.size)):
            raise ConfigError("permutation mapping must be a bijection of 0..n-1")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def random(cls, seed: int, size: int = IMAGE_SIZE) -> Permutation:
        return cls(np.random.default_rng(seed).permutation(size), seed=seed)

    @classmethod
    def identity(cls, size: int = IMAGE_SIZE) -> Permutation:
        return cls(np.arange(size))

    @property
    def size(self) -> int:
        return int(self.mapping.size)

    def inverse(self) -> Permutation:
        return Permutation(np.argsort(self.mapping))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Permute the pixels of a batch of any trailing image shape."""
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.size:
            raise ConfigError(f"permutation of {self.size} pixels applied to {flat.shape[1]}")
        return flat[:, self.mapping].reshape(x.shape)


# ============================================================================
# Task streams
# ============================================================================

@dataclass(frozen=True, eq=False)
class _Task:
    task_id: int
    classes: tuple[int, ...]
    train_indices: np.ndarray
    test_indices: np.ndarray
    permutation: Permutation | None

    @property
    def mask(self) -> ClassMask:
        return ClassMask.of(self.classes, N_CLASSES)


@dataclass(frozen=True, eq=False)
class EvalSet:
    """The held-out samples of one task.

    Images are materialized batch by batch so permuted streams never hold
    more than one transformed copy of the test set in memory.
    """
    task_id: int
    classes: tuple[int, ...]
    mask: ClassMask
    dataset: LabeledDataset
    indices: np.ndarray
    permutation: Permutation | None = None

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    def batches(self, batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for start in range(0, len(self), batch_size):
            idx = self.indices[start:start + batch_size]
            yield _materialize(self.dataset, idx, self.permutation), self.dataset.labels[idx]


def _materialize(ds: LabeledDataset, idx: np.ndarray, perm: Permutation | None) -> np.ndarray:
    x = ds.images[idx]
    return perm.apply(x) if perm is not None else x


class TaskStream:
    """An ordered sequence of tasks consumed in a single pass.

    :meth:`train_batches` is the single-head training path and yields only
    ``(x, y)``. :meth:`masked_train_batches` adds the current task's class
    mask for multi-head training. :meth:`eval_sets` exposes the per-task
    held-out data.
    """

    def __init__(self, protocol: str, train: LabeledDataset, test: LabeledDataset, tasks: list[_Task]):
        if not tasks:
            raise ConfigError("a task stream needs at least one task")
        self.protocol = protocol
        self._train = train
        self._test = test
        self._tasks = tasks

    @property
    def n_tasks(self) -> int:
        return len(self._tasks)

    @property
    def n_train(self) -> int:
        """Training samples across the whole stream."""
        return sum(int(t.train_indices.size) for t in self._tasks)

    def n_batches(self, batch_size: int) -> int:
        return sum(-(-int(t.train_indices.size) // batch_size) for t in self._tasks)

    def _iterate(
        self, batch_size: int, on_task_end: Callable[[int], None] | None
    ) -> Iterator[tuple[_Task, np.ndarray, np.ndarray]]:
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        for task in self._tasks:
            indices = task.train_indices
            for start in range(0, indices.size, batch_size):
                idx = indices[start:start + batch_size]
                yield task, _materialize(self._train, idx, task.permutation), self._train.labels[idx]
            if on_task_end is not None:
                on_task_end(task.task_id)

    def train_batches(
        self, batch_size: int, on_task_end: Callable[[int], None] | None = None
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(x, y)`` batches, each training sample exactly once.

        ``on_task_end`` is an evaluation hook called with the position of
        the task just finished, after its last batch has been consumed.
        The last partial batch of every task is emitted.
        """
        for _, x, y in self._iterate(batch_size, on_task_end):
            yield x, y

    def masked_train_batches(
        self, batch_size: int, on_task_end: Callable[[int], None] | None = None
    ) -> Iterator[tuple[np.ndarray, np.ndarray, ClassMask]]:
        """Like :meth:`train_batches` but also yields the task's class mask."""
        for task, x, y in self._iterate(batch_size, on_task_end):
            yield x, y, task.mask

    def eval_sets(self) -> list[EvalSet]:
        return [
            EvalSet(
                task_id=t.task_id,
                classes=t.classes,
                mask=t.mask,
                dataset=self._test,
                indices=t.test_indices,
                permutation=t.permutation,
            )
            for t in self._tasks
        ]

    def task_classes(self) -> list[tuple[int, ...]]:
        return [t.classes for t in self._tasks]


def _check_classes(ds: LabeledDataset) -> None:
    present = set(np.unique(ds.labels).tolist())
    missing = sorted(set(range(N_CLASSES)) - present)
    if missing:
        raise DatasetError(f"{ds.source or ds.split}: class(es) {missing} missing")


def make_split_stream(
    train: LabeledDataset,
    test: LabeledDataset,
    order_seed: int,
    shuffle_order: bool = True,
) -> TaskStream:
    """Five two-class tasks: {0,1}, {2,3}, {4,5}, {6,7}, {8,9}.

    With ``shuffle_order`` the task order is permuted by ``order_seed``;
    samples within each task are always shuffled by the same seed.

    Raises:
        DatasetError: If a class is missing from either split.
    """
    _check_classes(train)
    _check_classes(test)
    rng = np.random.default_rng(order_seed)
    order = rng.permutation(len(SPLIT_PAIRS)) if shuffle_order else np.arange(len(SPLIT_PAIRS))

    tasks = []
    for position, pair_index in enumerate(order):
        classes = SPLIT_PAIRS[int(pair_index)]
        tasks.append(_Task(
            task_id=position,
            classes=classes,
            train_indices=rng.permutation(train.indices_of(classes)),
            test_indices=test.indices_of(classes),
            permutation=None,
        ))
    get_logger().debug(f"Split stream order: {[t.classes for t in tasks]}")
    return TaskStream("split", train, test, tasks)


def make_permuted_stream(
    train: LabeledDataset,
    test: LabeledDataset,
    n_tasks: int,
    seed: int,
) -> TaskStream:
    """``n_tasks`` tasks, each the full dataset under its own random pixel shuffle.

    Every task, including the first, gets a fresh permutation. All ten
    classes are allowed in every task.
    """
    if n_tasks < 1:
        raise ConfigError(f"n_tasks must be >= 1, got {n_tasks}")
    rng = np.random.default_rng(seed)
    all_classes = tuple(range(N_CLASSES))
    pixels = int(np.prod(train.images.shape[1:]))

    tasks = []
    for position in range(n_tasks):
        perm_seed = int(rng.integers(0, 2**63 - 1))
        tasks.append(_Task(
            task_id=position,
            classes=all_classes,
            train_indices=rng.permutation(len(train)),
            test_indices=np.arange(len(test)),
            permutation=Permutation.random(perm_seed, pixels),
        ))
    return TaskStream("permuted", train, test, tasks)
