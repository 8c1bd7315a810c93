"""
Dataset ingestion and generation.

Supports the CIFAR-10/CIFAR-100 binary distributions (one label byte, or coarse+fine
label bytes, followed by 3072 channel-planar pixel bytes per record) and a synthetic
Gaussian-blob generator for desk-scale runs. Pixels are stored as read-only float64
arrays in [0, 1].
"""
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mixbt.core.exceptions import ConfigurationError, ContractError, DatasetFormatError, DatasetNotFoundError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import DatasetMeta, RunConfig, SyntheticSpec
from mixbt.utils.rng import SHUFFLE_STREAM, SYNTHETIC_STREAM, keyed_rng

logger = get_logger(__name__)

CIFAR_PIXELS = 3 * 32 * 32
CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILES = ["test_batch.bin"]
CIFAR100_TRAIN_FILES = ["train.bin"]
CIFAR100_TEST_FILES = ["test.bin"]
# presets exist for these, but there is no reader for their files
HYPERPARAMETER_ONLY_DATASETS = ("tinyimagenet", "stl10")

# A fixed stream for class centres: every split and seed of a synthetic task shares them.
_CENTRE_KEY = 0


@dataclass
class Dataset:
    images: np.ndarray  # M×D, read-only, values in [0, 1]
    labels: np.ndarray  # M, int64
    meta: DatasetMeta

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != self.meta.pixels:
            raise ContractError(f"images {self.images.shape} do not match meta ({self.meta.pixels} pixels)")
        if self.images.shape[0] < 1 or self.labels.shape != (self.images.shape[0],):
            raise ContractError("a dataset needs at least one image and one label per image")
        if self.labels.min() < 0 or self.labels.max() >= self.meta.class_count:
            raise ContractError(f"labels outside [0, {self.meta.class_count})")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.meta.channels, self.meta.height, self.meta.width)


# --- binary records ---

def read_binary_records(path: str, label_bytes: int, pixels: int, max_label: int) -> Tuple[np.ndarray, np.ndarray]:
    """Parse fixed-size records; the last label byte is the class label."""
    record = label_bytes + pixels
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % record:
        raise DatasetFormatError(path, f"length {len(raw)} is not a multiple of the record size {record}")
    table = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = table[:, label_bytes - 1].astype(np.int64)
    if labels.size and labels.max() > max_label:
        raise DatasetFormatError(path, f"label byte {int(labels.max())} exceeds {max_label}")
    return table[:, label_bytes:], labels


def write_binary_records(path: str, images: np.ndarray, labels: np.ndarray, label_bytes: int = 1) -> None:
    """Write records in the CIFAR layout; pixels are quantised with round(x · 255)."""
    pixels = np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    table = np.zeros((pixels.shape[0], label_bytes + pixels.shape[1]), dtype=np.uint8)
    table[:, :label_bytes] = np.asarray(labels, dtype=np.uint8)[:, None]
    table[:, label_bytes:] = pixels
    with open(path, "wb") as f:
        f.write(table.tobytes())


def _cap_per_class(labels: np.ndarray, max_per_class: Optional[int]) -> np.ndarray:
    """Indices of the first `max_per_class` occurrences of each class, in file order."""
    if max_per_class is None:
        return np.arange(labels.size)
    keep, seen = [], {}
    for index, label in enumerate(labels.tolist()):
        if seen.get(label, 0) < max_per_class:
            seen[label] = seen.get(label, 0) + 1
            keep.append(index)
    return np.asarray(keep, dtype=np.int64)


def _resolve_dir(root: str, subdir: str, required: Sequence[str]) -> str:
    for candidate in (root, os.path.join(root, subdir)):
        if all(os.path.isfile(os.path.join(candidate, name)) for name in required):
            return candidate
    raise DatasetNotFoundError(f"Expected {', '.join(required)} under '{root}' (or '{root}/{subdir}')",
                               details={"dir": root})


def _load_split(directory: str, files: Sequence[str], label_bytes: int, max_label: int,
                max_per_class: Optional[int], meta: DatasetMeta) -> Dataset:
    pixel_parts, label_parts = [], []
    for name in files:
        pixels, labels = read_binary_records(os.path.join(directory, name), label_bytes, CIFAR_PIXELS, max_label)
        pixel_parts.append(pixels)
        label_parts.append(labels)
    pixels = np.concatenate(pixel_parts)
    labels = np.concatenate(label_parts)
    keep = _cap_per_class(labels, max_per_class)
    return Dataset(images=pixels[keep].astype(np.float64) / 255.0, labels=labels[keep].copy(), meta=meta)


def load_cifar10(directory: str, max_per_class: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Train and test splits of the CIFAR-10 binary distribution."""
    directory = _resolve_dir(directory, "cifar-10-batches-bin", CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES)
    meta = DatasetMeta(height=32, width=32, channels=3, class_count=10, name="cifar10")
    train = _load_split(directory, CIFAR10_TRAIN_FILES, 1, 9, max_per_class, meta)
    test = _load_split(directory, CIFAR10_TEST_FILES, 1, 9, max_per_class, meta)
    logger.info(f"Loaded CIFAR-10 from {directory}: {len(train)} train / {len(test)} test images")
    return train, test


def load_cifar100(directory: str, max_per_class: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """Train and test splits of the CIFAR-100 binary distribution, fine labels."""
    directory = _resolve_dir(directory, "cifar-100-binary", CIFAR100_TRAIN_FILES + CIFAR100_TEST_FILES)
    meta = DatasetMeta(height=32, width=32, channels=3, class_count=100, name="cifar100")
    train = _load_split(directory, CIFAR100_TRAIN_FILES, 2, 99, max_per_class, meta)
    test = _load_split(directory, CIFAR100_TEST_FILES, 2, 99, max_per_class, meta)
    logger.info(f"Loaded CIFAR-100 from {directory}: {len(train)} train / {len(test)} test images")
    return train, test


# --- synthetic ---

def _synthetic_shape(dim: int) -> Tuple[int, int]:
    side = int(round(np.sqrt(dim)))
    return (side, side) if side * side == dim else (1, dim)


def class_centres(classes: int, dim: int) -> np.ndarray:
    """Unit directions, orthonormal when classes <= dim; independent of the dataset seed."""
    rng = keyed_rng(SYNTHETIC_STREAM, _CENTRE_KEY, classes, dim)
    raw = rng.standard_normal((dim, classes))
    if classes <= dim:
        q, _ = np.linalg.qr(raw)
        return q[:, :classes].T.copy()
    return (raw / np.linalg.norm(raw, axis=0, keepdims=True)).T.copy()


def make_synthetic(classes: int, per_class: int, dim: int, separation: float, seed: int) -> Dataset:
    """
    Class c is centred at `separation` times a fixed unit direction plus unit Gaussian
    noise; values are squashed into [0, 1] by x ↦ clip((x + a) / 2a, 0, 1), a = separation + 3.
    """
    centres = class_centres(classes, dim) * separation
    rng = keyed_rng(SYNTHETIC_STREAM, seed + 1, classes, per_class, dim)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    raw = centres[labels] + rng.standard_normal((labels.size, dim))
    half_range = separation + 3.0
    images = np.clip((raw + half_range) / (2.0 * half_range), 0.0, 1.0)
    height, width = _synthetic_shape(dim)
    meta = DatasetMeta(height=height, width=width, channels=1, class_count=classes, name="synthetic")
    return Dataset(images=images, labels=labels, meta=meta)


def synthetic_from_spec(spec: SyntheticSpec) -> Dataset:
    return make_synthetic(spec.classes, spec.per_class, spec.dim, spec.separation, spec.seed)


def load_run_datasets(cfg: RunConfig, seed: int) -> Tuple[Dataset, Dataset]:
    """(train, test) for a run config."""
    if cfg.dataset in HYPERPARAMETER_ONLY_DATASETS:
        raise ConfigurationError(
            f"No loader for dataset '{cfg.dataset}'; its preset only records published hyperparameters",
            key="dataset",
        )
    if cfg.dataset == "cifar10":
        return load_cifar10(cfg.data_dir, cfg.max_per_class)
    if cfg.dataset == "cifar100":
        return load_cifar100(cfg.data_dir, cfg.max_per_class)
    return (synthetic_from_spec(cfg.synthetic_spec(seed)),
            synthetic_from_spec(cfg.synthetic_spec(seed, test=True)))


def load_eval_source(source: str, max_per_class: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """A CLI data argument: a CIFAR directory or a `synthetic:key=value,...` spec."""
    if source.startswith("synthetic"):
        try:
            spec = SyntheticSpec.parse(source)
        except ValueError as e:
            raise ConfigurationError(f"Invalid synthetic dataset spec '{source}': {e}", key="data") from None
        held_out = spec.model_copy(update={"seed": spec.seed + 1})
        return synthetic_from_spec(spec), synthetic_from_spec(held_out)
    if os.path.isfile(os.path.join(source, "train.bin")) or os.path.isdir(os.path.join(source, "cifar-100-binary")):
        return load_cifar100(source, max_per_class)
    return load_cifar10(source, max_per_class)


# --- batching ---

def batches(ds: Dataset, batch_size: int, epoch: int, seed: int) -> List[np.ndarray]:
    """Epoch-keyed shuffled index slices; the final partial batch is dropped."""
    if batch_size < 2:
        raise ContractError(f"batch_size must be >= 2, got {batch_size}")
    if batch_size > len(ds):
        raise ContractError(f"batch_size {batch_size} exceeds dataset size {len(ds)}")
    order = keyed_rng(SHUFFLE_STREAM, seed, epoch).permutation(len(ds))
    full = len(ds) // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(full)]
