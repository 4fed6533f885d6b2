# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

"""
Dataset ingestion: IDX image/label files and a deterministic synthetic generator.

IDX layout (all header integers big-endian u32):

    images: magic 0x00000803, N, rows, cols, then N*rows*cols unsigned bytes
    labels: magic 0x00000801, N, then N unsigned bytes
"""

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import fsspec
import numpy as np
from loguru import logger

from coreason_ising_pruning.exceptions import ConfigError, InputError, ParseError
from coreason_ising_pruning.utils.config import TrainConfig, parse_dataset_selector

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
HOLDOUT_FRACTION = 0.2


@dataclass
class Dataset:
    """Images [N, C, H, W] scaled to [0, 1] with integer labels in [0, classes)."""

    images: np.ndarray
    labels: np.ndarray
    split: str
    classes: int

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InputError(f"images must be [N, C, H, W], got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InputError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        c, h, w = self.images.shape[1:]
        return int(c), int(h), int(w)

    def subset(self, indices: np.ndarray, split: Optional[str] = None) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], split or self.split, self.classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Class-conditional Gaussian blobs on a dark background.

    Class centres sit evenly on a circle around the image centre; each sample
    jitters its centre, then additive Gaussian pixel noise is applied and the
    result clipped to [0, 1].
    """

    classes: int = 4
    samples_per_class: int = 500
    test_samples_per_class: int = 100
    image_size: int = 16
    noise: float = 0.1
    seed: int = 1234
    blob_sigma: float = 2.0
    jitter: float = 1.0
    radius_fraction: float = 0.25

    @classmethod
    def from_config(cls, config: TrainConfig) -> "SyntheticSpec":
        return cls(
            classes=config.classes,
            samples_per_class=config.samples_per_class,
            test_samples_per_class=config.test_samples_per_class,
            image_size=config.image_size,
            noise=config.noise,
            seed=config.data_seed,
        )

    def centres(self) -> np.ndarray:
        """[classes, 2] blob centres (row, col)."""
        middle = (self.image_size - 1) / 2.0
        radius = self.radius_fraction * self.image_size
        angles = 2.0 * np.pi * np.arange(self.classes) / self.classes
        return np.stack([middle + radius * np.sin(angles), middle + radius * np.cos(angles)], axis=1)


def _split_header(payload: bytes, count: int, path: str) -> Tuple[int, ...]:
    needed = 4 * count
    if len(payload) < needed:
        raise ParseError(f"{path}: truncated header, need {needed} bytes, have {len(payload)}", offset=len(payload))
    return struct.unpack(f">{count}I", payload[:needed])


def parse_idx_images(payload: bytes, path: str = "<images>") -> np.ndarray:
    """
    Decode an IDX image payload into float64 [N, 1, rows, cols] scaled by 1/255.

    Raises:
        ParseError: On a wrong magic or a truncated body, naming the byte offset.
    """
    (magic,) = _split_header(payload, 1, path)
    if magic != IMAGES_MAGIC:
        raise ParseError(f"{path}: expected image magic 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}", offset=0)
    _, n, rows, cols = _split_header(payload, 4, path)
    expected = 16 + n * rows * cols
    if len(payload) < expected:
        raise ParseError(
            f"{path}: truncated pixel data, need {expected} bytes, have {len(payload)}", offset=len(payload)
        )
    if len(payload) > expected:
        raise ParseError(f"{path}: {len(payload) - expected} trailing bytes after pixel data", offset=expected)
    pixels = np.frombuffer(payload, dtype=np.uint8, count=n * rows * cols, offset=16)
    return pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0


def parse_idx_labels(payload: bytes, path: str = "<labels>") -> np.ndarray:
    """
    Decode an IDX label payload into an int64 vector.

    Raises:
        ParseError: On a wrong magic or a truncated body, naming the byte offset.
    """
    (magic,) = _split_header(payload, 1, path)
    if magic != LABELS_MAGIC:
        raise ParseError(f"{path}: expected label magic 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}", offset=0)
    _, n = _split_header(payload, 2, path)
    expected = 8 + n
    if len(payload) < expected:
        raise ParseError(f"{path}: truncated labels, need {expected} bytes, have {len(payload)}", offset=len(payload))
    if len(payload) > expected:
        raise ParseError(f"{path}: {len(payload) - expected} trailing bytes after labels", offset=expected)
    return np.frombuffer(payload, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def _read_bytes(path: str) -> bytes:
    # compression="infer" decompresses *.gz transparently
    with fsspec.open(path, "rb", compression="infer") as f:
        data: bytes = f.read()
    return data


def load_idx(images_path: str, labels_path: str, split: str = "train", classes: Optional[int] = None) -> Dataset:
    """
    Load an IDX image/label pair.

    Args:
        images_path: Path or URL of the image file (optionally gzip-compressed).
        labels_path: Path or URL of the label file.
        split: Split tag for the resulting dataset.
        classes: Class count; inferred as max(label) + 1 when omitted.

    Raises:
        ParseError: On malformed files or an image/label count mismatch.
    """
    images = parse_idx_images(_read_bytes(images_path), images_path)
    labels = parse_idx_labels(_read_bytes(labels_path), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    inferred = int(labels.max()) + 1 if labels.size else 0
    if classes is None:
        classes = inferred
    elif inferred > classes:
        raise ParseError(f"{labels_path}: label {inferred - 1} outside [0, {classes})", offset=8 + int(labels.argmax()))
    logger.info(f"Loaded {labels.shape[0]} IDX samples of shape {images.shape[1:]} from {images_path}")
    return Dataset(images, labels, split, max(classes, 1))


def save_idx(dataset: Dataset, images_path: str, labels_path: str) -> None:
    """Write a single-channel dataset as an IDX pair (pixels rounded to bytes)."""
    n, c, rows, cols = dataset.images.shape
    if c != 1:
        raise InputError(f"IDX stores single-channel images, dataset has {c} channels")
    pixels = np.floor(np.clip(dataset.images, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with fsspec.open(images_path, "wb", compression="infer") as f:
        f.write(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with fsspec.open(labels_path, "wb", compression="infer") as f:
        f.write(struct.pack(">2I", LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def _blob_images(
    spec: SyntheticSpec, centres: np.ndarray, per_class: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    size = spec.image_size
    labels = np.repeat(np.arange(spec.classes), per_class)
    n = labels.shape[0]
    shifted = centres[labels] + rng.normal(0.0, spec.jitter, size=(n, 2))
    grid = np.arange(size, dtype=np.float64)
    rows = np.exp(-((grid[None, :] - shifted[:, 0:1]) ** 2) / (2.0 * spec.blob_sigma**2))
    cols = np.exp(-((grid[None, :] - shifted[:, 1:2]) ** 2) / (2.0 * spec.blob_sigma**2))
    images = rows[:, :, None] * cols[:, None, :]
    if spec.noise > 0.0:
        images = images + rng.normal(0.0, spec.noise, size=images.shape)
    return np.clip(images, 0.0, 1.0)[:, None, :, :], labels


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, Dataset]:
    """
    Generate (train, test) splits; a pure function of ``spec``.

    The two splits are drawn from disjoint child streams of ``spec.seed``.
    """
    train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    centres = spec.centres()
    train_images, train_labels = _blob_images(spec, centres, spec.samples_per_class, train_rng)
    test_images, test_labels = _blob_images(spec, centres, spec.test_samples_per_class, test_rng)
    logger.debug(f"Generated synthetic data: {train_labels.size} train / {test_labels.size} test samples")
    return (
        Dataset(train_images, train_labels, "train", spec.classes),
        Dataset(test_images, test_labels, "test", spec.classes),
    )


def load_dataset(config: TrainConfig) -> Tuple[Dataset, Dataset]:
    """
    Resolve the configured (train, test) datasets.

    IDX runs infer the class count from the labels; without ``test_dataset`` they hold
    out the last fifth of the training file.

    Raises:
        ConfigError: If the training split is empty.
    """
    paths = parse_dataset_selector(config.dataset)
    if paths is None:
        train, test = generate_synthetic(SyntheticSpec.from_config(config))
    else:
        full = load_idx(*paths, split="train")
        test_paths = parse_dataset_selector(config.test_dataset) if config.test_dataset else None
        if test_paths is not None:
            train = full
            test = load_idx(*test_paths, split="test", classes=full.classes)
        else:
            cut = len(full) - int(len(full) * HOLDOUT_FRACTION)
            train = full.subset(np.arange(cut), "train")
            test = full.subset(np.arange(cut, len(full)), "test")
    if len(train) == 0:
        raise ConfigError("training dataset is empty")
    return train, test
