# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

import os
import struct
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from coreason_ising_pruning.exceptions import ConfigError, InputError, ParseError
from coreason_ising_pruning.pipelines.idx_utils import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_idx,
    parse_idx_images,
    parse_idx_labels,
    save_idx,
)
from coreason_ising_pruning.utils.config import TrainConfig


def images_payload(pixels: np.ndarray) -> bytes:
    n, rows, cols = pixels.shape
    return struct.pack(">4I", IMAGES_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes()


def labels_payload(labels: np.ndarray) -> bytes:
    return struct.pack(">2I", LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


class TestParseIdx(unittest.TestCase):
    def test_images_scaled(self) -> None:
        pixels = np.arange(18).reshape(2, 3, 3) * 15
        images = parse_idx_images(images_payload(pixels))
        self.assertEqual(images.shape, (2, 1, 3, 3))
        self.assertEqual(images.dtype, np.float64)
        np.testing.assert_allclose(images[:, 0], pixels / 255.0)

    def test_all_255_is_one(self) -> None:
        images = parse_idx_images(images_payload(np.full((1, 4, 4), 255)))
        np.testing.assert_array_equal(images, np.ones((1, 1, 4, 4)))

    def test_labels(self) -> None:
        np.testing.assert_array_equal(parse_idx_labels(labels_payload(np.array([3, 0, 9]))), [3, 0, 9])

    def test_wrong_magic(self) -> None:
        with self.assertRaises(ParseError) as ctx:
            parse_idx_images(labels_payload(np.array([1, 2])))
        self.assertEqual(ctx.exception.offset, 0)
        with self.assertRaises(ParseError) as ctx:
            parse_idx_labels(images_payload(np.zeros((1, 2, 2))))
        self.assertEqual(ctx.exception.offset, 0)

    def test_flipped_endianness(self) -> None:
        payload = struct.pack("<4I", IMAGES_MAGIC, 1, 2, 2) + bytes(4)
        with self.assertRaises(ParseError) as ctx:
            parse_idx_images(payload)
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_pixels(self) -> None:
        payload = images_payload(np.zeros((2, 3, 3)))[:26]
        with self.assertRaises(ParseError) as ctx:
            parse_idx_images(payload)
        self.assertEqual(ctx.exception.offset, 26)

    def test_truncated_header(self) -> None:
        with self.assertRaises(ParseError) as ctx:
            parse_idx_images(struct.pack(">I", IMAGES_MAGIC) + b"\x00\x00")
        self.assertEqual(ctx.exception.offset, 6)

    def test_trailing_bytes(self) -> None:
        with self.assertRaises(ParseError) as ctx:
            parse_idx_labels(labels_payload(np.array([1, 2])) + b"\x00")
        self.assertEqual(ctx.exception.offset, 10)


class TestLoadIdx(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _write(self, name: str, payload: bytes) -> str:
        path = os.path.join(self.tmp.name, name)
        with open(path, "wb") as f:
            f.write(payload)
        return path

    def test_infers_classes(self) -> None:
        images = self._write("img", images_payload(np.zeros((3, 2, 2))))
        labels = self._write("lbl", labels_payload(np.array([0, 4, 1])))
        dataset = load_idx(images, labels)
        self.assertEqual(dataset.classes, 5)
        self.assertEqual(len(dataset), 3)
        self.assertEqual(dataset.split, "train")

    def test_count_mismatch(self) -> None:
        images = self._write("img", images_payload(np.zeros((3, 2, 2))))
        labels = self._write("lbl", labels_payload(np.array([0, 1])))
        with self.assertRaises(ParseError) as ctx:
            load_idx(images, labels)
        self.assertEqual(ctx.exception.offset, 4)

    def test_label_outside_given_classes(self) -> None:
        images = self._write("img", images_payload(np.zeros((2, 2, 2))))
        labels = self._write("lbl", labels_payload(np.array([0, 3])))
        with self.assertRaises(ParseError):
            load_idx(images, labels, classes=3)

    def test_gzip_round_trip(self) -> None:
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(5, 1, 4, 4))
        original = Dataset(pixels / 255.0, rng.integers(0, 3, size=5), "train", 3)
        images = os.path.join(self.tmp.name, "images.idx.gz")
        labels = os.path.join(self.tmp.name, "labels.idx.gz")
        save_idx(original, images, labels)
        with open(images, "rb") as f:
            self.assertEqual(f.read(2), b"\x1f\x8b")
        loaded = load_idx(images, labels, classes=3)
        np.testing.assert_array_equal(loaded.images, original.images)
        np.testing.assert_array_equal(loaded.labels, original.labels)

    def test_save_rejects_multichannel(self) -> None:
        dataset = Dataset(np.zeros((1, 3, 2, 2)), np.zeros(1), "train", 2)
        with self.assertRaises(InputError):
            save_idx(dataset, os.path.join(self.tmp.name, "a"), os.path.join(self.tmp.name, "b"))


class TestDataset(unittest.TestCase):
    def test_validation(self) -> None:
        with self.assertRaises(InputError):
            Dataset(np.zeros((2, 4, 4)), np.zeros(2), "train", 2)
        with self.assertRaises(InputError):
            Dataset(np.zeros((2, 1, 4, 4)), np.zeros(3), "train", 2)
        with self.assertRaises(InputError):
            Dataset(np.zeros((2, 1, 4, 4)), np.array([0, 2]), "train", 2)

    def test_subset(self) -> None:
        dataset = Dataset(np.arange(4).reshape(4, 1, 1, 1), np.array([0, 1, 0, 1]), "train", 2)
        part = dataset.subset(np.array([1, 3]), "test")
        self.assertEqual(part.split, "test")
        np.testing.assert_array_equal(part.labels, [1, 1])
        self.assertEqual(part.sample_shape, (1, 1, 1))


class TestSynthetic(unittest.TestCase):
    def test_pure_function_of_spec(self) -> None:
        spec = SyntheticSpec(samples_per_class=20, test_samples_per_class=5)
        train_a, test_a = generate_synthetic(spec)
        train_b, test_b = generate_synthetic(spec)
        np.testing.assert_array_equal(train_a.images, train_b.images)
        np.testing.assert_array_equal(test_a.labels, test_b.labels)
        train_c, _ = generate_synthetic(replace(spec, seed=spec.seed + 1))
        self.assertFalse(np.array_equal(train_a.images, train_c.images))

    def test_shapes_and_range(self) -> None:
        train, test = generate_synthetic(SyntheticSpec(classes=3, samples_per_class=7, test_samples_per_class=2))
        self.assertEqual(train.images.shape, (21, 1, 16, 16))
        self.assertEqual(len(test), 6)
        self.assertEqual(np.bincount(train.labels).tolist(), [7, 7, 7])
        self.assertGreaterEqual(train.images.min(), 0.0)
        self.assertLessEqual(train.images.max(), 1.0)

    def test_classes_are_separable(self) -> None:
        train, test = generate_synthetic(SyntheticSpec(samples_per_class=100, test_samples_per_class=50))
        flat_train = train.images.reshape(len(train), -1)
        flat_test = test.images.reshape(len(test), -1)
        centroids = np.stack([flat_train[train.labels == c].mean(axis=0) for c in range(train.classes)])
        distances = ((flat_test[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        accuracy = float((distances.argmin(axis=1) == test.labels).mean())
        self.assertGreater(accuracy, 0.9)


class TestLoadDataset(unittest.TestCase):
    def test_synthetic(self) -> None:
        config = TrainConfig(classes=3, samples_per_class=4, test_samples_per_class=2, image_size=8)
        train, test = load_dataset(config)
        self.assertEqual((len(train), len(test)), (12, 6))
        self.assertEqual(train.classes, 3)

    def test_idx_holdout(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            images = os.path.join(tmp, "img")
            labels = os.path.join(tmp, "lbl")
            with open(images, "wb") as f:
                f.write(images_payload(np.zeros((10, 4, 4))))
            with open(labels, "wb") as f:
                f.write(labels_payload(np.arange(10) % 10))
            train, test = load_dataset(TrainConfig(dataset=f"idx:{images},{labels}"))
            self.assertEqual((len(train), len(test)), (8, 2))
            self.assertEqual(train.classes, 10)
            self.assertEqual(test.split, "test")

            train, test = load_dataset(
                TrainConfig(dataset=f"idx:{images},{labels}", test_dataset=f"idx:{images},{labels}")
            )
            self.assertEqual((len(train), len(test)), (10, 10))

    def test_empty_training_split(self) -> None:
        with self.assertRaises(ConfigError):
            load_dataset(TrainConfig(samples_per_class=0))
