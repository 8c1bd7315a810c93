import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mixbt.core.exceptions import (
    ConfigurationError,
    ContractError,
    DatasetFormatError,
    DatasetNotFoundError,
)
from mixbt.services.data import (
    CIFAR10_TEST_FILES,
    CIFAR10_TRAIN_FILES,
    CIFAR_PIXELS,
    batches,
    load_cifar10,
    load_cifar100,
    load_eval_source,
    make_synthetic,
    read_binary_records,
    write_binary_records,
)
from mixbt.services.evaluation import FeatureBank, knn_evaluate


def _write_cifar10(directory, per_class_per_file=2):
    labels = np.repeat(np.arange(10), per_class_per_file)
    for name in CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES:
        images = np.random.default_rng(len(name)).random((labels.size, CIFAR_PIXELS))
        write_binary_records(os.path.join(directory, name), images, labels)


class TestBinaryRecords:
    def test_two_record_file(self, tmp_path):
        path = str(tmp_path / "two.bin")
        images = np.zeros((2, CIFAR_PIXELS))
        images[1, :] = 1.0
        write_binary_records(path, images, np.array([3, 7]))
        pixels, labels = read_binary_records(path, 1, CIFAR_PIXELS, 9)
        assert pixels.shape == (2, CIFAR_PIXELS)
        assert_array_equal(labels, [3, 7])
        assert pixels[1].max() == 255

    def test_length_not_a_multiple_of_the_record(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(bytes(CIFAR_PIXELS + 2))
        with pytest.raises(DatasetFormatError):
            read_binary_records(str(path), 1, CIFAR_PIXELS, 9)

    def test_label_out_of_range(self, tmp_path):
        path = str(tmp_path / "bad.bin")
        write_binary_records(path, np.zeros((1, CIFAR_PIXELS)), np.array([12]))
        with pytest.raises(DatasetFormatError):
            read_binary_records(path, 1, CIFAR_PIXELS, 9)


class TestCifarLoaders:
    def test_max_per_class(self, tmp_path):
        _write_cifar10(str(tmp_path))
        train, test = load_cifar10(str(tmp_path), max_per_class=5)
        assert len(train) == 50
        assert np.bincount(train.labels).tolist() == [5] * 10
        assert len(test) == 20
        assert train.image_shape == (3, 32, 32)

    def test_pixel_scaling_endpoint(self, tmp_path):
        _write_cifar10(str(tmp_path), per_class_per_file=1)
        train, _ = load_cifar10(str(tmp_path))
        assert train.images.max() == 1.0
        assert train.images.min() >= 0.0

    def test_nested_directory(self, tmp_path):
        nested = tmp_path / "cifar-10-batches-bin"
        nested.mkdir()
        _write_cifar10(str(nested), per_class_per_file=1)
        train, _ = load_cifar10(str(tmp_path))
        assert len(train) == 50

    def test_images_are_read_only(self, tmp_path):
        _write_cifar10(str(tmp_path), per_class_per_file=1)
        train, _ = load_cifar10(str(tmp_path))
        with pytest.raises(ValueError):
            train.images[0, 0] = 0.5

    def test_missing_files(self, tmp_path):
        with pytest.raises(DatasetNotFoundError):
            load_cifar10(str(tmp_path))

    def test_cifar100_fine_labels(self, tmp_path):
        labels = np.array([0, 42, 99])
        for name in ("train.bin", "test.bin"):
            write_binary_records(str(tmp_path / name), np.zeros((3, CIFAR_PIXELS)), labels, label_bytes=2)
        train, test = load_cifar100(str(tmp_path))
        assert_array_equal(train.labels, [0, 42, 99])
        assert train.meta.class_count == 100
        assert len(test) == 3


class TestSynthetic:
    def test_same_seed_same_dataset(self):
        a, b = make_synthetic(3, 20, 16, 10.0, seed=4), make_synthetic(3, 20, 16, 10.0, seed=4)
        assert_array_equal(a.images, b.images)
        assert_array_equal(a.labels, b.labels)

    def test_seeds_share_centres_but_not_noise(self):
        a, b = make_synthetic(2, 50, 16, 10.0, seed=0), make_synthetic(2, 50, 16, 10.0, seed=1)
        assert not np.array_equal(a.images, b.images)
        for c in range(2):
            gap = np.abs(a.images[a.labels == c].mean(axis=0) - b.images[b.labels == c].mean(axis=0)).max()
            assert gap < 0.05

    def test_square_dimension_becomes_an_image(self):
        ds = make_synthetic(2, 4, 64, 10.0, seed=0)
        assert ds.image_shape == (1, 8, 8)
        assert make_synthetic(2, 4, 10, 10.0, seed=0).image_shape == (1, 1, 10)

    def test_well_separated_blobs_are_knn_separable(self):
        train, test = make_synthetic(2, 500, 64, 10.0, seed=0), make_synthetic(2, 100, 64, 10.0, seed=1)
        bank = FeatureBank.from_features(train.images, train.labels, 2)
        queries = FeatureBank.from_features(test.images, test.labels, 2)
        assert knn_evaluate(bank, queries, 20) >= 0.99

    def test_zero_separation_is_chance(self):
        train, test = make_synthetic(2, 200, 16, 0.0, seed=0), make_synthetic(2, 200, 16, 0.0, seed=1)
        bank = FeatureBank.from_features(train.images, train.labels, 2)
        queries = FeatureBank.from_features(test.images, test.labels, 2)
        assert abs(knn_evaluate(bank, queries, 20) - 0.5) <= 0.1


class TestEvalSource:
    def test_synthetic_spec(self):
        train, test = load_eval_source("synthetic:classes=3,per_class=10,dim=16,seed=2")
        assert len(train) == 30 and len(test) == 30
        assert not np.array_equal(train.images, test.images)

    def test_unknown_synthetic_key(self):
        with pytest.raises(ConfigurationError) as info:
            load_eval_source("synthetic:colour=red")
        assert info.value.key == "data"


class TestBatches:
    def test_partial_batch_is_dropped(self):
        ds = make_synthetic(2, 5, 4, 1.0, seed=0)
        assert len(batches(ds, 4, epoch=0, seed=0)) == 2

    def test_epochs_reshuffle_the_same_indices(self):
        ds = make_synthetic(2, 5, 4, 1.0, seed=0)
        first = np.concatenate(batches(ds, 5, epoch=1, seed=0))
        second = np.concatenate(batches(ds, 5, epoch=2, seed=0))
        assert not np.array_equal(first, second)
        assert_array_equal(np.sort(first), np.arange(10))
        assert_array_equal(np.sort(second), np.arange(10))

    def test_same_key_same_order(self):
        ds = make_synthetic(2, 5, 4, 1.0, seed=0)
        for a, b in zip(batches(ds, 3, epoch=4, seed=9), batches(ds, 3, epoch=4, seed=9)):
            assert_array_equal(a, b)

    @pytest.mark.parametrize("batch_size", [1, 11])
    def test_invalid_batch_size(self, batch_size):
        with pytest.raises(ContractError):
            batches(make_synthetic(2, 5, 4, 1.0, seed=0), batch_size, epoch=0, seed=0)
