import gzip
import struct

import numpy as np
import pytest
from scipy import stats

from tigranet import Connectivity, build_grid_graph
from tigranet.datasets import (
    IdxFormatError,
    find_mnist,
    image_to_signal,
    load_dataset_cache,
    load_idx,
    make_mnist012,
    make_mnist_rot,
    make_mnist_trans,
    make_synthetic_digits,
    parse_idx,
    render_digit,
    save_dataset_cache,
    write_idx_images,
    write_idx_labels,
)
from tigranet.seeding import seed_stream


class TestIdx:
    def test_empty_label_file(self):
        data = struct.pack(">II", 0x00000801, 0)
        labels = parse_idx(data)
        assert labels.shape == (0,)

    def test_handcrafted_image_roundtrip(self, tmp_path):
        images = np.arange(4, dtype=np.uint8).reshape(1, 2, 2)
        path = tmp_path / "img.idx3-ubyte"
        write_idx_images(path, images)
        loaded = load_idx(path)
        np.testing.assert_array_equal(loaded, images)

    def test_label_roundtrip(self, tmp_path):
        labels = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
        path = tmp_path / "lab.idx1-ubyte"
        write_idx_labels(path, labels)
        np.testing.assert_array_equal(load_idx(path), labels)

    def test_gzip_transparent(self, tmp_path):
        labels = np.array([7, 7, 7], dtype=np.uint8)
        raw = struct.pack(">II", 0x00000801, 3) + labels.tobytes()
        path = tmp_path / "lab.idx1-ubyte.gz"
        path.write_bytes(gzip.compress(raw))
        np.testing.assert_array_equal(load_idx(path), labels)

    def test_bad_magic(self):
        with pytest.raises(IdxFormatError):
            parse_idx(struct.pack(">II", 0xDEADBEEF, 0))

    def test_truncated_payload(self):
        data = struct.pack(">IIII", 0x00000803, 2, 2, 2) + b"\x00" * 7
        with pytest.raises(IdxFormatError):
            parse_idx(data)

    def test_truncated_header(self):
        with pytest.raises(IdxFormatError):
            parse_idx(b"\x00\x00")

    def test_dimension_overflow(self):
        data = struct.pack(">IIII", 0x00000803, 0xFFFFFFFF, 0xFFFF, 0xFFFF)
        with pytest.raises(IdxFormatError):
            parse_idx(data)

    def test_official_test_images_when_available(self):
        paths = find_mnist()
        if paths is None:
            pytest.skip("MNIST IDX files not available in this environment")
        images = load_idx(paths["test_images"])
        assert images.shape == (10000, 28, 28)


class TestImageToSignal:
    def test_zero_image(self):
        grid = build_grid_graph(3, 3, Connectivity.FOUR)
        np.testing.assert_array_equal(
            image_to_signal(np.zeros((3, 3), dtype=np.uint8), grid), np.zeros(9)
        )

    def test_full_intensity_maps_to_one(self):
        grid = build_grid_graph(2, 2, Connectivity.FOUR)
        signal = image_to_signal(np.full((2, 2), 255, dtype=np.uint8), grid)
        np.testing.assert_array_equal(signal, np.ones(4))

    def test_row_major_order(self):
        grid = build_grid_graph(2, 2, Connectivity.FOUR)
        image = np.array([[10, 20], [30, 40]], dtype=np.uint8)
        np.testing.assert_allclose(
            image_to_signal(image, grid), np.array([10, 20, 30, 40]) / 255.0
        )

    def test_shape_mismatch(self):
        grid = build_grid_graph(2, 2, Connectivity.FOUR)
        with pytest.raises(ValueError):
            image_to_signal(np.zeros((3, 2), dtype=np.uint8), grid)


def synthetic_source(count=400, size=28, num_classes=10, seed=0):
    """Unique fake images so split disjointness is detectable."""
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 255, size=(count, size, size), dtype=np.uint8)
    images[:, 0, 0] = np.arange(count) % 251  # near-unique marker pixel
    labels = (np.arange(count) % num_classes).astype(np.uint8)
    return images, labels


class TestMnist012:
    def test_split_sizes_and_labels(self):
        images, labels = synthetic_source(600)
        train, val, test = make_mnist012(images, labels, seed=5, sizes=(50, 10, 10))
        assert (len(train), len(val), len(test)) == (50, 10, 10)
        for split in (train, val, test):
            assert set(np.unique(split.labels)) <= {0, 1, 2}
            assert split.grid.height == 28 and split.grid.width == 28
            assert split.grid.connectivity is Connectivity.EIGHT
            assert split.signals.min() >= 0.0 and split.signals.max() <= 1.0

    def test_splits_disjoint(self):
        images, labels = synthetic_source(600)
        train, val, test = make_mnist012(images, labels, seed=5, sizes=(50, 10, 10))
        rows = {s.tobytes() for s in train.signals}
        assert all(s.tobytes() not in rows for s in val.signals)
        assert all(s.tobytes() not in rows for s in test.signals)

    def test_seeded_determinism(self):
        images, labels = synthetic_source(600)
        a = make_mnist012(images, labels, seed=9, sizes=(30, 5, 5))
        b = make_mnist012(images, labels, seed=9, sizes=(30, 5, 5))
        for split_a, split_b in zip(a, b):
            np.testing.assert_array_equal(split_a.signals, split_b.signals)
            np.testing.assert_array_equal(split_a.labels, split_b.labels)

    def test_insufficient_source_rejected(self):
        images, labels = synthetic_source(30)
        with pytest.raises(ValueError):
            make_mnist012(images, labels, seed=1, sizes=(500, 100, 100))


class TestTransformedDigitSets:
    def test_rot_grid_and_label_exclusion(self):
        train_images, train_labels = synthetic_source(300, seed=1)
        test_images, test_labels = synthetic_source(100, seed=2)
        train, val, test = make_mnist_rot(
            train_images, train_labels, test_images, test_labels,
            seed=3, train_size=100, val_size=20,
        )
        assert train.grid.num_nodes == 26 * 26
        for split in (train, val, test):
            assert 9 not in split.labels
        assert len(test) == (test_labels != 9).sum()

    def test_rot_train_split_is_untransformed_resize(self):
        from tigranet.transforms import bilinear_resize

        train_images, train_labels = synthetic_source(200, seed=4)
        test_images, test_labels = synthetic_source(50, seed=5)
        train, _, _ = make_mnist_rot(
            train_images, train_labels, test_images, test_labels,
            seed=6, train_size=40, val_size=10,
        )
        # reproduce the selection: same stream, same permutation
        rng = seed_stream(6, "mnist-rot")
        keep = np.flatnonzero(train_labels != 9)
        order = keep[rng.permutation(keep.size)]
        first = order[0]
        expected = bilinear_resize(train_images[first].astype(float) / 255.0, 26, 26)
        np.testing.assert_allclose(train.signals[0], expected.ravel(), atol=1e-12)

    def test_rot_angles_uniform(self):
        train_images, train_labels = synthetic_source(60, seed=7)
        test_images, test_labels = synthetic_source(9000, seed=8)
        _, _, test = make_mnist_rot(
            train_images, train_labels, test_images, test_labels,
            seed=9, train_size=30, val_size=10,
        )
        angles = np.asarray(test.transform_params, dtype=float)
        assert len(angles) >= 8000
        result = stats.kstest(angles / (2 * np.pi), "uniform")
        assert result.statistic < 0.05

    def test_trans_grid_is_padded_and_shifts_integer(self):
        train_images, train_labels = synthetic_source(200, seed=10)
        test_images, test_labels = synthetic_source(80, seed=11)
        train, _, test = make_mnist_trans(
            train_images, train_labels, test_images, test_labels,
            seed=12, train_size=40, val_size=10,
        )
        assert train.grid.num_nodes == 34 * 34
        shifts = np.asarray(test.transform_params)
        assert shifts.shape == (len(test), 2)
        assert np.all(shifts == np.round(shifts))
        assert shifts.min() >= -6 and shifts.max() <= 6

    def test_insufficient_source_rejected(self):
        train_images, train_labels = synthetic_source(20)
        test_images, test_labels = synthetic_source(10)
        with pytest.raises(ValueError):
            make_mnist_rot(
                train_images, train_labels, test_images, test_labels,
                seed=1, train_size=100, val_size=20,
            )


class TestSyntheticDigits:
    def test_shapes_classes_and_determinism(self):
        a = make_synthetic_digits(31, sizes=(20, 5, 5))
        b = make_synthetic_digits(31, sizes=(20, 5, 5))
        train = a[0]
        assert train.grid.num_nodes == 28 * 28
        assert set(np.unique(train.labels)) <= {0, 1, 2}
        assert train.signals.min() >= 0.0 and train.signals.max() <= 1.0
        for split_a, split_b in zip(a, b):
            np.testing.assert_array_equal(split_a.signals, split_b.signals)

    def test_digits_are_distinct(self):
        rng = seed_stream(1, "render")
        zero = render_digit(rng, 0)
        one = render_digit(rng, 1)
        two = render_digit(rng, 2)
        assert np.abs(zero - one).mean() > 0.02
        assert np.abs(one - two).mean() > 0.02
        assert np.abs(zero - two).mean() > 0.02

    def test_unsupported_digit_rejected(self):
        with pytest.raises(ValueError):
            render_digit(seed_stream(1, "render"), 7)


class TestDatasetCache:
    def test_roundtrip_and_byte_determinism(self, tmp_path):
        splits = make_synthetic_digits(77, sizes=(8, 3, 3))
        path_a = tmp_path / "a.tgds"
        path_b = tmp_path / "b.tgds"
        meta = {"dataset": "synthetic012", "seed": 77}
        save_dataset_cache(path_a, splits, meta)
        save_dataset_cache(path_b, splits, meta)
        assert path_a.read_bytes() == path_b.read_bytes()

        loaded, loaded_meta = load_dataset_cache(path_a)
        assert loaded_meta == meta
        for original, restored in zip(splits, loaded):
            np.testing.assert_array_equal(original.signals, restored.signals)
            np.testing.assert_array_equal(original.labels, restored.labels)
            assert original.split == restored.split
            assert restored.grid.connectivity is Connectivity.EIGHT

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.tgds"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_dataset_cache(path)
