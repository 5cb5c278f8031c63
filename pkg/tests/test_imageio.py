import numpy as np
import pytest

from tigranet.imageio import load_image_dir, read_grayscale, read_pgm, write_pgm


class TestPgm:
    def test_roundtrip_uint8(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, image)
        np.testing.assert_array_equal(read_pgm(path), image)

    def test_float_input_scales(self, tmp_path):
        path = tmp_path / "half.pgm"
        write_pgm(path, np.full((3, 3), 0.5))
        assert read_pgm(path)[0, 0] == 128

    def test_ascii_p2(self, tmp_path):
        path = tmp_path / "ascii.pgm"
        path.write_text("P2\n# comment\n2 2\n255\n0 64\n128 255\n")
        np.testing.assert_array_equal(read_pgm(path), [[0, 64], [128, 255]])

    def test_rejects_non_pgm(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"JUNK")
        with pytest.raises(ValueError):
            read_pgm(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "trunc.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ValueError):
            read_pgm(path)


class TestPng:
    def test_png_roundtrip_when_pillow_available(self, tmp_path):
        pil = pytest.importorskip("PIL.Image")
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, size=(6, 8), dtype=np.uint8)
        path = tmp_path / "img.png"
        pil.fromarray(image, mode="L").save(path)
        np.testing.assert_array_equal(read_grayscale(path), image)


class TestImageDir:
    def test_sorted_and_normalized(self, tmp_path):
        write_pgm(tmp_path / "b.pgm", np.full((2, 2), 255, dtype=np.uint8))
        write_pgm(tmp_path / "a.pgm", np.zeros((2, 2), dtype=np.uint8))
        loaded = load_image_dir(tmp_path)
        assert [name for name, _ in loaded] == ["a.pgm", "b.pgm"]
        assert loaded[0][1].max() == 0.0
        assert loaded[1][1].min() == 1.0

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            load_image_dir(tmp_path)
