"""Dataset construction: IDX parsing, digit subsets, and graph-signal sets.

All sampling is seeded and reproducible; splits never share a source
index. Pixel intensities are normalized to [0, 1] and flattened row-major
onto the grid.
"""

from __future__ import annotations

import gzip
import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .grid import Connectivity, GridGraph, build_grid_graph
from .seeding import seed_stream
from .transforms import TransformSpec, apply_general_isometry, bilinear_resize

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """The byte stream is not a valid IDX container."""


def parse_idx(data: bytes) -> np.ndarray:
    """Parse IDX bytes into a label vector or an image tensor (uint8)."""
    if len(data) < 4:
        raise IdxFormatError("IDX header truncated")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_LABELS_MAGIC:
        ndim = 1
    elif magic == IDX_IMAGES_MAGIC:
        ndim = 3
    else:
        raise IdxFormatError(f"bad IDX magic 0x{magic:08x}")

    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise IdxFormatError("IDX dimension header truncated")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    count = math.prod(dims)
    if count > 1 << 34:
        raise IdxFormatError(f"IDX dimensions overflow: {dims}")
    payload = data[header_len:]
    if len(payload) != count:
        raise IdxFormatError(
            f"IDX payload has {len(payload)} bytes, dimensions {dims} need {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def load_idx(path) -> np.ndarray:
    """Read an IDX file, decompressing transparently if it is gzipped."""
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return parse_idx(data)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as handle:
        handle.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        handle.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as handle:
        handle.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        handle.write(labels.tobytes())


# --- labeled signal sets -------------------------------------------------------

@dataclass
class LabeledSignalSet:
    """Signals on one shared grid with integer class labels.

    `transform_params` records the per-sample transform drawn for a
    transformed test split (rotation angle or integer shift), so the
    generation is auditable and replayable.
    """

    signals: np.ndarray  # (count, N) float64 in [0, 1]
    labels: np.ndarray   # (count,) int64
    split: str
    grid: GridGraph
    transform_params: np.ndarray | None = None

    def __len__(self) -> int:
        return self.signals.shape[0]


def image_to_signal(pixels: np.ndarray, grid: GridGraph) -> np.ndarray:
    """Row-major flatten; uint8 scales by 255, floats must already be in [0, 1]."""
    pixels = np.asarray(pixels)
    if pixels.shape != (grid.height, grid.width):
        raise ValueError(
            f"image shape {pixels.shape} does not match grid {grid.height}x{grid.width}"
        )
    if pixels.dtype == np.uint8:
        return pixels.ravel().astype(np.float64) / 255.0
    flat = pixels.ravel().astype(np.float64)
    if flat.size and (flat.min() < -1e-9 or flat.max() > 1.0 + 1e-9):
        raise ValueError("float images must be normalized to [0, 1]")
    return flat


def _signals_from_stack(images: np.ndarray, grid: GridGraph) -> np.ndarray:
    return np.stack([image_to_signal(img, grid) for img in images])


def make_mnist012(
    images: np.ndarray,
    labels: np.ndarray,
    seed: int,
    sizes=(500, 100, 100),
    connectivity: Connectivity = Connectivity.EIGHT,
):
    """Seeded disjoint train/validation/test split over digits 0, 1 and 2."""
    keep = np.flatnonzero(np.isin(labels, (0, 1, 2)))
    total = sum(sizes)
    if keep.size < total:
        raise ValueError(f"need {total} images with labels 0-2, found {keep.size}")
    rng = seed_stream(seed, "mnist012")
    chosen = keep[rng.permutation(keep.size)[:total]]

    grid = build_grid_graph(images.shape[1], images.shape[2], connectivity)
    splits = []
    start = 0
    for name, size in zip(("train", "validation", "test"), sizes):
        idx = chosen[start : start + size]
        start += size
        splits.append(
            LabeledSignalSet(
                signals=_signals_from_stack(images[idx], grid),
                labels=labels[idx].astype(np.int64),
                split=name,
                grid=grid,
            )
        )
    return tuple(splits)


def _resize_set(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    scaled = images.astype(np.float64) / 255.0
    return np.stack([bilinear_resize(img, out_h, out_w) for img in scaled])


def _pad_set(images: np.ndarray, margin: int) -> np.ndarray:
    scaled = images.astype(np.float64) / 255.0
    return np.pad(scaled, ((0, 0), (margin, margin), (margin, margin)))


def _build_transformed_digit_set(
    train_images,
    train_labels,
    test_images,
    test_labels,
    seed: int,
    stream: str,
    prepare,
    transform_test,
    train_size: int,
    val_size: int,
    connectivity: Connectivity,
):
    """Shared construction of the rotated/translated digit benchmarks.

    Digit 9 is dropped everywhere; train/validation are untransformed
    samples of the training source, the full test source is transformed.
    """
    rng = seed_stream(seed, stream)
    keep_train = np.flatnonzero(train_labels != 9)
    if keep_train.size < train_size + val_size:
        raise ValueError(
            f"need {train_size + val_size} non-9 training images, found {keep_train.size}"
        )
    order = keep_train[rng.permutation(keep_train.size)]
    train_idx = order[:train_size]
    val_idx = order[train_size : train_size + val_size]
    test_idx = np.flatnonzero(test_labels != 9)

    train_arr = prepare(train_images[train_idx])
    val_arr = prepare(train_images[val_idx])
    test_arr = prepare(test_images[test_idx])
    transformed, params = [], []
    for img in test_arr:
        moved, param = transform_test(rng, img)
        transformed.append(moved)
        params.append(param)
    test_arr = np.stack(transformed)

    grid = build_grid_graph(train_arr.shape[1], train_arr.shape[2], connectivity)

    def make(arr, labs, name, transform_params=None):
        return LabeledSignalSet(
            signals=_signals_from_stack(np.clip(arr, 0.0, 1.0), grid),
            labels=labs.astype(np.int64),
            split=name,
            grid=grid,
            transform_params=transform_params,
        )

    return (
        make(train_arr, train_labels[train_idx], "train"),
        make(val_arr, train_labels[val_idx], "validation"),
        make(test_arr, test_labels[test_idx], "test", np.asarray(params)),
    )


def make_mnist_rot(
    train_images,
    train_labels,
    test_images,
    test_labels,
    seed: int,
    train_size: int = 50000,
    val_size: int = 3000,
    connectivity: Connectivity = Connectivity.EIGHT,
):
    """26x26 digits; the test split is rotated by uniform angles in [0, 360)."""

    def transform(rng, img):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        return apply_general_isometry(img, TransformSpec(rotation=angle)), angle

    return _build_transformed_digit_set(
        train_images, train_labels, test_images, test_labels, seed, "mnist-rot",
        lambda imgs: _resize_set(imgs, 26, 26), transform,
        train_size, val_size, connectivity,
    )


def make_mnist_trans(
    train_images,
    train_labels,
    test_images,
    test_labels,
    seed: int,
    train_size: int = 50000,
    val_size: int = 3000,
    connectivity: Connectivity = Connectivity.EIGHT,
):
    """34x34 zero-padded digits; the test split shifts by uniform integers in [-6, 6]."""

    def transform(rng, img):
        dx, dy = (int(v) for v in rng.integers(-6, 7, size=2))
        moved = apply_general_isometry(img, TransformSpec(translation=(float(dx), float(dy))))
        return moved, (dx, dy)

    return _build_transformed_digit_set(
        train_images, train_labels, test_images, test_labels, seed, "mnist-trans",
        lambda imgs: _pad_set(imgs, 3), transform,
        train_size, val_size, connectivity,
    )


# --- MNIST file discovery -------------------------------------------------------

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def find_mnist(root=None):
    """Locate the four MNIST IDX files (optionally gzipped) under a root.

    The root defaults to $TIGRANET_DATA or ./data/mnist. Returns a dict of
    paths, or None when any file is missing.
    """
    if root is None:
        root = os.environ.get("TIGRANET_DATA", os.path.join("data", "mnist"))
    found = {}
    for key, candidates in MNIST_FILES.items():
        for name in candidates:
            for suffix in ("", ".gz"):
                path = os.path.join(root, name + suffix)
                if os.path.exists(path):
                    found[key] = path
                    break
            if key in found:
                break
        if key not in found:
            return None
    return found


def load_mnist(root=None):
    """(train_images, train_labels, test_images, test_labels) from IDX files."""
    paths = find_mnist(root)
    if paths is None:
        root_text = root or os.environ.get("TIGRANET_DATA", os.path.join("data", "mnist"))
        raise FileNotFoundError(f"MNIST IDX files not found under {root_text!r}")
    return (
        load_idx(paths["train_images"]),
        load_idx(paths["train_labels"]),
        load_idx(paths["test_images"]),
        load_idx(paths["test_labels"]),
    )


# --- synthetic digits ------------------------------------------------------------

def _render_strokes(size, points_list, thickness, softness=1.0):
    """Rasterize polylines by distance with a soft edge, supersampled 2x."""
    scale = 2
    big = size * scale
    rows, cols = np.meshgrid(np.arange(big), np.arange(big), indexing="ij")
    pix = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    min_dist = np.full(pix.shape[0], np.inf)
    for points in points_list:
        pts = np.asarray(points, dtype=np.float64) * scale
        for a, b in zip(pts[:-1], pts[1:]):
            seg = b - a
            seg_len2 = max(float(seg @ seg), 1e-12)
            t = np.clip(((pix - a) @ seg) / seg_len2, 0.0, 1.0)
            closest = a + t[:, np.newaxis] * seg
            dist = np.hypot(*(pix - closest).T)
            min_dist = np.minimum(min_dist, dist)
    radius = thickness * scale / 2.0
    intensity = np.clip(1.0 - (min_dist - radius) / (softness * scale), 0.0, 1.0)
    big_img = intensity.reshape(big, big)
    return big_img.reshape(size, scale, size, scale).mean(axis=(1, 3))


def render_digit(rng: np.random.Generator, digit: int, size: int = 28) -> np.ndarray:
    """A randomized glyph for digit 0, 1 or 2 as a float image in [0, 1].

    The classes are kept apart on statistics that survive interpolated
    rotations (total ink mass and spatial extent), so a classifier trained
    on upright glyphs transfers to arbitrarily rotated ones.
    """
    cx = size / 2.0 + rng.uniform(-1.2, 1.2)
    cy = size / 2.0 + rng.uniform(-1.2, 1.2)
    scale = size / 28.0 * rng.uniform(0.92, 1.05)
    thickness = rng.uniform(2.0, 2.5) * scale
    softness = rng.uniform(0.9, 1.3)
    tilt = rng.uniform(-0.25, 0.25)

    def rot(points):
        pts = np.asarray(points, dtype=np.float64)
        centered = pts - (cy, cx)
        cos_t, sin_t = math.cos(tilt), math.sin(tilt)
        return centered @ np.array([[cos_t, sin_t], [-sin_t, cos_t]]) + (cy, cx)

    if digit == 0:
        theta = np.linspace(0.0, 2.0 * math.pi, 48)
        a, b = 7.2 * scale * rng.uniform(0.95, 1.05), 9.4 * scale * rng.uniform(0.95, 1.05)
        ring = np.stack([cy + b * np.sin(theta), cx + a * np.cos(theta)], axis=1)
        strokes = [rot(ring)]
    elif digit == 1:
        half = 7.5 * scale
        stem = [(cy - half, cx), (cy + half, cx)]
        flag = [(cy - half + 2.5 * scale, cx - 2.5 * scale), (cy - half, cx)]
        strokes = [rot(stem), rot(flag)]
    elif digit == 2:
        theta = np.linspace(math.pi, -0.1 * math.pi, 16)
        r = 4.2 * scale
        arc = np.stack(
            [cy - 3.6 * scale - 0.9 * r * np.sin(theta), cx + r * np.cos(theta)], axis=1
        )
        diag_end = (cy + 7.2 * scale, cx - 4.2 * scale)
        base_end = (cy + 7.2 * scale, cx + 4.6 * scale)
        strokes = [np.vstack([arc, [diag_end], [base_end]])]
    else:
        raise ValueError(f"synthetic rendering supports digits 0-2, got {digit}")

    return _render_strokes(size, strokes, thickness, softness)


def make_synthetic_digits(
    seed: int,
    sizes=(500, 100, 100),
    size: int = 28,
    connectivity: Connectivity = Connectivity.EIGHT,
):
    """Self-contained stand-in for the digit subset when MNIST files are absent."""
    rng = seed_stream(seed, "synthetic-digits")
    grid = build_grid_graph(size, size, connectivity)
    splits = []
    for name, count in zip(("train", "validation", "test"), sizes):
        labels = rng.integers(0, 3, size=count)
        signals = np.stack(
            [image_to_signal(render_digit(rng, int(d), size), grid) for d in labels]
        )
        splits.append(
            LabeledSignalSet(signals, labels.astype(np.int64), name, grid)
        )
    return tuple(splits)


# --- dataset cache ----------------------------------------------------------------

CACHE_MAGIC = b"TGDS"
CACHE_VERSION = 1


def save_dataset_cache(path, splits, meta: dict) -> None:
    """Write splits to one versioned binary file (little-endian payloads)."""
    grid = splits[0].grid
    header = {
        "version": CACHE_VERSION,
        "meta": meta,
        "grid": {
            "height": grid.height,
            "width": grid.width,
            "connectivity": grid.connectivity.value,
        },
        "splits": [
            {"name": s.split, "count": len(s)} for s in splits
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CACHE_MAGIC)
        handle.write(struct.pack("<II", CACHE_VERSION, len(blob)))
        handle.write(blob)
        for split in splits:
            handle.write(np.ascontiguousarray(split.labels, dtype=np.uint8).tobytes())
            handle.write(np.ascontiguousarray(split.signals, dtype="<f8").tobytes())


def load_dataset_cache(path):
    """Rebuild (splits, meta) from a cache file."""
    with open(path, "rb") as handle:
        if handle.read(4) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a dataset cache")
        version, blob_len = struct.unpack("<II", handle.read(8))
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        header = json.loads(handle.read(blob_len).decode("utf-8"))
        grid_info = header["grid"]
        grid = build_grid_graph(
            grid_info["height"], grid_info["width"], Connectivity(grid_info["connectivity"])
        )
        n_nodes = grid.height * grid.width
        splits = []
        for entry in header["splits"]:
            count = entry["count"]
            labels = np.frombuffer(handle.read(count), dtype=np.uint8).astype(np.int64)
            signals = np.frombuffer(
                handle.read(count * n_nodes * 8), dtype="<f8"
            ).reshape(count, n_nodes).copy()
            splits.append(LabeledSignalSet(signals, labels, entry["name"], grid))
    return tuple(splits), header["meta"]
