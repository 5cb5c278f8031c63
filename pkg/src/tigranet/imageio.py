"""Grayscale image files: PGM handled natively, PNG through pillow if installed."""

from __future__ import annotations

import os
import re

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit binary (P5) PGM; float inputs in [0, 1] are scaled."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        handle.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 (binary) or P2 (ascii) PGM as uint8."""
    with open(path, "rb") as handle:
        data = handle.read()
    stripped = re.sub(rb"#[^\n]*", b"", data[:2048])
    tokens = stripped.split()
    if not tokens or tokens[0] not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file")
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")

    if magic == b"P2":
        values = np.array(re.sub(rb"#[^\n]*", b"", data).split()[4:], dtype=np.uint16)
        return values.astype(np.uint8).reshape(height, width)

    # binary payload starts after the single whitespace following maxval
    header_pattern = rb"P5\s+(?:#[^\n]*\n\s*)*" + str(width).encode() + rb"\s+" \
        + str(height).encode() + rb"\s+" + str(maxval).encode() + rb"\s"
    match = re.match(header_pattern, data)
    if match is None:
        raise ValueError(f"{path}: malformed PGM header")
    payload = data[match.end() : match.end() + width * height]
    if len(payload) != width * height:
        raise ValueError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def read_grayscale(path) -> np.ndarray:
    """Read a grayscale image (uint8) from a .pgm or, with pillow, a .png file."""
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix == ".pgm":
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ValueError(
            f"{path}: reading {suffix} files needs the optional pillow dependency"
        ) from exc
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def load_image_dir(directory, normalize: bool = True):
    """All .pgm/.png images of a directory as (name, array) pairs, name-sorted."""
    names = sorted(
        f for f in os.listdir(directory) if f.lower().endswith((".pgm", ".png"))
    )
    if not names:
        raise ValueError(f"no .pgm or .png images found in {directory}")
    images = []
    for name in names:
        pixels = read_grayscale(os.path.join(directory, name))
        images.append((name, pixels.astype(np.float64) / 255.0 if normalize else pixels))
    return images
