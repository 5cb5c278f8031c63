"""Isometric image transforms on the pixel lattice.

Two families: lattice-exact transforms (quarter-turn rotations, mirror
reflections, integer translations) that act as node permutations with zero
fill at the border, and general transforms (arbitrary rotation angle,
sub-pixel translation) realized by bilinear interpolation with zeros
outside the grid.

A combined transform applies reflect, then rotate, then translate.
Positive rotation turns the content counterclockwise when row 0 is
displayed on top (so a quarter turn matches ``np.rot90(img, 1)``);
translation (dx, dy) moves content by dx columns right and dy rows down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

QUARTER = math.pi / 2.0


@dataclass(frozen=True)
class TransformSpec:
    """Rotation angle (radians), translation (dx, dy) in pixels, mirror flag."""

    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    reflect: bool = False

    def is_graph_isometry(self, atol: float = 1e-12) -> bool:
        """True when the transform is an exact lattice permutation."""
        dx, dy = self.translation
        on_lattice = (
            abs(self.rotation / QUARTER - round(self.rotation / QUARTER)) < atol
            and abs(dx - round(dx)) < atol
            and abs(dy - round(dy)) < atol
        )
        return on_lattice


def closest_graph_isometry(spec: TransformSpec) -> TransformSpec:
    """Snap a transform to the nearest lattice permutation.

    The rotation rounds to a multiple of 90 degrees (within 45 degrees) and
    the translation to integer pixels (within half a pixel); the reflection
    flag is kept.
    """
    quarters = float(np.round(spec.rotation / QUARTER))
    dx, dy = spec.translation
    return replace(
        spec,
        rotation=quarters * QUARTER,
        translation=(float(np.round(dx)), float(np.round(dy))),
    )


def _shift_integer(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation with zero fill for content moved off-grid."""
    h, w = image.shape
    out = np.zeros_like(image)
    src_r = slice(max(0, -dy), min(h, h - dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_r = slice(max(0, dy), min(h, h + dy))
    dst_c = slice(max(0, dx), min(w, w + dx))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = image[src_r, src_c]
    return out


def apply_graph_isometry(image: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply a lattice-exact transform as a pure node permutation.

    Quarter-turn rotations of non-square images are rejected for 90/270
    degrees because they do not map the lattice onto itself.
    """
    if not spec.is_graph_isometry():
        raise ValueError(f"{spec} is not a lattice-exact transform")
    image = np.asarray(image, dtype=np.float64)
    out = image[:, ::-1] if spec.reflect else image

    quarters = int(np.round(spec.rotation / QUARTER)) % 4
    if quarters in (1, 3) and image.shape[0] != image.shape[1]:
        raise ValueError(
            f"quarter-turn rotation needs a square grid, got {image.shape}"
        )
    out = np.rot90(out, quarters)

    dx, dy = int(round(spec.translation[0])), int(round(spec.translation[1]))
    if dx or dy:
        out = _shift_integer(out, dx, dy)
    return np.ascontiguousarray(out)


def bilinear_sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample an image at real coordinates; points outside read as zero."""
    h, w = image.shape
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0

    out = np.zeros(rows.shape, dtype=np.float64)
    for dr, dc, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = np.zeros(rows.shape, dtype=np.float64)
        vals[ok] = image[rr[ok], cc[ok]]
        out += weight * vals
    return out


def apply_general_isometry(
    image: np.ndarray, spec: TransformSpec, center: tuple | None = None
) -> np.ndarray:
    """Apply an arbitrary rotation/translation by bilinear interpolation.

    `center` is the (row, col) rotation center, defaulting to the image
    center. Out-of-grid samples read as zero. At lattice-exact parameters
    the interpolation degenerates to the corresponding permutation.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    cr, cc = center if center is not None else ((h - 1) / 2.0, (w - 1) / 2.0)

    rows_o, cols_o = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = cols_o - cc - spec.translation[0]
    y = rows_o - cr - spec.translation[1]
    cos_g, sin_g = math.cos(spec.rotation), math.sin(spec.rotation)
    x_src = cos_g * x - sin_g * y
    y_src = sin_g * x + cos_g * y
    if spec.reflect:
        x_src = -x_src
    return bilinear_sample(image, y_src + cr, x_src + cc)


def rotate_image(image: np.ndarray, angle: float, center: tuple | None = None) -> np.ndarray:
    return apply_general_isometry(image, TransformSpec(rotation=angle), center)


def translate_image(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    return apply_general_isometry(image, TransformSpec(translation=(dx, dy)))


def _catmull_rom(x: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    ax = np.abs(x)
    out = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    out[near] = (1.5 * ax[near] - 2.5) * ax[near] ** 2 + 1.0
    out[far] = ((-0.5 * ax[far] + 2.5) * ax[far] - 4.0) * ax[far] + 2.0
    return out


def _resample_axis_cubic(image: np.ndarray, out_len: int, factor: float) -> np.ndarray:
    """Catmull-Rom resampling along axis 0, kernel widened by `factor` >= 1."""
    in_len = image.shape[0]
    scale = max(factor, 1.0)
    radius = int(math.ceil(2.0 * scale))
    centers = (np.arange(out_len) + 0.5) * factor - 0.5
    base = np.floor(centers).astype(int)

    out = np.zeros((out_len,) + image.shape[1:], dtype=np.float64)
    norm = np.zeros(out_len)
    for offset in range(-radius + 1, radius + 1):
        idx = np.clip(base + offset, 0, in_len - 1)
        weight = _catmull_rom((base + offset - centers) / scale)
        out += weight.reshape((-1,) + (1,) * (image.ndim - 1)) * image[idx]
        norm += weight
    return out / norm.reshape((-1,) + (1,) * (image.ndim - 1))


def bicubic_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Downsample by an integer factor with a Catmull-Rom kernel.

    The kernel is widened by the factor so the result is antialiased;
    edges are handled by clamping. Output size is floor(size / factor).
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    image = np.asarray(image, dtype=np.float64)
    if factor == 1:
        return image.copy()
    out_h, out_w = image.shape[0] // factor, image.shape[1] // factor
    if out_h < 1 or out_w < 1:
        raise ValueError(f"factor {factor} collapses image of shape {image.shape}")
    tmp = _resample_axis_cubic(image, out_h, float(factor))
    return _resample_axis_cubic(tmp.T, out_w, float(factor)).T


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize to an arbitrary shape by bilinear sampling (clamped edges)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rr, cc = np.meshgrid(np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1), indexing="ij")
    return bilinear_sample(image, rr, cc)
