"""Raster primitives shared by the whole pipeline.

Images are plain numpy arrays with values in [0, 1]:

* RGB images have shape ``(H, W, 3)``
* gray images have shape ``(H, W)``
* masks are boolean ``(H, W)`` arrays, ``True`` marking missing pixels

Resampling is expressed as separable linear maps (``R_rows @ X @ R_cols.T``)
so the network layers in :mod:`eiinpaint.nn` can reuse the same matrices for
their backward passes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

LUMA_WEIGHTS = (0.30, 0.59, 0.11)
MIN_LEVEL_SIDE = 8


class ImageIOError(OSError):
    """Raised when a raster cannot be read or written."""


def _check_factor(factor: int) -> None:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be an integer >= 1, got {factor!r}")


def as_rgb(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return arr


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) gray array, got shape {arr.shape}")
    return arr


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        arr = arr.astype(bool)
    return arr


def to_monochrome(img) -> np.ndarray:
    """Collapse RGB to the single-channel bottleneck ``0.30 R + 0.59 G + 0.11 B``."""
    rgb = as_rgb(img)
    r, g, b = LUMA_WEIGHTS
    gray = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    return np.clip(gray, 0.0, 1.0)


def gray_to_rgb(gray) -> np.ndarray:
    g = as_gray(gray)
    return np.repeat(g[..., None], 3, axis=2)


# --- separable resampling matrices -------------------------------------------------


@lru_cache(maxsize=256)
def box_matrix(n_in: int, factor: int) -> np.ndarray:
    """``(ceil(n_in / factor), n_in)`` row-averaging matrix; ragged last block averages in-bounds pixels."""
    _check_factor(factor)
    n_out = -(-n_in // factor)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * factor, min((i + 1) * factor, n_in)
        mat[i, lo:hi] = 1.0 / (hi - lo)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=256)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation matrix of shape ``(n_out, n_in)``."""
    if n_out < n_in:
        raise ValueError(f"cannot upsample {n_in} pixels to fewer ({n_out})")
    mat = np.zeros((n_out, n_in))
    if n_in == 1:
        mat[:, 0] = 1.0
    elif n_out == n_in:
        mat[:] = np.eye(n_in)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
        frac = pos - lo
        rows = np.arange(n_out)
        mat[rows, lo] = 1.0 - frac
        mat[rows, lo + 1] += frac
    mat.setflags(write=False)
    return mat


def _apply_separable(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return rows @ img @ cols.T
    # (H, W, C)
    return np.einsum("ih,hwc,jw->ijc", rows, img, cols, optimize=True)


def box_downsample(img, factor: int) -> np.ndarray:
    """Mean over each ``factor x factor`` block (gray or RGB)."""
    _check_factor(factor)
    arr = np.asarray(img, dtype=np.float64)
    if factor == 1:
        return arr.copy()
    h, w = arr.shape[:2]
    return _apply_separable(arr, box_matrix(h, factor), box_matrix(w, factor))


def bilinear_upsample(img, out_h: int, out_w: int) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if out_h < h or out_w < w:
        raise ValueError(f"target {out_h}x{out_w} is smaller than source {h}x{w}")
    if (out_h, out_w) == (h, w):
        return arr.copy()
    out = _apply_separable(arr, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w))
    # rounding can leak an ulp past the source range
    return np.clip(out, arr.min(), arr.max())


def maxpool_mask_downsample(mask, factor: int) -> np.ndarray:
    """A block becomes missing if any of its pixels is missing."""
    _check_factor(factor)
    m = as_mask(mask)
    if factor == 1:
        return m.copy()
    h, w = m.shape
    ho, wo = -(-h // factor), -(-w // factor)
    padded = np.zeros((ho * factor, wo * factor), dtype=bool)
    padded[:h, :w] = m
    return padded.reshape(ho, factor, wo, factor).any(axis=(1, 3))


# --- pyramids -----------------------------------------------------------------------


@dataclass(frozen=True)
class PyramidLevel:
    gray: np.ndarray
    color: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.gray.shape


@dataclass(frozen=True)
class PyramidSet:
    """Aligned gray/color/mask pyramids ordered coarsest (index 0) to finest."""

    levels: tuple[PyramidLevel, ...]
    factor: int = 2

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, n: int) -> PyramidLevel:
        return self.levels[n]


def level_shapes(h: int, w: int, height: int, factor: int = 2) -> list[tuple[int, int]]:
    """Level dimensions, coarsest first, by repeated ceil-division."""
    shapes = [(h, w)]
    for _ in range(height - 1):
        ph, pw = shapes[-1]
        shapes.append((-(-ph // factor), -(-pw // factor)))
    return shapes[::-1]


def max_pyramid_height(h: int, w: int, factor: int = 2, min_side: int = MIN_LEVEL_SIDE) -> int:
    height = 0
    while True:
        ch, cw = level_shapes(h, w, height + 1, factor)[0]
        if min(ch, cw) < min_side:
            return height
        height += 1


def build_pyramids(img, mask, height: int, factor: int = 2, gray=None) -> PyramidSet:
    """Build the gray, color and mask pyramids used for coarse-to-fine training.

    ``gray`` overrides the monochrome conversion of ``img`` at the finest level
    (used when the bottleneck comes from an external completion).
    """
    rgb = as_rgb(img)
    m = as_mask(mask)
    if m.shape != rgb.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image shape {rgb.shape[:2]}")
    if height < 1:
        raise ValueError(f"pyramid height must be >= 1, got {height}")
    _check_factor(factor)
    h, w = m.shape
    coarsest = level_shapes(h, w, height, factor)[0]
    if min(coarsest) < MIN_LEVEL_SIDE:
        usable = max_pyramid_height(h, w, factor)
        raise ValueError(
            f"pyramid height {height} gives a {coarsest[0]}x{coarsest[1]} coarsest level "
            f"(< {MIN_LEVEL_SIDE} px); maximum usable height for {h}x{w} is {usable}"
        )
    g = to_monochrome(rgb) if gray is None else as_gray(gray)
    if g.shape != (h, w):
        raise ValueError(f"gray shape {g.shape} does not match image shape {(h, w)}")

    levels = [PyramidLevel(g, rgb, m)]
    for _ in range(height - 1):
        prev = levels[-1]
        levels.append(
            PyramidLevel(
                box_downsample(prev.gray, factor),
                box_downsample(prev.color, factor),
                maxpool_mask_downsample(prev.mask, factor),
            )
        )
    return PyramidSet(tuple(levels[::-1]), factor)


def reattach_luminance(colorized, gray) -> np.ndarray:
    """Shift each pixel's RGB equally so its monochrome matches ``gray``.

    Where clamping to [0, 1] would engage, the remaining luminance deficit is
    redistributed over the channels that still have headroom.
    """
    rgb = as_rgb(colorized)
    g = as_gray(gray)
    if g.shape != rgb.shape[:2]:
        raise ValueError(f"gray shape {g.shape} does not match image shape {rgb.shape[:2]}")
    weights = np.asarray(LUMA_WEIGHTS)
    out = rgb.copy()
    for _ in range(3):
        deficit = g - out @ weights
        if np.all(np.abs(deficit) <= 1e-12):
            break
        free = np.where(deficit[..., None] > 0, out < 1.0, out > 0.0)
        wsum = (free * weights).sum(axis=-1)
        shift = np.divide(deficit, wsum, out=np.zeros_like(deficit), where=wsum > 0)
        out = np.clip(out + free * shift[..., None], 0.0, 1.0)
    return out


# --- raster I/O ---------------------------------------------------------------------


def _open(path) -> Image.Image:
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as exc:
        raise ImageIOError(f"no such image file: {path}") from exc
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    return img


def load_image(path) -> np.ndarray:
    """Load an 8-bit raster as an ``(H, W, 3)`` float array (gray files are replicated)."""
    img = _open(path)
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def load_gray(path) -> np.ndarray:
    img = _open(path)
    if img.mode in ("L", "I;16", "I", "F"):
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return to_monochrome(rgb)


def load_mask(path) -> np.ndarray:
    """Read a mask raster; 8-bit values >= 128 are missing."""
    img = _open(path)
    return np.asarray(img.convert("L")) >= 128


def to_uint8(arr) -> np.ndarray:
    return np.round(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _save(img: Image.Image, path) -> None:
    path = Path(path)
    try:
        img.save(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def save_image(img, path) -> None:
    _save(Image.fromarray(to_uint8(as_rgb(img)), mode="RGB"), path)


def save_gray(gray, path) -> None:
    _save(Image.fromarray(to_uint8(as_gray(gray)), mode="L"), path)


def save_mask(mask, path) -> None:
    _save(Image.fromarray(as_mask(mask).astype(np.uint8) * 255, mode="L"), path)


def center_square(img, size: int) -> np.ndarray:
    """Center-crop to a square and resize to ``size`` pixels with a Lanczos filter."""
    rgb = as_rgb(img)
    h, w = rgb.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    crop = Image.fromarray(to_uint8(rgb[top : top + s, left : left + s]))
    resized = crop.resize((size, size), Image.LANCZOS)
    return np.asarray(resized, dtype=np.float64) / 255.0

