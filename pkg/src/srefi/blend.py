"""Gaussian/Laplacian pyramids and mask-switched multiresolution blending."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import expand2, reduce2

DEFAULT_LEVELS = 4
KERNEL_SIZE = 5
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
KERNEL_2D = np.outer(BINOMIAL_5, BINOMIAL_5)
EXPAND_TAPS = 2.0 * BINOMIAL_5  # x2 per axis, x4 overall, after zero insertion


@dataclass
class PyramidStack:
    levels: list[np.ndarray]
    kind: str  # "gaussian" or "laplacian"

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.levels[i]

    def __len__(self) -> int:
        return len(self.levels)


def gaussian_reduce(image: np.ndarray) -> np.ndarray:
    """Blur with the 5x5 binomial kernel, then keep every second row and column."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"gaussian_reduce needs even dimensions >= 2, got {h}x{w}")
    return reduce2(image, BINOMIAL_5)


def expand(image: np.ndarray) -> np.ndarray:
    """Double each dimension: zero insertion followed by the kernel scaled by 4."""
    return expand2(image, EXPAND_TAPS)


def check_levels(size_h: int, size_w: int, levels: int) -> None:
    if levels < 1:
        raise ShapeError(f"pyramid needs at least one level, got {levels}")
    step = 2 ** (levels - 1)
    if size_h % step or size_w % step:
        raise ShapeError(f"{size_h}x{size_w} image: both sides must be divisible by {step} for {levels} levels")


def build_gaussian(image: np.ndarray, levels: int = DEFAULT_LEVELS) -> PyramidStack:
    image = np.asarray(image, dtype=np.float64)
    check_levels(image.shape[0], image.shape[1], levels)
    out = [image]
    for _ in range(levels - 1):
        out.append(gaussian_reduce(out[-1]))
    return PyramidStack(out, "gaussian")


def build_laplacian(g: PyramidStack) -> PyramidStack:
    lv = g.levels
    out = [lv[i] - expand(lv[i + 1]) for i in range(len(lv) - 1)]
    out.append(lv[-1])
    return PyramidStack(out, "laplacian")


def collapse(lap: PyramidStack) -> np.ndarray:
    acc = lap.levels[-1]
    for i in range(len(lap.levels) - 2, -1, -1):
        acc = expand(acc) + lap.levels[i]
    return acc


def blend_level(l_base: np.ndarray, l_donor: np.ndarray, g_mask: np.ndarray) -> np.ndarray:
    """``g * base + (1 - g) * donor``; a mask of 1 keeps the base."""
    if l_base.shape != l_donor.shape or l_base.shape[:2] != g_mask.shape[:2]:
        raise ShapeError(f"level shapes differ: {l_base.shape}, {l_donor.shape}, {g_mask.shape}")
    if g_mask.ndim < l_base.ndim:
        g_mask = g_mask[..., None]
    return g_mask * l_base + (1.0 - g_mask) * l_donor


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half up to uint8."""
    return np.floor(np.clip(image, 0.0, 255.0) + 0.5).astype(np.uint8)


def blend_patch(
    current: np.ndarray,
    donor_patch: np.ndarray,
    mask: np.ndarray,
    levels: int = DEFAULT_LEVELS,
    quantized: bool = True,
) -> np.ndarray:
    """Blend ``donor_patch`` into ``current`` where ``mask`` is 0.

    All channels are processed together; the filters act per channel. The
    result is clamped to [0, 255] and, unless ``quantized=False``, rounded to
    uint8.
    """
    current = np.asarray(current, dtype=np.float64)
    donor_patch = np.asarray(donor_patch, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if current.shape != donor_patch.shape or current.shape[:2] != mask.shape[:2]:
        raise ShapeError(f"shape mismatch: current {current.shape}, donor {donor_patch.shape}, mask {mask.shape}")
    check_levels(current.shape[0], current.shape[1], levels)
    lap_cur = build_laplacian(build_gaussian(current, levels))
    lap_don = build_laplacian(build_gaussian(donor_patch, levels))
    g_mask = build_gaussian(mask, levels)
    blended = PyramidStack(
        [blend_level(a, b, g) for a, b, g in zip(lap_cur.levels, lap_don.levels, g_mask.levels)], "laplacian"
    )
    out = np.clip(collapse(blended), 0.0, 255.0)
    return quantize(out) if quantized else out


def blend_composite(mosaic: np.ndarray, layers: list[tuple[np.ndarray, np.ndarray]], levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Blend each ``(layer, donor_mask)`` onto the mosaic in order; returns uint8.

    ``donor_mask`` is True where the layer's donor owns the pixel, so the
    switch mask handed to :func:`blend_patch` is its complement.
    """
    acc = np.asarray(mosaic, dtype=np.float64)
    for layer, owned in layers:
        acc = blend_patch(acc, layer, ~owned, levels, quantized=False)
    return quantize(acc)


def normalized_level(level: np.ndarray) -> np.ndarray:
    """Stretch a (Laplacian) level to 0..255 for viewing."""
    lo, hi = float(level.min()), float(level.max())
    if hi == lo:
        return np.zeros(level.shape, dtype=np.uint8)
    return np.floor((level - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
