"""Core image containers, masking, noise synthesis and PSNR.

All pixel data is stored as float64 in normalized intensity units
(nominal range [0, 1], i.e. 8-bit values divided by 255).  Noise levels
(sigma) are always given on the 0..255 scale at API boundaries and
divided by 255 internally.

Values are treated as immutable after construction; operations return
new objects and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# PSNR of two identical images is capped here instead of returning inf.
PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class Image:
    """A dense H x W x C raster in normalized intensity units.

    ``mean_offset`` stores the per-channel mean that was subtracted by
    :func:`subtract_mean`, so it can be added back after processing.
    """

    data: np.ndarray
    mean_offset: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image data must be H x W x C, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("zero-sized image")
        object.__setattr__(self, "data", arr)
        if self.mean_offset is not None:
            off = np.asarray(self.mean_offset, dtype=np.float64).reshape(-1)
            if off.shape[0] != arr.shape[2]:
                raise ValueError("mean_offset length must equal channel count")
            object.__setattr__(self, "mean_offset", off)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class MaskSignal:
    """Binary color-sampling mask, H x W x 3 with values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"mask must be H x W x 3, got shape {arr.shape}")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def make_bayer_mask(h: int, w: int) -> MaskSignal:
    """RGGB Bayer mask: (row, col) mod 2 = (0,0) R, (0,1)/(1,0) G, (1,1) B."""
    if h < 2 or w < 2:
        raise ValueError("bayer mask needs h, w >= 2")
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    m = np.zeros((h, w, 3))
    m[:, :, 0] = (rows % 2 == 0) & (cols % 2 == 0)
    m[:, :, 1] = (rows % 2) != (cols % 2)
    m[:, :, 2] = (rows % 2 == 1) & (cols % 2 == 1)
    return MaskSignal(m)


def apply_mask(m: MaskSignal, x: Image) -> Image:
    """Elementwise product m * x (color-filter-array sampling)."""
    if x.channels != 3:
        raise ValueError("mask application requires a 3-channel image")
    if m.data.shape != x.data.shape:
        raise ValueError(f"mask shape {m.data.shape} != image shape {x.data.shape}")
    return Image(m.data * x.data, mean_offset=x.mean_offset)


def nn_fill_rggb(mosaic: Image) -> Image:
    """Channel-wise nearest-observed-pixel fill of an RGGB mosaic (ties
    broken toward the smaller index).  A crude demosaicing baseline."""
    h, w = mosaic.height, mosaic.width
    if mosaic.channels != 3:
        raise ValueError("mosaic must be 3-channel")
    data = mosaic.data
    out = np.empty_like(data)
    i = np.arange(h)[:, None]
    j = np.arange(w)[None, :]
    # red observed at (even, even)
    out[:, :, 0] = data[i - (i % 2), j - (j % 2), 0]
    # blue observed at (odd, odd)
    ri = np.where(i % 2 == 1, i, np.where(i >= 1, i - 1, i + 1))
    cj = np.where(j % 2 == 1, j, np.where(j >= 1, j - 1, j + 1))
    out[:, :, 2] = data[ri, cj, 2]
    # green on the complementary checkerboard: nearest within the row
    observed = (i % 2) != (j % 2)
    cj_g = np.where(observed, j, np.where(j >= 1, j - 1, j + 1))
    out[:, :, 1] = data[i, cj_g, 1]
    return Image(out)


def awgn(x: Image, sigma: float, seed: int) -> Image:
    """Add i.i.d. Gaussian noise of std ``sigma`` (0..255 scale).

    Deterministic for a fixed seed; the generator is numpy's default
    64-bit PCG64.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return Image(x.data.copy(), mean_offset=x.mean_offset)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.data.shape) * (sigma / 255.0)
    return Image(x.data + noise, mean_offset=x.mean_offset)


def psnr(ref: Image, test: Image) -> float:
    """Peak signal-to-noise ratio in dB, peak = 1.0 in normalized units.

    Identical images return the cap value 100 dB instead of infinity.
    """
    if ref.data.shape != test.data.shape:
        raise ValueError(f"shape mismatch {ref.data.shape} vs {test.data.shape}")
    mse = np.mean((ref.data - test.data) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def subtract_mean(x: Image) -> Image:
    """Subtract the per-channel mean, recording it in ``mean_offset``."""
    mean = x.data.mean(axis=(0, 1))
    return Image(x.data - mean, mean_offset=mean)


def subtract_mean_masked(x: Image, m: MaskSignal) -> Image:
    """Mean subtraction for mosaiced data: the per-channel mean is taken
    over observed pixels only and subtracted at observed pixels only, so
    unobserved entries stay zero."""
    counts = m.data.sum(axis=(0, 1))
    if np.any(counts == 0):
        raise ValueError("mask leaves a channel entirely unobserved")
    mean = (x.data * m.data).sum(axis=(0, 1)) / counts
    return Image(x.data - mean * m.data, mean_offset=mean)


def add_mean(x: Image) -> Image:
    """Add back the mean recorded by subtract_mean (no-op if absent)."""
    if x.mean_offset is None:
        return x
    return Image(x.data + x.mean_offset, mean_offset=None)
