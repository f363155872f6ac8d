"""Strided multi-subband analysis/synthesis convolutions.

The analysis transform correlates the image with each filter of a bank
and keeps every stride-th output sample; the synthesis transform is its
exact adjoint (zero-fill onto the full grid, then convolve and sum over
subbands).  Both directions are built from the same weight array with no
explicit filter flipping, so <analysis(x), z> == <x, synthesis(z)> holds
to floating-point rounding by construction.

Layout conventions (float64 throughout):

    images   (..., H, W, C)
    weights  (M, k, k, C)         square k x k filters, k odd or even
    codes    (..., M, Hg, Wg)     Hg = ceil(H / stride)

Leading ``...`` axes are free batch dimensions.  Boundaries are zero
padded so that stride-1 output matches the input size ("same").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .images import Image


@dataclass(frozen=True)
class FilterBank:
    """M square filters of spatial size k x k with C channels each."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or w.shape[1] != w.shape[2]:
            raise ValueError(f"weights must be (M, k, k, C) with square k, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("filter weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def num_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def spatial_size(self) -> int:
        return self.weights.shape[1]

    @property
    def channels(self) -> int:
        return self.weights.shape[3]

    def filter_norms(self) -> np.ndarray:
        """Full l2 norm of each filter over all k*k*C coefficients."""
        return np.sqrt((self.weights ** 2).sum(axis=(1, 2, 3)))


@dataclass(frozen=True)
class SubbandCode:
    """M-subband latent representation on a stride-decimated grid.

    ``data`` is (M, Hg, Wg), or (M, Hg, Wg, G) for color-grouped codes
    (G = 3) used by the block-thresholding variant.  ``image_shape``
    records the original (H, W) so zero-filling can restore it.
    """

    data: np.ndarray
    stride: int
    image_shape: tuple

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim not in (3, 4):
            raise ValueError(f"code data must be (M, Hg, Wg[, G]), got {arr.shape}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        h, w = self.image_shape
        want = (ceil_div(h, self.stride), ceil_div(w, self.stride))
        if arr.shape[1:3] != want:
            raise ValueError(
                f"grid dims {arr.shape[1:3]} != ceil-division grid {want} "
                f"for image {self.image_shape} at stride {self.stride}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "image_shape", (int(h), int(w)))

    @property
    def num_subbands(self) -> int:
        return self.data.shape[0]

    @property
    def grid_height(self) -> int:
        return self.data.shape[1]

    @property
    def grid_width(self) -> int:
        return self.data.shape[2]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _pad_lo_hi(k: int):
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def analysis_raw(x: np.ndarray, weights: np.ndarray, stride: int = 1) -> np.ndarray:
    """Correlate (..., H, W, C) with (M, k, k, C) on the stride grid.

    Returns (..., M, Hg, Wg) with Hg = ceil(H/stride).
    """
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    k = weights.shape[1]
    lo, hi = _pad_lo_hi(k)
    pad = [(0, 0)] * (x.ndim - 3) + [(lo, hi), (lo, hi), (0, 0)]
    xp = np.pad(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(-3, -2))
    win = win[..., ::stride, ::stride, :, :, :]  # (..., Hg, Wg, C, k, k)
    z = np.tensordot(win, weights, axes=((-3, -2, -1), (3, 1, 2)))
    return np.moveaxis(z, -1, -3)


def synthesis_raw(z: np.ndarray, weights: np.ndarray, stride: int, out_hw: tuple) -> np.ndarray:
    """Exact adjoint of :func:`analysis_raw`.

    Zero-fills (..., M, Hg, Wg) onto the (H, W) grid and accumulates the
    per-subband convolutions into (..., H, W, C).
    """
    z = np.asarray(z, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    M, k, _, C = weights.shape
    if z.shape[-3] != M:
        raise ValueError(f"code has {z.shape[-3]} subbands, bank has {M} filters")
    H, W = out_hw
    lo, hi = _pad_lo_hi(k)
    lead = z.shape[:-3]
    Hg, Wg = z.shape[-2:]
    if (Hg, Wg) != (ceil_div(H, stride), ceil_div(W, stride)):
        raise ValueError(f"code grid {(Hg, Wg)} inconsistent with output {out_hw} at stride {stride}")
    # one GEMM per call: (..., Hg, Wg, M) @ (M, k*k*C), then scatter-add (col2im)
    cols = np.moveaxis(z, -3, -1) @ weights.reshape(M, k * k * C)
    cols = cols.reshape(lead + (Hg, Wg, k, k, C))
    out = np.zeros(lead + (H + k - 1, W + k - 1, C))
    for u in range(k):
        for v in range(k):
            out[..., u:u + (Hg - 1) * stride + 1:stride,
                v:v + (Wg - 1) * stride + 1:stride, :] += cols[..., u, v, :]
    return out[..., lo:lo + H, lo:lo + W, :]


def weight_grad(x_like: np.ndarray, code_like: np.ndarray, ksize: int, stride: int = 1) -> np.ndarray:
    """Contraction sum_{...,i,j} code[..., m, i, j] * window(x)[..., i, j, c, u, v].

    This is the weight gradient of ``analysis_raw(x, w)`` given upstream
    ``code``; by symmetry it is also the weight gradient of
    ``synthesis_raw(z, w)`` when called as ``weight_grad(upstream, z)``.
    Batch axes are summed over.  Returns (M, k, k, C).
    """
    k = ksize
    lo, hi = _pad_lo_hi(k)
    pad = [(0, 0)] * (x_like.ndim - 3) + [(lo, hi), (lo, hi), (0, 0)]
    xp = np.pad(x_like, pad)
    win = sliding_window_view(xp, (k, k), axis=(-3, -2))
    win = win[..., ::stride, ::stride, :, :, :]  # (..., Hg, Wg, C, k, k)
    C = x_like.shape[-1]
    M = code_like.shape[-3]
    winf = np.ascontiguousarray(win).reshape(-1, C * k * k)
    codef = np.moveaxis(code_like, -3, -1).reshape(-1, M)
    g = codef.T @ winf  # (M, C*k*k)
    return g.reshape(M, C, k, k).transpose(0, 2, 3, 1)


def analysis_conv(x: Image, f: FilterBank, stride: int = 1) -> SubbandCode:
    """Strided analysis transform of an image by a filter bank."""
    if f.channels != x.channels:
        raise ValueError(f"bank has {f.channels} channels, image has {x.channels}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    z = analysis_raw(x.data, f.weights, stride)
    return SubbandCode(z, stride, (x.height, x.width))


def synthesis_conv(z: SubbandCode, f: FilterBank, stride: int | None = None) -> Image:
    """Strided synthesis transform; exact adjoint of analysis_conv."""
    s = z.stride if stride is None else stride
    if s != z.stride:
        raise ValueError(f"code was built at stride {z.stride}, asked for {s}")
    if z.num_subbands != f.num_filters:
        raise ValueError(f"code has {z.num_subbands} subbands, bank has {f.num_filters} filters")
    out = synthesis_raw(z.data, f.weights, s, z.image_shape)
    return Image(out)
