"""Blind noise-level estimation from a single image.

Two estimators covering the speed/accuracy trade-off:

* ``estimate_mad`` — median absolute deviation of the one-level Haar
  diagonal (HH) coefficients divided by 0.6745, the classical O(N)
  wavelet estimator.  Fast, biased high on textured content.
* ``estimate_pca`` — smallest eigenvalue of the covariance of a
  low-variance subset of overlapping patches, with a Marchenko-Pastur
  edge correction for the finite patch count.  Slower, close to the
  truth on natural content.

Estimates are returned on the 0..255 intensity scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .images import Image

# |HH coefficient| median of N(0, s) is 0.6745 * s
MAD_TO_SIGMA = 0.6745


@dataclass(frozen=True)
class NoiseEstimate:
    sigma_hat: float  # 0..255 scale
    method: str       # 'mad' | 'pca' | 'ground_truth'
    elapsed: float    # seconds

    def __post_init__(self):
        if self.sigma_hat < 0:
            raise ValueError("sigma_hat must be >= 0")


def estimate_mad(y: Image) -> NoiseEstimate:
    """Haar-HH median absolute deviation estimate; color channels are
    estimated separately and averaged."""
    if y.height < 2 or y.width < 2:
        raise ValueError("image too small for a wavelet level")
    t0 = time.perf_counter()
    vals = []
    for c in range(y.channels):
        x = y.data[:, :, c]
        h2, w2 = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
        x = x[:h2, :w2]
        hh = (x[0::2, 0::2] - x[0::2, 1::2] - x[1::2, 0::2] + x[1::2, 1::2]) / 2.0
        vals.append(np.median(np.abs(hh)) / MAD_TO_SIGMA)
    sigma = float(np.mean(vals)) * 255.0
    return NoiseEstimate(sigma, "mad", time.perf_counter() - t0)


def estimate_pca(y: Image, patch: int = 7, max_rounds: int = 8,
                 stable_rel: float = 0.01) -> NoiseEstimate:
    """Patch-covariance eigenvalue estimate.

    Overlapping ``patch`` x ``patch`` vectors are collected per channel;
    starting from all patches, high-variance (structured) patches are
    trimmed against a chi-square bound on the current estimate until the
    smallest covariance eigenvalue moves by less than ``stable_rel``.
    The smallest-eigenvalue estimate is corrected for the finite sample
    count by the Marchenko-Pastur lower edge (1 - sqrt(d/n))^2.
    """
    d = patch * patch
    t0 = time.perf_counter()
    ests = []
    for c in range(y.channels):
        x = y.data[:, :, c]
        if x.shape[0] < patch or x.shape[1] < patch:
            raise ValueError(f"image too small for {patch}x{patch} patches")
        pv = sliding_window_view(x, (patch, patch)).reshape(-1, d)
        if pv.shape[0] < 10 * d:
            raise ValueError("too few patches for a stable covariance")
        variances = pv.var(axis=1)
        # chi-square 97.5% point of the per-patch variance, normal noise
        chi_hi = 1.0 + 2.6 * np.sqrt(2.0 / (d - 1))
        var_est = _smallest_eig(pv)
        for _ in range(max_rounds):
            keep = variances <= chi_hi * max(var_est, 1e-12)
            if keep.sum() < 10 * d:
                keep = variances <= np.quantile(variances, max(10 * d / pv.shape[0], 0.05))
            new_est = _smallest_eig(pv[keep])
            if abs(new_est - var_est) <= stable_rel * max(var_est, 1e-12):
                var_est = new_est
                break
            var_est = new_est
        ests.append(np.sqrt(max(var_est, 0.0)))
    sigma = float(np.mean(ests)) * 255.0
    return NoiseEstimate(sigma, "pca", time.perf_counter() - t0)


def _smallest_eig(patches: np.ndarray) -> float:
    n, d = patches.shape
    centered = patches - patches.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    lam = float(np.linalg.eigvalsh(cov)[0])
    edge = (1.0 - np.sqrt(d / n)) ** 2
    return lam / edge if edge > 0 else lam
