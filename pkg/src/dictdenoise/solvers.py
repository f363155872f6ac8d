"""Reference (non-learned) convolutional sparse coding.

Soft/block thresholding, the basis-pursuit denoising objective, plain
ISTA, the universal threshold, and power-iteration spectral norms.  This
module is the correctness oracle for the unrolled network: with tied
weights the network must reproduce these iterates exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import FilterBank, SubbandCode, analysis_raw, ceil_div, synthesis_raw
from .images import Image


def soft_threshold(v: np.ndarray, tau) -> np.ndarray:
    """ST(v, tau) = sign(v) * max(0, |v| - tau), tau broadcast per subband.

    ``tau`` is a scalar or an (M,) vector matched against axis -3 of
    ``v`` (the subband axis of code arrays).
    """
    tau = _expand_tau(np.asarray(v), tau)
    return np.sign(v) * np.maximum(0.0, np.abs(v) - tau)


def block_threshold(v: np.ndarray, tau) -> np.ndarray:
    """Group shrinkage of length-3 color coefficients.

    ``v`` has a trailing group axis of size 3; each group is scaled by
    max(0, ||g|| - tau)/||g||, with the zero group mapped to zero.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"block threshold expects groups of 3, got {v.shape[-1]}")
    tau = _expand_tau(v[..., 0], tau)
    norms = np.sqrt((v ** 2).sum(axis=-1))
    scale = np.zeros_like(norms)
    np.divide(np.maximum(0.0, norms - tau), norms, out=scale, where=norms > 0)
    return v * scale[..., None]


def _expand_tau(v_like: np.ndarray, tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise ValueError("thresholds must be >= 0")
    if tau.ndim == 1:
        # align with the subband axis (-3) of (..., M, Hg, Wg)
        tau = tau.reshape((tau.shape[0],) + (1,) * 2)
    return tau


@dataclass(frozen=True)
class BpdnProblem:
    """Basis-pursuit denoising instance: min_z 1/2||y - Dz||^2 + lam * pen(z).

    ``group_mode`` selects the penalty: 'elementwise' for the l1 norm,
    'color-groups' for the sum of l2 norms of the length-3 color
    coefficients (grayscale bank applied per RGB channel).
    """

    y: Image
    dict: FilterBank
    stride: int = 1
    lam: float = 0.1
    eta: float = 1.0
    group_mode: str = "elementwise"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.group_mode not in ("elementwise", "color-groups"):
            raise ValueError(f"unknown group_mode {self.group_mode!r}")
        if self.group_mode == "color-groups":
            if self.y.channels != 3 or self.dict.channels != 1:
                raise ValueError("color-groups mode needs a 3-channel image and a 1-channel bank")
        elif self.dict.channels != self.y.channels:
            raise ValueError("bank/image channel mismatch")

    def code_shape(self) -> tuple:
        hg = ceil_div(self.y.height, self.stride)
        wg = ceil_div(self.y.width, self.stride)
        m = self.dict.num_filters
        if self.group_mode == "color-groups":
            return (m, hg, wg, 3)
        return (m, hg, wg)

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        """Dz as an (H, W, C) array."""
        hw = (self.y.height, self.y.width)
        if self.group_mode == "color-groups":
            # per-channel synthesis with the shared grayscale bank
            zc = np.moveaxis(z, -1, 0)[..., :, :, :]  # (3, M, Hg, Wg)
            out = synthesis_raw(zc, self.dict.weights, self.stride, hw)  # (3, H, W, 1)
            return np.moveaxis(out[..., 0], 0, -1)
        return synthesis_raw(z, self.dict.weights, self.stride, hw)

    def analysis(self, r: np.ndarray) -> np.ndarray:
        """D^T r for an (H, W, C) residual, matching the code layout."""
        if self.group_mode == "color-groups":
            rc = np.moveaxis(r, -1, 0)[..., None]  # (3, H, W, 1)
            zc = analysis_raw(rc, self.dict.weights, self.stride)  # (3, M, Hg, Wg)
            return np.moveaxis(zc, 0, -1)
        return analysis_raw(r, self.dict.weights, self.stride)


def bpdn_objective(p: BpdnProblem, z: SubbandCode) -> float:
    """1/2 ||y - Dz||_2^2 + lam * penalty(z)."""
    arr = z.data
    if arr.shape != p.code_shape():
        raise ValueError(f"code shape {arr.shape} != expected {p.code_shape()}")
    resid = p.y.data - p.reconstruct(arr)
    fidelity = 0.5 * float((resid ** 2).sum())
    if p.group_mode == "color-groups":
        pen = float(np.sqrt((arr ** 2).sum(axis=-1)).sum())
    else:
        pen = float(np.abs(arr).sum())
    return fidelity + p.lam * pen


def ista(p: BpdnProblem, iterations: int):
    """Iterative shrinkage-thresholding from z = 0.

    Returns the final code and the objective value at every iterate
    (including the all-zero start), length iterations + 1.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    z = np.zeros(p.code_shape())
    hw = (p.y.height, p.y.width)
    trace = [bpdn_objective(p, SubbandCode(z, p.stride, hw))]
    thr = p.eta * p.lam
    for _ in range(iterations):
        r = p.reconstruct(z) - p.y.data
        v = z - p.eta * p.analysis(r)
        if p.group_mode == "color-groups":
            z = block_threshold(v, thr)
        else:
            z = soft_threshold(v, thr)
        trace.append(bpdn_objective(p, SubbandCode(z, p.stride, hw)))
    return SubbandCode(z, p.stride, hw), np.array(trace)


def universal_threshold(sigma: float, n: int) -> float:
    """sigma * sqrt(2 ln N), in the units of sigma."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if n < 1:
        raise ValueError("N must be >= 1")
    return float(sigma * np.sqrt(2.0 * np.log(n)))


def spectral_norm(f: FilterBank, stride: int = 1, shape: tuple = (128, 128),
                  tol: float = 1e-6, max_iter: int = 100) -> float:
    """Largest singular value of x -> analysis_conv(x, f, stride).

    Power iteration on A^T A from a fixed all-ones start vector
    (deterministic), run to relative tolerance ``tol`` or ``max_iter``
    iterations.  A zero bank reports norm 0.
    """
    h, w = shape
    if h < f.spatial_size or w < f.spatial_size:
        raise ValueError("grid must be at least the filter size")
    c = f.channels
    x = np.ones((h, w, c))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        ax = analysis_raw(x, f.weights, stride)
        lam_new = float((ax ** 2).sum())  # Rayleigh quotient <x, A^T A x>, ||x|| = 1
        x2 = synthesis_raw(ax, f.weights, stride, (h, w))
        nrm = np.linalg.norm(x2)
        if nrm == 0.0:
            return 0.0
        x = x2 / nrm
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(lam))
