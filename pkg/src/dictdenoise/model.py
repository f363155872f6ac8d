"""The unrolled sparse-coding denoiser.

K layers of learned proximal-gradient steps on a subband code, followed
by a learned synthesis dictionary:

    z <- threshold(z - analysis_k(mask * synthesis_k(z) - y), tau_k)
    xhat = dictionary_synthesis(z)

Thresholds are an affine function of the input noise level,
tau_k = base_k + gain_k * sigma/255, which is what makes a single model
track a continuous noise range.  ``threshold_mode`` selects elementwise
soft thresholding or, for color images with a shared grayscale bank,
group shrinkage of the length-3 color coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import FilterBank, SubbandCode, analysis_raw, ceil_div, synthesis_raw
from .images import Image, MaskSignal
from .solvers import spectral_norm

# grid used to normalize banks at initialization; fixed so that two inits
# from the same seed are identical regardless of later input sizes
INIT_NORM_GRID = (128, 128)
INIT_THRESH_BASE = 1e-2


@dataclass(frozen=True)
class ModelConfig:
    unrollings: int          # K
    subbands: int            # M
    kernel_size: int = 7     # spatial filter size (area = kernel_size**2)
    stride: int = 1
    channels: int = 1
    task: str = "denoise"    # 'denoise' | 'jdd'
    threshold_mode: str = "soft"  # 'soft' | 'block'
    adaptive: bool = True    # noise-dependent threshold gain learned (else frozen 0)

    def __post_init__(self):
        if self.unrollings < 1 or self.subbands < 1 or self.stride < 1 or self.kernel_size < 1:
            raise ValueError("unrollings, subbands, kernel_size and stride must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.task not in ("denoise", "jdd"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.threshold_mode not in ("soft", "block"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.task == "jdd" and self.channels != 3:
            raise ValueError("jdd task requires 3-channel images")
        if self.threshold_mode == "block" and self.channels != 3:
            raise ValueError("block thresholding is defined for 3-channel images")

    @property
    def bank_channels(self) -> int:
        """Channel count of the filter banks (block mode shares one
        grayscale bank across R, G, B)."""
        return 1 if self.threshold_mode == "block" else self.channels


@dataclass(frozen=True)
class LayerParams:
    analysis: FilterBank
    synthesis: FilterBank
    thresh_base: np.ndarray  # (M,) >= 0
    thresh_gain: np.ndarray  # (M,) >= 0, multiplies sigma/255

    def __post_init__(self):
        base = np.asarray(self.thresh_base, dtype=np.float64)
        gain = np.asarray(self.thresh_gain, dtype=np.float64)
        m = self.analysis.num_filters
        if self.synthesis.num_filters != m:
            raise ValueError("analysis/synthesis filter counts differ")
        if base.shape != (m,) or gain.shape != (m,):
            raise ValueError("threshold vectors must have one entry per subband")
        if np.any(base < 0) or np.any(gain < 0):
            raise ValueError("thresholds must be >= 0")
        object.__setattr__(self, "thresh_base", base)
        object.__setattr__(self, "thresh_gain", gain)


@dataclass(frozen=True)
class ModelParams:
    config: ModelConfig
    layers: tuple
    dictionary: FilterBank

    def __post_init__(self):
        if len(self.layers) != self.config.unrollings:
            raise ValueError("layer count != configured unrollings")
        object.__setattr__(self, "layers", tuple(self.layers))

    def param_arrays(self) -> list:
        """All learned arrays in declared order:
        [analysis_0, synthesis_0, base_0, gain_0, ..., dictionary]."""
        out = []
        for lay in self.layers:
            out += [lay.analysis.weights, lay.synthesis.weights,
                    lay.thresh_base, lay.thresh_gain]
        out.append(self.dictionary.weights)
        return out

    @staticmethod
    def from_arrays(config: ModelConfig, arrays: list) -> "ModelParams":
        """Rebuild from arrays in the order of :meth:`param_arrays`."""
        k = config.unrollings
        if len(arrays) != 4 * k + 1:
            raise ValueError(f"expected {4 * k + 1} arrays, got {len(arrays)}")
        layers = []
        for i in range(k):
            a, b, t0, t1 = arrays[4 * i:4 * i + 4]
            layers.append(LayerParams(FilterBank(a), FilterBank(b), t0, t1))
        return ModelParams(config, tuple(layers), FilterBank(arrays[-1]))


def effective_thresholds(layer: LayerParams, sigma: float) -> np.ndarray:
    """Per-subband thresholds base + gain * sigma/255 for a 0..255 sigma."""
    if np.any(np.asarray(sigma) < 0):
        raise ValueError("sigma must be >= 0")
    return layer.thresh_base + layer.thresh_gain * (np.asarray(sigma, dtype=np.float64) / 255.0)


def param_count(config: ModelConfig) -> int:
    """Number of learned scalars: K*(2*M*P*C + t*M) + M*P*C, with P the
    filter area, C the bank channel count, and t = 2 when the noise-gain
    vector is learned (1 when frozen).

    The final dictionary term M*P*C is included here; encoder-only
    counts K*(2*M*P*C + 2*M), which exclude it, are sometimes quoted for
    these architectures and run ~1.6% lower on the large models.
    """
    p = config.kernel_size ** 2
    c = config.bank_channels
    m = config.subbands
    t = 2 if config.adaptive else 1
    return config.unrollings * (2 * m * p * c + t * m) + m * p * c


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Draw one standard-normal bank, share it across every synthesis
    operator and the dictionary, give every analysis operator the same
    bank (so each analysis step is exactly the transpose of the shared
    synthesis operator), and scale everything by 1/spectral_norm.

    With thresholds at a small constant the untrained network then
    computes K unit-step ISTA iterations for the shared dictionary.
    """
    rng = np.random.default_rng(seed)
    c = config.bank_channels
    k = config.kernel_size
    w = rng.standard_normal((config.subbands, k, k, c))
    norm = spectral_norm(FilterBank(w), config.stride, INIT_NORM_GRID)
    if norm > 0:
        w = w / norm
    bank = FilterBank(w)
    base = np.full(config.subbands, INIT_THRESH_BASE)
    gain = np.zeros(config.subbands)
    layers = tuple(
        LayerParams(bank, bank, base.copy(), gain.copy())
        for _ in range(config.unrollings)
    )
    return ModelParams(config, layers, bank)


def _project_bank_weights(w: np.ndarray) -> np.ndarray:
    norms = np.sqrt((w ** 2).sum(axis=(1, 2, 3)))
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    return w * scale[:, None, None, None]


def project_param_arrays(config: ModelConfig, arrays: list) -> list:
    """Constraint projection on raw parameter arrays (declared order);
    used mid-optimizer-step where thresholds may be transiently negative."""
    out = list(arrays)
    for i in range(config.unrollings):
        out[4 * i] = _project_bank_weights(out[4 * i])
        out[4 * i + 1] = _project_bank_weights(out[4 * i + 1])
        out[4 * i + 2] = np.maximum(out[4 * i + 2], 0.0)
        out[4 * i + 3] = np.maximum(out[4 * i + 3], 0.0)
    out[-1] = _project_bank_weights(out[-1])
    return out


def project_constraints(theta: ModelParams) -> ModelParams:
    """Project onto the feasible set: every filter inside the l2 unit
    ball (rescaled only if outside), thresholds clamped to >= 0."""
    return ModelParams.from_arrays(
        theta.config, project_param_arrays(theta.config, theta.param_arrays()))


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class ForwardCache:
    """Per-layer values kept by forward_batch for the backward pass."""

    theta: ModelParams
    y: np.ndarray          # staged input, (B, H, W, C) or (B, 3, H, W, 1)
    mask: np.ndarray | None
    sigmas: np.ndarray     # (B,)
    taus: np.ndarray       # (K, B, M)
    pre_acts: list         # K arrays, code-shaped (pre-threshold values)
    residuals: list        # K arrays, image-shaped (input to each analysis)
    final_code: np.ndarray
    out_hw: tuple


def _st(v, tau):
    return np.sign(v) * np.maximum(0.0, np.abs(v) - tau)


def _bt_groups(v, tau):
    """Group shrinkage with the group axis at position 1 (B, 3, M, Hg, Wg)."""
    norms = np.sqrt((v ** 2).sum(axis=1, keepdims=True))
    scale = np.zeros_like(norms)
    np.divide(np.maximum(0.0, norms - tau), norms, out=scale, where=norms > 0)
    return v * scale


def _stage(arr: np.ndarray, block: bool) -> np.ndarray:
    """(B, H, W, C) -> block staging (B, 3, H, W, 1) when needed."""
    if not block:
        return arr
    return np.moveaxis(arr, -1, 1)[..., None]


def _unstage(arr: np.ndarray, block: bool) -> np.ndarray:
    if not block:
        return arr
    return np.moveaxis(arr[..., 0], 1, -1)


def forward_batch(theta: ModelParams, y: np.ndarray, sigmas, mask: np.ndarray | None = None,
                  keep_cache: bool = False):
    """Run the network on a batch.

    y: (B, H, W, C); sigmas: scalar or (B,) on the 0..255 scale; mask:
    (H, W, C) or (B, H, W, C) for the jdd task.  Returns
    (xhat (B, H, W, C), final code, cache or None).
    """
    cfg = theta.config
    if y.ndim != 4 or y.shape[-1] != cfg.channels:
        raise ValueError(f"batch must be (B, H, W, {cfg.channels}), got {y.shape}")
    if cfg.task == "jdd" and mask is None:
        raise ValueError("jdd model needs a mask")
    if mask is not None and mask.shape[-3:] != y.shape[-3:]:
        raise ValueError(f"mask shape {mask.shape} incompatible with batch {y.shape}")
    b, h, w = y.shape[0], y.shape[1], y.shape[2]
    block = cfg.threshold_mode == "block"
    s = cfg.stride
    hg, wg = ceil_div(h, s), ceil_div(w, s)
    sig = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (b,)).copy()
    if np.any(sig < 0):
        raise ValueError("sigma must be >= 0")

    ys = _stage(y, block)
    ms = _stage(np.broadcast_to(mask, y.shape), block) if mask is not None else None

    k_layers = cfg.unrollings
    taus = np.empty((k_layers, b, cfg.subbands))
    for k in range(k_layers):
        lay = theta.layers[k]
        taus[k] = lay.thresh_base[None, :] + lay.thresh_gain[None, :] * (sig[:, None] / 255.0)

    # broadcast shape for tau against code arrays
    if block:
        tshape = (b, 1, cfg.subbands, 1, 1)
        zshape = (b, 3, cfg.subbands, hg, wg)
    else:
        tshape = (b, cfg.subbands, 1, 1)
        zshape = (b, cfg.subbands, hg, wg)

    z = np.zeros(zshape)
    pre_acts = [] if keep_cache else None
    residuals = [] if keep_cache else None
    for k in range(k_layers):
        lay = theta.layers[k]
        if k == 0:
            r = -ys  # z = 0, so the masked synthesis term vanishes
        else:
            bz = synthesis_raw(z, lay.synthesis.weights, s, (h, w))
            if ms is not None:
                bz *= ms
            r = bz - ys
        u = z - analysis_raw(r, lay.analysis.weights, s)
        tau = taus[k].reshape(tshape)
        z = _bt_groups(u, tau) if block else _st(u, tau)
        if keep_cache:
            pre_acts.append(u)
            residuals.append(r)

    xhat = _unstage(synthesis_raw(z, theta.dictionary.weights, s, (h, w)), block)
    cache = None
    if keep_cache:
        cache = ForwardCache(theta, ys, ms, sig, taus, pre_acts, residuals, z, (h, w))
    return xhat, z, cache


def _code_result(theta: ModelParams, z: np.ndarray, hw: tuple) -> SubbandCode:
    cfg = theta.config
    if cfg.threshold_mode == "block":
        # (1, 3, M, Hg, Wg) -> (M, Hg, Wg, 3)
        arr = np.moveaxis(z[0], 0, -1)
    else:
        arr = z[0]
    return SubbandCode(arr, cfg.stride, hw)


def forward(theta: ModelParams, y: Image, sigma: float):
    """Denoise a single image; returns (xhat, final subband code)."""
    cfg = theta.config
    if y.channels != cfg.channels:
        raise ValueError(f"model expects {cfg.channels}-channel images, got {y.channels}")
    if cfg.task != "denoise":
        raise ValueError("model was configured for jdd; use forward_jdd")
    xhat, z, _ = forward_batch(theta, y.data[None], float(sigma))
    return Image(xhat[0], mean_offset=y.mean_offset), _code_result(theta, z, (y.height, y.width))


def forward_jdd(theta: ModelParams, y: Image, m: MaskSignal, sigma: float):
    """Reconstruct a full-color image from a mosaiced noisy observation
    y = mask * (x + noise); the mask enters every layer's residual."""
    cfg = theta.config
    if cfg.task != "jdd":
        raise ValueError("model was not configured for jdd")
    if y.channels != 3:
        raise ValueError("jdd requires 3-channel input")
    if m.data.shape != y.data.shape:
        raise ValueError("mask/image shape mismatch")
    xhat, z, _ = forward_batch(theta, y.data[None], float(sigma), mask=m.data)
    return Image(xhat[0], mean_offset=y.mean_offset), _code_result(theta, z, (y.height, y.width))
