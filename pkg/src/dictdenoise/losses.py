"""Training losses and exact reverse-mode gradients.

The backward pass is derived by hand through the unrolled network: the
soft-threshold Jacobian is 1{|v| > tau} w.r.t. its input (subgradient 0
at the kink) and -sign(v) * 1{|v| > tau} w.r.t. the threshold; group
shrinkage scales active groups by (1 - tau/||v||) I + (tau/||v||) vv^T/||v||^2.
Every convolution's input- and weight-gradients reuse the kernels from
``conv`` (the adjoint pair plus one shared weight-gradient contraction).

The risk-estimator loss needs no clean image: it combines the self
fidelity ||y - f(y)||^2, the bias correction -N sigma^2, and a
Monte-Carlo divergence probe 2 sigma^2 b^T (f(y + h b) - f(y)) / h,
which costs one extra forward pass.  Its gradient flows through both
forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import analysis_raw, synthesis_raw, weight_grad
from .images import Image, MaskSignal
from .model import ForwardCache, ModelParams, forward_batch, _bt_groups, _st

DIVERGENCE_PROBE_STEP = 1e-3  # in normalized [0, 1] intensity units


@dataclass
class GradientSet:
    """Gradients mirroring ModelParams: per-layer analysis/synthesis
    banks and threshold vectors, plus the dictionary."""

    d_analysis: list
    d_synthesis: list
    d_base: list
    d_gain: list
    d_dictionary: np.ndarray

    @staticmethod
    def zeros_like(theta: ModelParams) -> "GradientSet":
        return GradientSet(
            [np.zeros_like(l.analysis.weights) for l in theta.layers],
            [np.zeros_like(l.synthesis.weights) for l in theta.layers],
            [np.zeros_like(l.thresh_base) for l in theta.layers],
            [np.zeros_like(l.thresh_gain) for l in theta.layers],
            np.zeros_like(theta.dictionary.weights),
        )

    def as_arrays(self) -> list:
        """Same declared order as ModelParams.param_arrays()."""
        out = []
        for a, s, b, g in zip(self.d_analysis, self.d_synthesis, self.d_base, self.d_gain):
            out += [a, s, b, g]
        out.append(self.d_dictionary)
        return out

    def add_(self, other: "GradientSet") -> "GradientSet":
        for mine, theirs in zip(self.as_arrays(), other.as_arrays()):
            mine += theirs
        return self

    def scale_(self, factor: float) -> "GradientSet":
        for arr in self.as_arrays():
            arr *= factor
        return self

    def max_abs(self) -> float:
        return max(float(np.abs(a).max()) for a in self.as_arrays())


@dataclass(frozen=True)
class LossReport:
    value: float
    kind: str  # 'mse' | 'mcsure'
    components: tuple = ()  # mcsure: (fidelity, -N sigma^2, 2 sigma^2 div)


def backward(cache: ForwardCache, upstream: np.ndarray) -> GradientSet:
    """Gradients of a scalar loss w.r.t. every parameter, given the
    gradient w.r.t. the network output (B, H, W, C) and the cached
    forward pass."""
    theta = cache.theta
    cfg = theta.config
    if cache.pre_acts is None or len(cache.pre_acts) != cfg.unrollings:
        raise ValueError("forward cache is missing per-layer pre-activations")
    block = cfg.threshold_mode == "block"
    s = cfg.stride
    hw = cache.out_hw
    k_sz = cfg.kernel_size
    sig_norm = cache.sigmas / 255.0

    grads = GradientSet.zeros_like(theta)
    g_out = np.moveaxis(upstream, -1, 1)[..., None] if block else upstream

    # xhat = synthesis(z_K, dictionary)
    grads.d_dictionary += weight_grad(g_out, cache.final_code, k_sz, s)
    dz = analysis_raw(g_out, theta.dictionary.weights, s)

    for k in reversed(range(cfg.unrollings)):
        lay = theta.layers[k]
        u = cache.pre_acts[k]
        tau = cache.taus[k][:, :, None, None] if not block else cache.taus[k][:, None, :, None, None]

        # threshold backward
        if block:
            norms = np.sqrt((u ** 2).sum(axis=1, keepdims=True))
            active = norms > tau
            inner = (u * dz).sum(axis=1, keepdims=True)
            safe = np.where(norms > 0, norms, 1.0)
            du = np.where(active, dz * (1.0 - tau / safe) + (tau / safe ** 3) * inner * u, 0.0)
            dtau_bm = -np.where(active, inner / safe, 0.0).sum(axis=(1, 3, 4))  # (B, M)
        else:
            active = np.abs(u) > tau
            du = np.where(active, dz, 0.0)
            dtau_bm = -np.where(active, np.sign(u) * dz, 0.0).sum(axis=(2, 3))  # (B, M)

        grads.d_base[k] += dtau_bm.sum(axis=0)
        grads.d_gain[k] += (dtau_bm * sig_norm[:, None]).sum(axis=0)

        # u = z - analysis(r); r = mask * synthesis(z) - y
        dr = -synthesis_raw(du, lay.analysis.weights, s, hw)
        grads.d_analysis[k] += -weight_grad(cache.residuals[k], du, k_sz, s)

        dz = du
        if k > 0:
            d_bz = dr * cache.mask if cache.mask is not None else dr
            z_prev = _recompute_code(cache, k - 1)
            grads.d_synthesis[k] += weight_grad(d_bz, z_prev, k_sz, s)
            dz = dz + analysis_raw(d_bz, lay.synthesis.weights, s)
        # at k == 0 the incoming code is zero: d_synthesis[0] = 0 and the
        # path through it contributes nothing to earlier gradients

    if not cfg.adaptive:
        for g in grads.d_gain:
            g[:] = 0.0
    return grads


def _recompute_code(cache: ForwardCache, k: int) -> np.ndarray:
    """Code entering layer k+1, i.e. threshold(pre_acts[k])."""
    cfg = cache.theta.config
    u = cache.pre_acts[k]
    if cfg.threshold_mode == "block":
        tau = cache.taus[k][:, None, :, None, None]
        return _bt_groups(u, tau)
    return _st(u, cache.taus[k][:, :, None, None])


# ---------------------------------------------------------------------------
# losses (single image API; batched variants used by training)


def loss_mse(theta: ModelParams, y: Image, x_true: Image, sigma: float,
             mask: MaskSignal | None = None) -> LossReport:
    """Squared error ||x_true - f(y)||^2 summed over pixels and channels."""
    if x_true.data.shape != y.data.shape:
        raise ValueError("clean/noisy shape mismatch")
    xhat, _, _ = forward_batch(theta, y.data[None], float(sigma),
                               mask=None if mask is None else mask.data)
    value = float(((x_true.data - xhat[0]) ** 2).sum())
    return LossReport(value, "mse")


def grad_mse_batch(theta: ModelParams, y: np.ndarray, x_true: np.ndarray, sigmas,
                   mask: np.ndarray | None = None):
    """Mean over the batch of per-image summed squared error, with its
    gradient.  Returns (LossReport, GradientSet)."""
    b = y.shape[0]
    xhat, _, cache = forward_batch(theta, y, sigmas, mask=mask, keep_cache=True)
    resid = xhat - x_true
    value = float((resid ** 2).sum()) / b
    grads = backward(cache, (2.0 / b) * resid)
    return LossReport(value, "mse"), grads


def mc_divergence(theta, y: Image, sigma: float, h: float = DIVERGENCE_PROBE_STEP,
                  seed: int = 0, mask: MaskSignal | None = None) -> float:
    """Monte-Carlo divergence estimate b^T (f(y + h b) - f(y)) / h with a
    single standard-normal probe b drawn from ``seed``.

    ``theta`` may be a ModelParams or any callable mapping an (H, W, C)
    array to an (H, W, C) array (used to validate the estimator against
    maps with known divergence).
    """
    if h <= 0:
        raise ValueError("probe step must be > 0")
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(y.data.shape)
    f = _as_map(theta, sigma, mask)
    f0 = f(y.data)
    f1 = f(y.data + h * probe)
    return float((probe * (f1 - f0)).sum() / h)


def _as_map(theta, sigma, mask):
    if callable(theta):
        return theta
    marr = None if mask is None else mask.data

    def run(arr):
        out, _, _ = forward_batch(theta, arr[None], float(sigma), mask=marr)
        return out[0]

    return run


def loss_mcsure(theta: ModelParams, y: Image, sigma: float, seed: int = 0,
                h: float = DIVERGENCE_PROBE_STEP,
                mask: MaskSignal | None = None) -> LossReport:
    """Unbiased risk estimate of the denoiser on y; never sees the clean
    image.  value = ||y - f(y)||^2 - N sigma^2 + 2 sigma^2 * divergence,
    with sigma normalized to the [0, 1] intensity scale and N the total
    sample count (pixels x channels)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    sn = sigma / 255.0
    n = y.data.size
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(y.data.shape)
    f = _as_map(theta, sigma, mask)
    f0 = f(y.data)
    f1 = f(y.data + h * probe)
    fidelity = float(((y.data - f0) ** 2).sum())
    div = float((probe * (f1 - f0)).sum() / h)
    components = (fidelity, -n * sn ** 2, 2.0 * sn ** 2 * div)
    return LossReport(sum(components), "mcsure", components)


def grad_mcsure_batch(theta: ModelParams, y: np.ndarray, sigmas, seed: int,
                      h: float = DIVERGENCE_PROBE_STEP,
                      mask: np.ndarray | None = None):
    """Batched risk-estimator loss (mean of per-image values) and its
    gradient through both forward passes."""
    b = y.shape[0]
    sig = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (b,))
    sn = sig / 255.0
    n = y.shape[1] * y.shape[2] * y.shape[3]
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(y.shape)

    f0, _, cache0 = forward_batch(theta, y, sig, mask=mask, keep_cache=True)
    f1, _, cache1 = forward_batch(theta, y + h * probe, sig, mask=mask, keep_cache=True)

    per_fid = ((y - f0) ** 2).sum(axis=(1, 2, 3))
    per_div = (probe * (f1 - f0)).sum(axis=(1, 2, 3)) / h
    per_loss = per_fid - n * sn ** 2 + 2.0 * sn ** 2 * per_div
    value = float(per_loss.mean())

    coeff = (2.0 / b) * (sn ** 2)[:, None, None, None] / h * probe
    up0 = (2.0 / b) * (f0 - y) - coeff
    up1 = coeff
    grads = backward(cache0, up0)
    grads.add_(backward(cache1, up1))
    fid = float(per_fid.mean())
    div_term = float((2.0 * sn ** 2 * per_div).mean())
    return LossReport(value, "mcsure", (fid, float((-n * sn ** 2).mean()), div_term)), grads
