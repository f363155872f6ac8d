"""Training loop: batch sampling with augmentation, ADAM with constraint
projection, learning-rate schedule, and checkpoint backtracking.

Protocol per run: random square crops with random flips and right-angle
rotations, per-image mean subtraction, noise level drawn uniformly from
the training interval, ground-truth sigma handed to the model.  For the
mosaicing task the Bayer mask is applied after noising.  Validation PSNR
is computed at the midpoint of the training range every ``val_interval``
epochs; if it drops more than ``backtrack_threshold_db`` below the best
seen value, the model is restored from the previous snapshot and the
learning rate is scaled by ``backtrack_factor``.

The whole loop is deterministic for a fixed config seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .checkpoint import AdamState, CheckpointRecord
from .config import TrainConfig
from .image_io import list_images, load_image
from .images import Image, make_bayer_mask, psnr
from .losses import grad_mcsure_batch, grad_mse_batch
from .model import (
    ModelConfig,
    ModelParams,
    forward_batch,
    init_params,
    project_param_arrays,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_HEADER = ["epoch", "loss", "val_psnr", "lr", "backtracks"]


@dataclass
class Dataset:
    """A directory of images loaded into memory."""

    source: str
    role: str = "train"  # 'train' | 'validation' | 'test'
    augment: bool = True
    images: list = None
    paths: list = None

    def __post_init__(self):
        if self.role not in ("train", "validation", "test"):
            raise ValueError(f"unknown dataset role {self.role!r}")
        if self.images is None:
            self.paths = list_images(self.source)
            self.images = [load_image(p) for p in self.paths]
        if not self.images:
            raise ValueError(f"no images found in {self.source!r}")
        chans = {im.channels for im in self.images}
        if len(chans) != 1:
            raise ValueError("dataset mixes grayscale and color images")

    def __len__(self):
        return len(self.images)

    @property
    def channels(self) -> int:
        return self.images[0].channels

    def check_croppable(self, crop: int) -> None:
        for im, p in zip(self.images, self.paths or [""] * len(self.images)):
            if im.height < crop or im.width < crop:
                raise ValueError(f"image {p or '<memory>'} smaller than crop size {crop}")

    @staticmethod
    def from_images(images: list, role: str = "train", augment: bool = True) -> "Dataset":
        return Dataset(source="<memory>", role=role, augment=augment,
                       images=list(images), paths=[])


@dataclass
class TrainBatch:
    y: np.ndarray        # (B, c, c, C) network input (mean-subtracted, noisy, masked for jdd)
    x: np.ndarray        # (B, c, c, C) mean-subtracted clean target
    sigmas: np.ndarray   # (B,) ground-truth noise levels, 0..255 scale
    mask: np.ndarray | None  # (c, c, 3) RGGB mask for jdd, else None


def sample_batch(ds: Dataset, cfg: TrainConfig, seed: int) -> TrainBatch:
    """Draw one training batch; identical bytes for identical seeds."""
    if ds.role != "train":
        raise ValueError("sample_batch needs a dataset with role 'train'")
    crop = cfg.crop_size
    ds.check_croppable(crop)
    rng = np.random.default_rng(seed)
    if cfg.task == "jdd" and ds.channels != 3:
        raise ValueError("jdd training needs color images")

    mask = make_bayer_mask(crop, crop).data if cfg.task == "jdd" else None
    ys, xs, sigmas = [], [], []
    for _ in range(cfg.batch_size):
        im = ds.images[rng.integers(len(ds.images))].data
        top = rng.integers(im.shape[0] - crop + 1)
        left = rng.integers(im.shape[1] - crop + 1)
        patch = im[top:top + crop, left:left + crop]
        if ds.augment:
            if rng.random() < 0.5:
                patch = patch[:, ::-1]
            if rng.random() < 0.5:
                patch = patch[::-1, :]
            patch = np.rot90(patch, k=int(rng.integers(4)))
        sigma = float(rng.uniform(cfg.sigma_lo, cfg.sigma_hi))
        noise = rng.standard_normal(patch.shape) * (sigma / 255.0)
        if cfg.task == "jdd":
            noisy = patch + noise
            counts = mask.sum(axis=(0, 1))
            mean = (noisy * mask).sum(axis=(0, 1)) / counts
            ys.append((noisy - mean) * mask)
            xs.append(patch - mean)
        else:
            mean = patch.mean(axis=(0, 1))
            xs.append(patch - mean)
            ys.append(patch - mean + noise)
        sigmas.append(sigma)
    return TrainBatch(np.stack(ys), np.stack(xs), np.array(sigmas), mask)


def adam_step(theta: ModelParams, grads, state: AdamState, lr: float):
    """One ADAM update (beta1 0.9, beta2 0.999, eps 1e-8) followed by
    projection onto the constraint set.  Raises on non-finite gradients."""
    garr = grads.as_arrays()
    for g in garr:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; step aborted")
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for p, g, m, v in zip(theta.param_arrays(), garr, state.m, state.v):
        m2 = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v2 = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        step = lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + ADAM_EPS)
        new_params.append(p - step)
        new_m.append(m2)
        new_v.append(v2)
    projected = project_param_arrays(theta.config, new_params)
    theta2 = ModelParams.from_arrays(theta.config, projected)
    return theta2, AdamState(new_m, new_v, t)


def lr_schedule(epoch: int, cfg: TrainConfig, backtracks: int = 0) -> float:
    """lr0 * lr_decay^(epoch // lr_decay_every), scaled by the
    accumulated backtrack factor."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_every) \
        * cfg.backtrack_factor ** backtracks


def maybe_backtrack(history: list, ckpt_store: list, cfg: TrainConfig) -> str:
    """Decide between saving a snapshot and restoring the previous one.

    ``history`` holds validation PSNR values, newest last.  Returns
    'backtrack' when the newest value fell more than
    ``backtrack_threshold_db`` below the best earlier value and a
    snapshot exists to restore; 'save' otherwise.
    """
    if not history:
        raise ValueError("empty validation history")
    if not ckpt_store or len(history) == 1:
        return "save"
    best = max(history[:-1])
    if history[-1] < best - cfg.backtrack_threshold_db:
        return "backtrack"
    return "save"


def validation_psnr(theta: ModelParams, val_ds: Dataset, cfg: TrainConfig) -> float:
    """Mean PSNR over the validation images at the midpoint of the
    training noise range, with fixed per-image noise seeds."""
    sigma = 0.5 * (cfg.sigma_lo + cfg.sigma_hi)
    vals = []
    for idx, im in enumerate(val_ds.images):
        vals.append(evaluate_image(theta, im, sigma, noise_seed=cfg.seed * 7919 + idx)[0])
    return float(np.mean(vals))


def evaluate_image(theta: ModelParams, clean: Image, sigma: float, noise_seed: int,
                   estimator: str = "gt"):
    """Noise (and mosaic, for jdd models) a clean image, run the model,
    and return (psnr_denoised, psnr_input, denoised Image, sigma_used).

    ``estimator`` selects the noise level handed to the model: the
    ground-truth value, or a blind estimate from the noisy input.  Means
    are taken from the noisy observation, exactly as at inference time.
    """
    rng = np.random.default_rng(noise_seed)
    noise = rng.standard_normal(clean.data.shape) * (sigma / 255.0)
    noisy = Image(clean.data + noise)
    if theta.config.task == "jdd":
        mask = make_bayer_mask(clean.height, clean.width).data
        sigma_used = _sigma_from(Image(noisy.data * mask), sigma, estimator)
        mean = (noisy.data * mask).sum(axis=(0, 1)) / mask.sum(axis=(0, 1))
        y = (noisy.data - mean) * mask
        xhat, _, _ = forward_batch(theta, y[None], sigma_used, mask=mask)
        rec = Image(np.clip(xhat[0] + mean, 0.0, 1.0))
        inp = Image(np.clip(noisy.data * mask, 0.0, 1.0))
    else:
        sigma_used = _sigma_from(noisy, sigma, estimator)
        mean = noisy.data.mean(axis=(0, 1))
        y = noisy.data - mean
        xhat, _, _ = forward_batch(theta, y[None], sigma_used)
        rec = Image(np.clip(xhat[0] + mean, 0.0, 1.0))
        inp = Image(np.clip(noisy.data, 0.0, 1.0))
    return psnr(clean, rec), psnr(clean, inp), rec, sigma_used


def _sigma_from(noisy: Image, sigma_true: float, estimator: str) -> float:
    if estimator == "gt":
        return float(sigma_true)
    from .noise import estimate_mad, estimate_pca

    if estimator == "mad":
        return estimate_mad(noisy).sigma_hat
    if estimator == "pca":
        return estimate_pca(noisy).sigma_hat
    raise ValueError(f"unknown estimator {estimator!r}")


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, model_cfg: ModelConfig,
          log_path: str | None = None, progress=None) -> CheckpointRecord:
    """Full training run; returns the final checkpoint record.

    Writes a CSV log (epoch, loss, val_psnr, lr, backtracks) when
    ``log_path`` is given; ``progress`` is an optional callable fed one
    dict per epoch.
    """
    if cfg.task != model_cfg.task:
        raise ValueError("training and model task differ")
    if train_ds.channels != model_cfg.channels:
        raise ValueError("dataset channels do not match the model")
    train_ds.check_croppable(cfg.crop_size)

    theta = init_params(model_cfg, cfg.seed)
    state = AdamState.zeros_like(theta)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = max(1, -(-len(train_ds) // cfg.batch_size))
    store, history = [], []
    backtracks = 0
    skipped = 0
    rows = []
    epoch = 0
    lr = lr_schedule(0, cfg, 0)

    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(epoch, cfg, backtracks)
        losses = []
        for _ in range(steps_per_epoch):
            batch_seed = int(rng.integers(2 ** 62))
            probe_seed = int(rng.integers(2 ** 62))
            batch = sample_batch(train_ds, cfg, batch_seed)
            if cfg.loss_kind == "mcsure":
                report, grads = grad_mcsure_batch(theta, batch.y, batch.sigmas,
                                                  probe_seed, mask=batch.mask)
            else:
                report, grads = grad_mse_batch(theta, batch.y, batch.x,
                                               batch.sigmas, mask=batch.mask)
            try:
                theta, state = adam_step(theta, grads, state, lr)
            except FloatingPointError:
                skipped += 1
                continue
            losses.append(report.value)

        val = ""
        if (epoch + 1) % cfg.val_interval == 0 or epoch == cfg.max_epochs - 1:
            cur = validation_psnr(theta, val_ds, cfg)
            history.append(cur)
            action = maybe_backtrack(history, store, cfg)
            if action == "backtrack":
                theta, state = store[-1]
                backtracks += 1
            else:
                store.append((theta, state))
            val = f"{cur:.4f}"

        row = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"),
               "val_psnr": val, "lr": lr, "backtracks": backtracks}
        rows.append(row)
        if progress is not None:
            progress(row)

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_HEADER)
            writer.writeheader()
            writer.writerows(rows)

    val_history = [(r["epoch"], float(r["val_psnr"])) for r in rows if r["val_psnr"] != ""]
    return CheckpointRecord(theta, state, epoch=cfg.max_epochs, lr=lr,
                            backtracks=backtracks, val_history=val_history)


def split_validation(ds: Dataset, count: int) -> tuple:
    """Hold out the last ``count`` images of a dataset for validation."""
    if count < 1 or count >= len(ds):
        raise ValueError("validation split must leave at least one training image")
    train_part = Dataset.from_images(ds.images[:-count], role="train", augment=ds.augment)
    val_part = Dataset.from_images(ds.images[-count:], role="validation", augment=False)
    return train_part, val_part
