"""Evaluation reports: CSV tables plus rendered figures.

The CSV is the canonical output; alongside it the report path renders
matplotlib figures (PSNR-vs-noise curves, dictionary filter mosaics) to
image files for quick inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

EVAL_HEADER = ["image", "sigma", "psnr_noisy", "psnr_denoised", "method", "sigma_used"]
AGGREGATE_ID = "mean"


@dataclass
class EvalReport:
    """Per-image, per-noise-level PSNR rows with per-sigma aggregates."""

    rows: list = field(default_factory=list)
    # row: dict with image, sigma, psnr_noisy, psnr_denoised, method, sigma_used

    def add(self, image: str, sigma: float, psnr_noisy: float, psnr_denoised: float,
            method: str, sigma_used: float) -> None:
        self.rows.append({
            "image": image, "sigma": float(sigma), "psnr_noisy": float(psnr_noisy),
            "psnr_denoised": float(psnr_denoised), "method": method,
            "sigma_used": float(sigma_used),
        })

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r["image"], r["sigma"]))

    def aggregates(self) -> list:
        """One mean row per sigma, exactly the arithmetic mean of its rows."""
        out = []
        for sigma in sorted({r["sigma"] for r in self.rows}):
            grp = [r for r in self.rows if r["sigma"] == sigma]
            out.append({
                "image": AGGREGATE_ID, "sigma": sigma,
                "psnr_noisy": float(np.mean([r["psnr_noisy"] for r in grp])),
                "psnr_denoised": float(np.mean([r["psnr_denoised"] for r in grp])),
                "method": grp[0]["method"],
                "sigma_used": float(np.mean([r["sigma_used"] for r in grp])),
            })
        return out

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=EVAL_HEADER)
            writer.writeheader()
            for row in self.sorted_rows() + self.aggregates():
                writer.writerow({**row,
                                 "sigma": f"{row['sigma']:g}",
                                 "psnr_noisy": f"{row['psnr_noisy']:.4f}",
                                 "psnr_denoised": f"{row['psnr_denoised']:.4f}",
                                 "sigma_used": f"{row['sigma_used']:.4f}"})

    def render_curve(self, path: str, title: str = "denoising performance") -> None:
        """PSNR-vs-sigma curve for the aggregates, next to the CSV."""
        aggs = self.aggregates()
        sig = [a["sigma"] for a in aggs]
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.plot(sig, [a["psnr_denoised"] for a in aggs], "o-", label="denoised")
        ax.plot(sig, [a["psnr_noisy"] for a in aggs], "s--", color="gray", label="input")
        ax.set_xlabel(r"noise level $\sigma$ (0..255 scale)")
        ax.set_ylabel("mean PSNR (dB)")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def mosaic_grid(num_filters: int) -> tuple:
    """(rows, cols) of the filter mosaic; roughly 2:1 wide (32 -> 4 x 8)."""
    cols = int(np.ceil(np.sqrt(2.0 * num_filters)))
    rows = int(np.ceil(num_filters / cols))
    return rows, cols


def filter_mosaic_array(weights: np.ndarray, pad: int = 1) -> np.ndarray:
    """Tile (M, k, k, C) filters into one displayable array, each filter
    min-max normalized to [0, 1]; separator value 0."""
    m, k, _, c = weights.shape
    rows, cols = mosaic_grid(m)
    out = np.zeros((rows * (k + pad) + pad, cols * (k + pad) + pad, c))
    for i in range(m):
        tile = weights[i]
        lo, hi = tile.min(), tile.max()
        tile = (tile - lo) / (hi - lo) if hi > lo else np.full_like(tile, 0.5)
        r, cc = divmod(i, cols)
        top = pad + r * (k + pad)
        left = pad + cc * (k + pad)
        out[top:top + k, left:left + k] = tile
    return out[:, :, 0] if c == 1 else out


def render_mosaic(weights: np.ndarray, path: str, title: str = "dictionary filters") -> None:
    arr = filter_mosaic_array(weights)
    fig, ax = plt.subplots(figsize=(6.0, 6.0 * arr.shape[0] / arr.shape[1]))
    if arr.ndim == 2:
        ax.imshow(arr, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    else:
        ax.imshow(arr, vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_axis_off()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=200)
    plt.close(fig)


def render_training_curve(log_rows: list, path: str) -> None:
    """Loss and validation PSNR over epochs from training log rows."""
    epochs = [int(r["epoch"]) for r in log_rows]
    losses = [float(r["loss"]) for r in log_rows]
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    ax.plot(epochs, losses, label="training loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    vpts = [(int(r["epoch"]), float(r["val_psnr"])) for r in log_rows if r["val_psnr"] != ""]
    if vpts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*vpts), "o-", color="tab:orange", label="val PSNR")
        ax2.set_ylabel("validation PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
