"""Command-line interface.

Subcommands: train, denoise, jdd, eval, export-dict, estimate-noise,
make-data.  Every command is deterministic given its --seed; failures
exit nonzero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .config import load_configs
from .image_io import load_image, save_image
from .images import Image, awgn, make_bayer_mask, psnr
from .model import forward_batch
from .noise import estimate_mad, estimate_pca
from .report import EvalReport, render_mosaic, render_training_curve
from .synthdata import make_dataset
from .training import Dataset, evaluate_image, split_validation, train


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args) or 0
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dictdenoise",
        description="Convolutional dictionary-learning denoiser: training, "
                    "inference, joint denoise+demosaic, evaluation sweeps.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="flat key = value run config")
    p.add_argument("--out", required=True, help="output directory (model.ckpt, log.csv)")
    p.add_argument("--max-epochs", type=int, default=None, help="override the config value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one image with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=None, help="ground-truth noise level (0..255)")
    p.add_argument("--estimator", choices=("gt", "mad", "pca"), default="gt")
    p.add_argument("--ref", default=None, help="clean reference; prints PSNR when given")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("jdd", help="reconstruct a full-color image from a Bayer mosaic")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="mosaic (zeros at unobserved), or a clean "
                                                  "image with --synth")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--estimator", choices=("gt", "mad", "pca"), default="gt")
    p.add_argument("--synth", action="store_true",
                   help="treat the input as clean: apply noise and the RGGB mosaic first")
    p.add_argument("--seed", type=int, default=0, help="noise seed for --synth")
    p.add_argument("--ref", default=None)
    p.set_defaults(func=cmd_jdd)

    p = sub.add_parser("eval", help="PSNR sweep over a test directory and noise levels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory of clean test images")
    p.add_argument("--sigmas", required=True, help="comma-separated noise levels, e.g. 15,25,50")
    p.add_argument("--estimator", choices=("gt", "mad", "pca"), default="gt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report directory (eval.csv, eval_psnr.png)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-dict", help="dump the learned dictionary filters")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=None,
                   help="optional image directory; orders filters by mean |activation|")
    p.add_argument("--sigma", type=float, default=25.0, help="noise level for usage ordering")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_dict)

    p = sub.add_parser("estimate-noise", help="blind noise-level estimate of one image")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("mad", "pca"), required=True)
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("make-data", help="generate procedural piecewise-smooth test scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--color", action="store_true")
    p.set_defaults(func=cmd_make_data)
    return parser


def cmd_train(args) -> int:
    train_cfg, model_cfg = load_configs(args.config)
    if args.max_epochs is not None:
        from dataclasses import replace
        train_cfg = replace(train_cfg, max_epochs=args.max_epochs)
    if not train_cfg.train_dir:
        raise ValueError("config must set train_dir")
    train_ds = Dataset(train_cfg.train_dir, role="train")
    if train_cfg.val_dir:
        val_ds = Dataset(train_cfg.val_dir, role="validation", augment=False)
    else:
        train_ds, val_ds = split_validation(train_ds, train_cfg.val_images)

    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "log.csv")

    def progress(row):
        msg = f"epoch {row['epoch']:4d}  loss {row['loss']:.6f}  lr {row['lr']:.2e}"
        if row["val_psnr"]:
            msg += f"  val {row['val_psnr']} dB"
        print(msg, flush=True)

    record = train(train_cfg, train_ds, val_ds, model_cfg, log_path=log_path, progress=progress)
    record.extra_config = _train_echo(train_cfg)
    ckpt.save_checkpoint(record, os.path.join(args.out, "model.ckpt"))
    with open(log_path) as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        render_training_curve(rows, os.path.join(args.out, "training.png"))
    print(f"wrote {os.path.join(args.out, 'model.ckpt')} and {log_path}")
    return 0


def _train_echo(train_cfg) -> dict:
    from dataclasses import fields
    return {f.name: getattr(train_cfg, f.name) for f in fields(type(train_cfg))
            if f.name != "task"}


def _pick_sigma(img: Image, args) -> float:
    if args.estimator == "gt":
        if args.sigma is None:
            raise ValueError("--estimator gt needs --sigma")
        return float(args.sigma)
    est = estimate_mad(img) if args.estimator == "mad" else estimate_pca(img)
    return est.sigma_hat


def cmd_denoise(args) -> int:
    record = ckpt.load_checkpoint(args.ckpt)
    theta = record.model
    if theta.config.task != "denoise":
        raise ValueError("checkpoint is a jdd model; use the jdd command")
    noisy = load_image(args.input)
    if noisy.channels != theta.config.channels:
        raise ValueError(f"model expects {theta.config.channels}-channel input, "
                         f"got {noisy.channels}")
    sigma_used = _pick_sigma(noisy, args)
    mean = noisy.data.mean(axis=(0, 1))
    xhat, _, _ = forward_batch(theta, (noisy.data - mean)[None], sigma_used)
    out = Image(np.clip(xhat[0] + mean, 0.0, 1.0))
    save_image(args.out, out)
    print(f"sigma_used={sigma_used:.4f} estimator={args.estimator}")
    if args.ref:
        ref = load_image(args.ref)
        print(f"psnr_noisy={psnr(ref, noisy):.4f} psnr_denoised={psnr(ref, out):.4f}")
    return 0


def cmd_jdd(args) -> int:
    record = ckpt.load_checkpoint(args.ckpt)
    theta = record.model
    if theta.config.task != "jdd":
        raise ValueError("checkpoint is not a jdd model")
    img = load_image(args.input)
    if img.channels != 3:
        raise ValueError("jdd needs RGB input")
    mask = make_bayer_mask(img.height, img.width)
    if args.synth:
        if args.sigma is None:
            raise ValueError("--synth needs --sigma")
        noisy = awgn(img, args.sigma, args.seed)
        mosaic = Image(noisy.data * mask.data)
        ref = img
    else:
        mosaic = Image(img.data * mask.data)  # enforce the RGGB sampling
        ref = load_image(args.ref) if args.ref else None
    sigma_used = _pick_sigma(mosaic, args)
    mean = (mosaic.data).sum(axis=(0, 1)) / mask.data.sum(axis=(0, 1))
    y = (mosaic.data - mean) * mask.data
    xhat, _, _ = forward_batch(theta, y[None], sigma_used, mask=mask.data)
    out = Image(np.clip(xhat[0] + mean, 0.0, 1.0))
    save_image(args.out, out)
    print(f"sigma_used={sigma_used:.4f} estimator={args.estimator}")
    if ref is not None:
        print(f"psnr_mosaic={psnr(ref, Image(np.clip(mosaic.data, 0, 1))):.4f} "
              f"psnr_reconstructed={psnr(ref, out):.4f}")
    return 0


def cmd_eval(args) -> int:
    record = ckpt.load_checkpoint(args.ckpt)
    theta = record.model
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if not sigmas:
        raise ValueError("empty --sigmas list")
    ds = Dataset(args.data, role="test", augment=False)
    if ds.channels != theta.config.channels:
        raise ValueError("test images do not match the model's channel count")
    report = EvalReport()
    for img_idx, (img, path) in enumerate(zip(ds.images, ds.paths)):
        name = os.path.basename(path)
        for sig_idx, sigma in enumerate(sigmas):
            noise_seed = args.seed * 100003 + img_idx * 1009 + sig_idx
            den, noisy_psnr, _, sigma_used = evaluate_image(
                theta, img, sigma, noise_seed, estimator=args.estimator)
            report.add(name, sigma, noisy_psnr, den, args.estimator, sigma_used)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "eval.csv")
    report.write_csv(csv_path)
    report.render_curve(os.path.join(args.out, "eval_psnr.png"))
    for agg in report.aggregates():
        print(f"sigma={agg['sigma']:g} mean_psnr_noisy={agg['psnr_noisy']:.4f} "
              f"mean_psnr_denoised={agg['psnr_denoised']:.4f}")
    print(f"wrote {csv_path}")
    return 0


def cmd_export_dict(args) -> int:
    record = ckpt.load_checkpoint(args.ckpt)
    theta = record.model
    weights = theta.dictionary.weights
    os.makedirs(args.out, exist_ok=True)
    order = np.arange(weights.shape[0])
    if args.data:
        order = _usage_order(theta, args.data, args.sigma, args.seed)
    ordered = weights[order]
    np.save(os.path.join(args.out, "dict_filters.npy"), ordered)
    render_mosaic(ordered, os.path.join(args.out, "dict_mosaic.png"))
    with open(os.path.join(args.out, "dict_order.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "filter_index"])
        for rank, idx in enumerate(order):
            writer.writerow([rank, int(idx)])
    print(f"wrote {args.out}/dict_filters.npy, dict_mosaic.png, dict_order.csv")
    return 0


def _usage_order(theta, data_dir: str, sigma: float, seed: int) -> np.ndarray:
    """Filters ranked by mean absolute code activation over a directory."""
    ds = Dataset(data_dir, role="test", augment=False)
    totals = np.zeros(theta.config.subbands)
    m_axis = 2 if theta.config.threshold_mode == "block" else 1
    for idx, img in enumerate(ds.images):
        rng = np.random.default_rng(seed + idx)
        noise = rng.standard_normal(img.data.shape) * (sigma / 255.0)
        y = img.data + noise
        y = y - y.mean(axis=(0, 1))
        mask = None
        if theta.config.task == "jdd":
            mask = make_bayer_mask(img.height, img.width).data
            y = y * mask
        _, code, _ = forward_batch(theta, y[None], sigma, mask=mask)
        axes = tuple(i for i in range(code.ndim) if i != m_axis)
        totals += np.abs(code).mean(axis=axes)
    return np.argsort(-totals / len(ds.images), kind="stable")


def cmd_estimate_noise(args) -> int:
    img = load_image(args.input)
    est = estimate_mad(img) if args.method == "mad" else estimate_pca(img)
    print(f"sigma_hat={est.sigma_hat:.4f} method={est.method} elapsed={est.elapsed:.4f}s")
    return 0


def cmd_make_data(args) -> int:
    paths = make_dataset(args.out, args.count, args.size, args.seed, color=args.color)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
