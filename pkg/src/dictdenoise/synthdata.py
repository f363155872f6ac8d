"""Procedural piecewise-smooth test scenes.

Generates natural-image stand-ins (smooth shaded backgrounds, occluding
shapes with crisp edges, oriented gratings) for desk-scale training and
benchmarks.  Images are quantized to 8 bits like real captures.
"""

from __future__ import annotations

import os

import numpy as np

from .image_io import save_image, to_uint8
from .images import Image


def synth_scene(size: int, seed: int, color: bool = False) -> Image:
    """One procedural scene of ``size`` x ``size`` pixels."""
    rng = np.random.default_rng(seed)
    h = w = int(size)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)

    # smooth background: a few random low-frequency waves
    img = 0.5 * np.ones((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.15) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)

    # occluding shapes with sharp boundaries and mild interior shading
    for _ in range(rng.integers(4, 8)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.05, 0.3, size=2)
        angle = rng.uniform(0, np.pi)
        ca, sa = np.cos(angle), np.sin(angle)
        u = (yy - cy) * ca + (xx - cx) * sa
        v = -(yy - cy) * sa + (xx - cx) * ca
        if rng.random() < 0.5:
            inside = (u / ry) ** 2 + (v / rx) ** 2 < 1.0
        else:
            inside = (np.abs(u) < ry) & (np.abs(v) < rx)
        level = rng.uniform(0.15, 0.85)
        shade = rng.uniform(-0.2, 0.2) * u + rng.uniform(-0.2, 0.2) * v
        img = np.where(inside, level + shade, img)

    # one or two textured patches (oriented gratings)
    for _ in range(rng.integers(1, 3)):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        ry, rx = rng.uniform(0.08, 0.22, size=2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        freq = rng.uniform(8, 24)
        angle = rng.uniform(0, np.pi)
        grating = np.sin(2 * np.pi * freq * (yy * np.cos(angle) + xx * np.sin(angle)))
        img = np.where(inside, img + rng.uniform(0.08, 0.18) * grating, img)

    img = np.clip(img, 0.02, 0.98)
    if color:
        base = img[:, :, None]
        tint = rng.uniform(0.7, 1.0, size=3)
        chroma = np.stack(
            [rng.uniform(0.05, 0.12) * np.sin(2 * np.pi * (rng.uniform(0.5, 1.5) * yy
                                                           + rng.uniform(0.5, 1.5) * xx)
                                              + rng.uniform(0, 2 * np.pi))
             for _ in range(3)], axis=-1)
        arr = np.clip(base * tint[None, None, :] + chroma, 0.02, 0.98)
    else:
        arr = img[:, :, None]
    # match the quantization of real 8-bit files
    return Image(to_uint8(arr) / 255.0)


def make_dataset(directory: str, count: int, size: int, seed: int, color: bool = False) -> list:
    """Write ``count`` scenes into ``directory``; returns the file paths."""
    os.makedirs(directory, exist_ok=True)
    ext = ".ppm" if color else ".pgm"
    paths = []
    for i in range(count):
        img = synth_scene(size, seed + i, color=color)
        path = os.path.join(directory, f"scene_{i:03d}{ext}")
        save_image(path, img)
        paths.append(path)
    return paths
