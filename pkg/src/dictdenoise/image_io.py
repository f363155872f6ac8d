"""8-bit image file I/O.

Binary PGM (P5) and PPM (P6) are handled natively; PNG is available
through matplotlib's built-in reader/writer.  8-bit values map to [0, 1]
by division by 255 and back by rounding to nearest with clamping.
"""

from __future__ import annotations

import os

import numpy as np

from .images import Image

SUPPORTED_EXTENSIONS = (".pgm", ".ppm", ".png")


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)


def load_image(path: str) -> Image:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".ppm"):
        return _read_pnm(path)
    if ext == ".png":
        return _read_png(path)
    raise ValueError(f"unsupported image format {ext!r} (expected one of {SUPPORTED_EXTENSIONS})")


def save_image(path: str, img: Image) -> None:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        if img.channels != 1:
            raise ValueError("pgm stores grayscale; image has 3 channels")
        _write_pnm(path, img)
    elif ext == ".ppm":
        if img.channels != 3:
            raise ValueError("ppm stores color; image has 1 channel")
        _write_pnm(path, img)
    elif ext == ".png":
        _write_png(path, img)
    else:
        raise ValueError(f"unsupported image format {ext!r} (expected one of {SUPPORTED_EXTENSIONS})")


def _read_pnm(path: str) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files supported (maxval {maxval})")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if raw.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    return Image(raw.reshape(height, width, channels) / 255.0)


def _write_pnm(path: str, img: Image) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(to_uint8(img.data).tobytes())


def _read_png(path: str) -> Image:
    import matplotlib.image as mpimg

    arr = mpimg.imread(path)  # float32 in [0, 1] for png
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]  # drop alpha
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"{path}: unsupported channel count {arr.shape[2]}")
    return Image(arr)


def _write_png(path: str, img: Image) -> None:
    import matplotlib.image as mpimg

    arr = to_uint8(img.data) / 255.0
    if img.channels == 1:
        mpimg.imsave(path, arr[:, :, 0], cmap="gray", vmin=0.0, vmax=1.0)
    else:
        mpimg.imsave(path, arr)


def list_images(directory: str) -> list:
    """Sorted paths of supported image files directly in ``directory``."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    names = sorted(
        n for n in os.listdir(directory)
        if os.path.splitext(n)[1].lower() in SUPPORTED_EXTENSIONS
    )
    return [os.path.join(directory, n) for n in names]
