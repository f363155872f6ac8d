"""Binary checkpoint persistence.

Little-endian layout (documented in README.md, "File formats"):

    bytes  0..7    magic  b"DDNCKPT1"
    u32            format version (currently 1)
    u64 + bytes    UTF-8 config block, flat ``key = value`` lines
                   (must include every model field; extra keys are kept
                   as a string echo)
    u64            epoch
    u64            optimizer step counter
    u64            backtrack count
    f64            current learning rate
    u64 + records  validation history, (u64 epoch, f64 psnr) each
    f64 arrays     model parameters in declared order
                   (analysis_k, synthesis_k, base_k, gain_k for each
                   layer, then the dictionary), then the optimizer first
                   moments in the same order, then the second moments

Round trips are bit exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .config import parse_kv_text, _coerce, _field_type, _MODEL_FIELDS
from .model import ModelConfig, ModelParams

MAGIC = b"DDNCKPT1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: list  # first moments, same shapes/order as param_arrays()
    v: list  # second moments
    t: int = 0

    @staticmethod
    def zeros_like(theta: ModelParams) -> "AdamState":
        arrays = theta.param_arrays()
        return AdamState([np.zeros_like(a) for a in arrays],
                         [np.zeros_like(a) for a in arrays], 0)


@dataclass
class CheckpointRecord:
    model: ModelParams
    adam: AdamState
    epoch: int = 0
    lr: float = 0.0
    backtracks: int = 0
    val_history: list = None  # list of (epoch, psnr)
    extra_config: dict = None  # non-model keys echoed from the run config
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.val_history is None:
            self.val_history = []
        if self.extra_config is None:
            self.extra_config = {}


def fresh_record(theta: ModelParams, extra_config: dict | None = None) -> CheckpointRecord:
    return CheckpointRecord(theta, AdamState.zeros_like(theta),
                            extra_config=dict(extra_config or {}))


def _config_block(rec: CheckpointRecord) -> str:
    lines = []
    for f in fields(ModelConfig):
        lines.append(f"{f.name} = {getattr(rec.model.config, f.name)}")
    for key, value in sorted(rec.extra_config.items()):
        if key not in _MODEL_FIELDS:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_checkpoint(rec: CheckpointRecord, path: str) -> None:
    cfg_bytes = _config_block(rec).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", rec.version))
        fh.write(struct.pack("<Q", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<QQQd", rec.epoch, rec.adam.t, rec.backtracks, rec.lr))
        fh.write(struct.pack("<Q", len(rec.val_history)))
        for epoch, psnr in rec.val_history:
            fh.write(struct.pack("<Qd", int(epoch), float(psnr)))
        for arr in rec.model.param_arrays() + rec.adam.m + rec.adam.v:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str, expect_config: ModelConfig | None = None) -> CheckpointRecord:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        out = blob[off:off + n]
        off += n
        return out

    if take(8, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (cfg_len,) = struct.unpack("<Q", take(8, "config length"))
    raw_cfg = parse_kv_text(take(cfg_len, "config block").decode("utf-8"))

    model_kw, extra = {}, {}
    for key, value in raw_cfg.items():
        if key in _MODEL_FIELDS:
            model_kw[key] = _coerce(value, _field_type(_MODEL_FIELDS[key]))
        else:
            extra[key] = value
    try:
        config = ModelConfig(**model_kw)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc
    if expect_config is not None and config != expect_config:
        raise CheckpointError(
            f"{path}: checkpoint config {config} does not match requested {expect_config}")

    epoch, adam_t, backtracks, lr = struct.unpack("<QQQd", take(32, "scalars"))
    (n_val,) = struct.unpack("<Q", take(8, "history length"))
    history = []
    for _ in range(n_val):
        e, p = struct.unpack("<Qd", take(16, "history entry"))
        history.append((e, p))

    shapes = _array_shapes(config)
    all_arrays = []
    for shape in shapes * 3:  # params, adam m, adam v
        n = int(np.prod(shape))
        arr = np.frombuffer(take(8 * n, f"array {shape}"), dtype="<f8").reshape(shape).copy()
        all_arrays.append(arr)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")

    n_arr = len(shapes)
    model = ModelParams.from_arrays(config, all_arrays[:n_arr])
    adam = AdamState(all_arrays[n_arr:2 * n_arr], all_arrays[2 * n_arr:], adam_t)
    return CheckpointRecord(model, adam, epoch, lr, backtracks, history, extra, version)


def _array_shapes(config: ModelConfig) -> list:
    k, m = config.kernel_size, config.subbands
    c = config.bank_channels
    bank = (m, k, k, c)
    vec = (m,)
    shapes = []
    for _ in range(config.unrollings):
        shapes += [bank, bank, vec, vec]
    shapes.append(bank)
    return shapes
