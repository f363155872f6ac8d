"""Flat ``key = value`` run configuration files.

One assignment per line; blank lines and ``#`` comments are allowed;
unknown keys are rejected.  A single file carries both the model
architecture and the training protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    sigma_lo: float
    sigma_hi: float
    batch_size: int = 10
    lr0: float = 1e-3
    lr_decay: float = 0.95
    lr_decay_every: int = 50
    max_epochs: int = 500
    backtrack_factor: float = 0.8
    backtrack_threshold_db: float = 0.5
    val_interval: int = 10
    val_images: int = 5
    crop_size: int = 128
    loss_kind: str = "mse"
    task: str = "denoise"
    seed: int = 0
    train_dir: str = ""
    val_dir: str = ""

    def __post_init__(self):
        if not (0 <= self.sigma_lo <= self.sigma_hi):
            raise ValueError("need 0 <= sigma_lo <= sigma_hi")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.lr_decay <= 1):
            raise ValueError("lr_decay must be in (0, 1]")
        if not (0 < self.backtrack_factor < 1):
            raise ValueError("backtrack_factor must be in (0, 1)")
        if self.lr_decay_every < 1 or self.val_interval < 1:
            raise ValueError("lr_decay_every and val_interval must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.crop_size < 1:
            raise ValueError("crop_size must be >= 1")
        if self.loss_kind not in ("mse", "mcsure"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.task not in ("denoise", "jdd"):
            raise ValueError(f"unknown task {self.task!r}")


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(raw: str, typ):
    if typ is bool:
        key = raw.strip().lower()
        if key not in _BOOL:
            raise ConfigError(f"expected a boolean, got {raw!r}")
        return _BOOL[key]
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


def parse_kv_text(text: str) -> dict:
    """Parse ``key = value`` lines into a string dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
# dataclass field types arrive as strings under `from __future__ import annotations`
_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _field_type(t):
    return _TYPES[t] if isinstance(t, str) else t


def configs_from_text(text: str):
    """Build (TrainConfig, ModelConfig) from config-file text.

    Every key must be a TrainConfig or ModelConfig field; ``task`` feeds
    both.  Missing keys fall back to the dataclass defaults.
    """
    raw = parse_kv_text(text)
    model_kw, train_kw = {}, {}
    for key, value in raw.items():
        known = False
        if key in _MODEL_FIELDS:
            model_kw[key] = _coerce(value, _field_type(_MODEL_FIELDS[key]))
            known = True
        if key in _TRAIN_FIELDS:
            train_kw[key] = _coerce(value, _field_type(_TRAIN_FIELDS[key]))
            known = True
        if not known:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        model_cfg = ModelConfig(**model_kw)
        train_cfg = TrainConfig(**train_kw)
    except TypeError as exc:  # missing required field
        raise ConfigError(str(exc)) from exc
    if train_cfg.task != model_cfg.task:
        raise ConfigError("task mismatch between training and model settings")
    return train_cfg, model_cfg


def load_configs(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return configs_from_text(fh.read())


def configs_to_text(train_cfg: TrainConfig, model_cfg: ModelConfig) -> str:
    """Serialize both configs back to the flat key = value form."""
    lines = []
    for f in fields(ModelConfig):
        lines.append(f"{f.name} = {getattr(model_cfg, f.name)}")
    for f in fields(TrainConfig):
        if f.name == "task":
            continue  # already written with the model fields
        lines.append(f"{f.name} = {getattr(train_cfg, f.name)}")
    return "\n".join(lines) + "\n"
