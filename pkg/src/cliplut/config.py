"""Run configuration and its flat ``key = value`` file format.

One setting per line, ``#`` comments, blank lines ignored. Keys are the field names
of :class:`RunConfig`; an unknown key or an unparsable value is a ``ConfigError``.
Booleans are ``true``/``false``; strings are written verbatim (no quoting).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError

PROMPT_MODES = ("learned", "random", "none")
ENCODERS = ("mock", "external")
RESIZE_MODES = ("bilinear", "area")


@dataclass
class RunConfig:
    seed: int = 0
    # data
    data_root: str = ""
    layout: str = "dirs"
    split: str = "train"
    manifest: str = ""
    image_size: int = 256
    resize: str = "bilinear"
    # stage 1: prompts
    prompt_epochs: int = 100
    prompt_batch: int = 16
    prompt_lr: float = 1e-3
    prompt_tokens: int = 16
    temperature: float = 1.0
    # stage 2: enhancer
    enhancer_epochs: int = 200
    image_batch: int = 8
    max_steps: int = 0  # 0 = run all epochs
    predictor_lr: float = 1e-4
    lut_lr: float = 1e-3
    loss_mse: float = 1.0
    loss_perceptual: float = 0.4
    loss_ssim: float = 0.4
    lut_dim: int = 33
    learn_luts: bool = True
    base_width: int = 16
    stages: int = 3
    prompt_mode: str = "learned"
    # encoders
    encoder: str = "mock"
    encoder_seed: int = 0
    encoder_backend: str = "transformers"
    encoder_model: str = "openai/clip-vit-base-patch32"
    encoder_device: str = "cpu"
    # evaluation
    float_metrics: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f"prompt_mode must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.layout not in ("dirs", "manifest"):
            raise ConfigError(f"layout must be 'dirs' or 'manifest', got {self.layout!r}")
        if self.resize not in RESIZE_MODES:
            raise ConfigError(f"resize must be one of {RESIZE_MODES}, got {self.resize!r}")
        for name in ("prompt_batch", "image_batch", "prompt_tokens", "stages", "base_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("prompt_epochs", "enhancer_epochs", "max_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lut_dim < 2:
            raise ConfigError(f"lut_dim must be >= 2, got {self.lut_dim}")
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")

    @property
    def loss_weights(self) -> tuple[float, float, float]:
        return (self.loss_mse, self.loss_perceptual, self.loss_ssim)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(kind, text: str, key: str):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def dumps(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    types = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(RunConfig)}
    values = base.to_dict() if base is not None else {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse(types[key], val, key)
    return RunConfig(**values)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(cfg))
