"""Run configuration: defaults, YAML loading, validation, canonical hash.

Three sections (data, model, training) mirror the pipeline stages. Every
key has a default; a key the schema does not know is an error, so typos
fail loudly instead of silently running with a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from .errors import ValidationError

__all__ = [
    "DataConfig",
    "ModelConfig",
    "TrainingConfig",
    "Config",
    "config_from_dict",
    "load_config",
]


@dataclass
class DataConfig:
    train: str = "train.json"
    val: str = "val.json"
    test: str = "test.json"
    features_dir: str = ""


@dataclass
class ModelConfig:
    embed_width: int = 64
    hidden_width: int = 32
    decoder_hidden: int = 0  # 0 means "match the encoder output width"
    cell: str = "gru"
    pooling: str = "max"
    literal_decoder: bool = False
    freeze_embeddings: bool = False
    flow_width: int = 0
    rgb_width: int = 0
    audio_width: int = 0

    def validate(self):
        if self.embed_width < 1 or self.hidden_width < 1:
            raise ValidationError("embed_width and hidden_width must be positive")
        if self.decoder_hidden < 0:
            raise ValidationError("decoder_hidden must be >= 0 (0 = automatic)")
        if self.cell not in ("gru", "lstm"):
            raise ValidationError(f"cell must be 'gru' or 'lstm', got {self.cell!r}")
        if self.pooling not in ("max", "average"):
            raise ValidationError(f"pooling must be 'max' or 'average', got {self.pooling!r}")
        for name in ("flow_width", "rgb_width", "audio_width"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    augmentation: str = "basic"
    factor: int = 2
    loss_mode: str = "tf"
    ss_probability: float = 0.2
    max_generate_len: int = 20

    def validate(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.augmentation not in ("basic", "per-turn", "shuffle"):
            raise ValidationError(
                f"augmentation must be 'basic', 'per-turn' or 'shuffle', got {self.augmentation!r}"
            )
        if self.factor < 1:
            raise ValidationError("factor must be >= 1")
        if self.loss_mode not in ("tf", "ss", "free"):
            raise ValidationError(
                f"loss_mode must be 'tf', 'ss' or 'free', got {self.loss_mode!r}"
            )
        if not (0.0 <= self.ss_probability <= 1.0):
            raise ValidationError("ss_probability must lie in [0, 1]")
        if self.max_generate_len < 1:
            raise ValidationError("max_generate_len must be >= 1")


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def validate(self):
        self.model.validate()
        self.training.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> bytes:
        """32-byte digest of the canonical serialized form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).digest()


def _fill(cls, section: dict, where: str):
    defaults = cls()
    unknown = set(section) - set(vars(defaults))
    if unknown:
        raise ValidationError(f"unknown {where} config keys: {sorted(unknown)}")
    for key, value in section.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ValidationError(
                f"{where}.{key} must be {expected.__name__}, got {type(value).__name__}"
            )
        setattr(defaults, key, value)
    return defaults


def config_from_dict(raw: dict) -> Config:
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    unknown = set(raw) - {"data", "model", "training"}
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    for name in raw:
        if not isinstance(raw[name], dict):
            raise ValidationError(f"config section {name!r} must be a mapping")
    cfg = Config(
        data=_fill(DataConfig, raw.get("data", {}), "data"),
        model=_fill(ModelConfig, raw.get("model", {}), "model"),
        training=_fill(TrainingConfig, raw.get("training", {}), "training"),
    )
    return cfg.validate()


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw if raw is not None else {})
