"""
Typed run configuration: adapter, training and planted-task settings.

JSON config files mirror these field names exactly; unknown fields are rejected.
"""

import math
from enum import Enum
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SEED_LIMIT = 2**64


class Variant(str, Enum):
    HADAMARD = "hadamard"
    SVD_EXACT = "svd_exact"


class Direction(str, Enum):
    TOP = "top"
    BOTTOM = "bottom"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


# Recipe defaults per task family; k=200 assumes full-size layers
PRESETS: Dict[str, Dict[str, object]] = {
    "nlu": {"rank": 2, "alpha": 4.0, "k": 200, "dropout_p": 0.0},
    "commonsense": {"rank": 16, "alpha": 32.0, "k": 200, "dropout_p": 0.05},
    "vision": {"k": 32},
}


class AdapterConfig(BaseModel):
    """Shape-independent settings of one spectral low-rank adapter"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    rank: int = Field(2, ge=1)
    alpha: float = Field(4.0, gt=0)
    k: int = Field(2, ge=0)
    dropout_p: float = Field(0.0, ge=0.0, lt=1.0)
    variant: Variant = Variant.HADAMARD
    direction: Direction = Direction.TOP
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)

    @property
    def scale(self) -> float:
        """LoRA scaling alpha / r"""
        return self.alpha / self.rank

    @model_validator(mode="after")
    def _finite_scale(self):
        if not math.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"alpha / rank must be finite and positive, got {self.scale}")
        return self

    def check_shape(self, n: int, m: int):
        """Raise ConfigError unless r and k fit an n x m weight"""
        limit = min(n, m)
        if self.rank > limit:
            raise ConfigError(f"rank {self.rank} exceeds min(n, m) = {limit}")
        if self.k > limit:
            raise ConfigError(f"k {self.k} exceeds min(n, m) = {limit}")

    def trainable_parameters(self, n: int, m: int) -> int:
        return self.rank * (n + m) + self.k

    @classmethod
    def preset(cls, name: str, **overrides) -> "AdapterConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}'; choose from {', '.join(sorted(PRESETS))}")
        return build(cls, {**PRESETS[name], **overrides})


class TrainConfig(BaseModel):
    """AdamW with a linear warmup/decay schedule"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=1)
    warmup_ratio: float = Field(0.1, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)

    @field_validator("betas")
    @classmethod
    def _betas_in_open_unit_interval(cls, betas):
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError(f"betas must lie in (0, 1), got {betas}")
        return betas

    def total_steps(self, num_samples: int) -> int:
        return self.epochs * math.ceil(num_samples / self.batch_size)

    def warmup_steps(self, total_steps: int) -> int:
        return math.floor(self.warmup_ratio * total_steps)


class TaskSpec(BaseModel):
    """Planted regression task: target = spectral rescale of a random base plus low-rank drift"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(16, ge=1)
    m: int = Field(16, ge=1)
    k_true: int = Field(2, ge=0)
    d_true: List[float] = [2.0, 1.5]
    rank_true: int = Field(1, ge=0)
    noise_sigma: float = Field(0.0, ge=0.0)
    num_samples: int = Field(256, ge=1)
    seed: int = Field(0, ge=0, lt=SEED_LIMIT)

    @model_validator(mode="after")
    def _consistent(self):
        limit = min(self.n, self.m)
        if self.k_true > limit:
            raise ValueError(f"k_true {self.k_true} exceeds min(n, m) = {limit}")
        if self.rank_true > limit:
            raise ValueError(f"rank_true {self.rank_true} exceeds min(n, m) = {limit}")
        if len(self.d_true) != self.k_true:
            raise ValueError(f"d_true has {len(self.d_true)} entries, expected k_true = {self.k_true}")
        if any(not 0.25 <= d <= 4.0 for d in self.d_true):
            raise ValueError("d_true entries must lie in [0.25, 4]")
        return self


def build(model_cls, values: dict):
    """Validate a dict into model_cls, reporting failures as ConfigError"""
    try:
        return model_cls.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid {model_cls.__name__}: {e}") from e


def parse_json(model_cls, text: str):
    """Validate a JSON document into model_cls, reporting failures as ConfigError"""
    try:
        return model_cls.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"invalid {model_cls.__name__}: {e}") from e
