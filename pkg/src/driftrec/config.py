"""Model configuration: a flat key-value config with validation.

Every key can come from a YAML file and be overridden by a CLI flag of
the same name (dashes instead of underscores).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    """Raised when a config file fails to parse or a key is out of range."""


@dataclass
class ModelConfig:
    # embeddings / sequence
    d: int = 64
    max_history_len: int = 50

    # stability routing
    lambda_stb: float = 1.0
    freeze_stability_embeddings: bool = False

    # counterfactual re-weighting
    W: int = 3
    T: float = 1.0
    lambda_aux: float = 0.1
    per_candidate_top_m: Optional[int] = None

    # diffusion
    tau_S: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    guidance_strength: float = 2.0
    cond_dropout_p: float = 0.1

    # dual-side Thompson sampling simplifier
    dts_alpha0: float = 1.0
    dts_beta0: float = 1.0
    dts_max_removal_frac: float = 0.3
    dts_min_history: int = 2

    # encoder
    encoder_layers: int = 2
    encoder_heads: int = 2
    encoder_dropout: float = 0.1

    # training
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    patience: int = 20

    # evaluation
    neg_samples: int = 100
    K: int = 20
    score_fn: str = "inner"

    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        def fail(msg):
            raise ConfigError(msg)

        if self.d <= 0:
            fail("d must be a positive integer")
        if self.max_history_len < 2:
            fail("max_history_len must be >= 2")
        if not (0.5 <= self.lambda_stb <= 2.0):
            fail("lambda_stb must be in [0.5, 2.0]")
        if self.W not in (1, 3, 5):
            fail("W must be in {1,3,5}")
        if self.T <= 0:
            fail("T must be > 0")
        if self.lambda_aux < 0:
            fail("lambda_aux must be >= 0")
        if self.per_candidate_top_m is not None and self.per_candidate_top_m < 1:
            fail("per_candidate_top_m must be >= 1 when set")
        if self.tau_S < 1:
            fail("tau_S must be >= 1")
        if not (0 < self.beta_start < 1 and 0 < self.beta_end < 1):
            fail("beta_start and beta_end must be in (0,1)")
        if self.guidance_strength < 0:
            fail("guidance_strength must be >= 0")
        if not (0.0 <= self.cond_dropout_p <= 1.0):
            fail("cond_dropout_p must be in [0,1]")
        if self.dts_alpha0 <= 0 or self.dts_beta0 <= 0:
            fail("dts_alpha0 and dts_beta0 must be > 0")
        if not (0.0 <= self.dts_max_removal_frac < 1.0):
            fail("dts_max_removal_frac must be in [0,1)")
        if self.dts_min_history < 2:
            fail("dts_min_history must be >= 2")
        if self.encoder_layers < 1 or self.encoder_heads < 1:
            fail("encoder_layers and encoder_heads must be >= 1")
        if self.d % self.encoder_heads != 0:
            fail("d must be divisible by encoder_heads")
        if not (0.0 <= self.encoder_dropout < 1.0):
            fail("encoder_dropout must be in [0,1)")
        if self.learning_rate <= 0:
            fail("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            fail("batch_size, epochs and patience must be >= 1")
        if self.neg_samples < 1:
            fail("neg_samples must be >= 1")
        if self.K < 1:
            fail("K must be >= 1")
        if self.score_fn not in ("inner", "cosine"):
            fail("score_fn must be 'inner' or 'cosine'")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **kwargs) -> "ModelConfig":
        return dataclasses.replace(self, **kwargs)


CONFIG_KEYS = [f.name for f in dataclasses.fields(ModelConfig)]

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ModelConfig)}


def _coerce(key: str, value: Any) -> Any:
    """Coerce string override values (from CLI flags) to the field type."""
    if value is None or not isinstance(value, str):
        return value
    t = _FIELD_TYPES[key]
    if key == "per_candidate_top_m":
        return None if value.lower() in ("none", "") else int(value)
    if t == "int":
        return int(value)
    if t == "float":
        return float(value)
    if t == "bool":
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: cannot interpret {value!r} as bool")
    return value


def load_config(path: Optional[str] = None,
                overrides: Optional[dict[str, Any]] = None) -> ModelConfig:
    """Load a YAML config file and apply overrides on top.

    Overrides (typically CLI flags) take precedence over file values.
    Unknown keys and out-of-range values raise ConfigError naming the key.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as f:
                raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"failed to parse config file {path}: {e}") from e
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        values.update(raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    for key in values:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    values = {k: _coerce(k, v) for k, v in values.items()}
    return ModelConfig(**values)


def save_config(config: ModelConfig, path: str):
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True)
