import json
import os
import sys
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Add parent directory to path to import config.py from project root
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from config import Config
from errors import ConfigError


class ModelConfig(BaseModel):
    """Architecture of the language model"""

    model_config = ConfigDict(extra="forbid")

    mode: Literal["char", "word"] = "char"
    vocab_size: Optional[int] = Field(default=None, gt=0)
    embedding_size: int = Field(default=128, gt=0)
    hidden_size: int = Field(default=1024, gt=0)
    num_layers: int = Field(default=2, gt=0)
    # width of the convolution hidden layer; hidden_size when unset
    parser_hidden: Optional[int] = Field(default=None, gt=0)
    look_back: int = Field(default=10, gt=0)
    temperature: float = Field(default=10.0, gt=0)
    memory_span: int = Field(default=20, gt=0)
    residual_blocks: int = Field(default=1, ge=0)
    # (embedding/output, between layers, recurrent summary)
    dropout: Tuple[float, float, float] = (0.0, 0.25, 0.1)
    tie_embeddings: bool = False
    layer_norm: bool = True
    disable_parsing: bool = False
    disable_reading_attention: bool = False
    disable_predict_attention: bool = False
    precision: Literal["float32", "float64"] = "float32"

    @field_validator("dropout")
    @classmethod
    def _check_dropout(cls, value):
        for rate in value:
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rates must lie in [0, 1), got {rate}")
        return value

    @property
    def readout_size(self) -> int:
        return self.embedding_size if self.tie_embeddings else self.hidden_size


class TrainerConfig(BaseModel):
    """Optimization recipe"""

    model_config = ConfigDict(extra="forbid")

    unit: Literal["stream", "sentences"] = "stream"
    lr: float = Field(default=0.003, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=1e-6, ge=0)
    clip_norm: float = Field(default=1.0, gt=0)
    batch_size: int = Field(default=64, gt=0)
    bptt: int = Field(default=100, gt=0)
    eval_batch_size: int = Field(default=10, gt=0)
    epochs: int = Field(default=100, gt=0)
    max_steps_per_epoch: Optional[int] = Field(default=None, gt=0)
    max_steps: Optional[int] = Field(default=None, gt=0)
    lr_decay: float = Field(default=0.1, gt=0, le=1)
    patience: int = Field(default=2, gt=0)
    log_interval: int = Field(default=50, gt=0)
    prefetch: int = Field(default=2, ge=0)


class DataConfig(BaseModel):
    """Corpus locations; paths are resolved relative to the working directory"""

    model_config = ConfigDict(extra="forbid")

    train: Optional[str] = None
    valid: Optional[str] = None
    test: Optional[str] = None
    gold_trees: Optional[str] = None
    lowercase: bool = False
    wsj10: bool = True


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "prpn"
    seed: int = Config.DEFAULT_SEED
    model: ModelConfig = Field(default_factory=ModelConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    @model_validator(mode="after")
    def _check_unit(self):
        if self.trainer.unit == "sentences" and self.model.mode != "word":
            raise ValueError("sentence batching needs word mode")
        return self


class RunConfig(BaseModel):
    """One CLI invocation"""

    model_config = ConfigDict(extra="forbid")

    command: str
    config_path: Optional[str] = None
    overrides: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    output_dir: str = Config.STORAGE_DIR


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dot-path assignments such as 'trainer.lr=0.001' to a config dict.

    Values are parsed as JSON where possible, otherwise kept as strings.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key.path=value", override=item)
        path, value = item.split("=", 1)
        keys = [key for key in path.strip().split(".") if key]
        if not keys:
            raise ConfigError(f"Override '{item}' has an empty key path", override=item)
        node = raw
        for key in keys[:-1]:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Override '{item}' descends into non-object '{key}'", override=item)
            node = child
        node[keys[-1]] = _parse_override_value(value)
    return raw


def load_raw_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    resolved = path
    if not os.path.exists(resolved):
        preset = Config.preset_path(path)
        if os.path.exists(preset):
            resolved = preset
        else:
            raise ConfigError(f"Config file '{path}' does not exist", path=path)
    try:
        with open(resolved, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file '{resolved}' is not valid JSON: {exc}", path=resolved) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file '{resolved}' must hold a JSON object", path=resolved)
    return raw


def load_experiment_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> ExperimentConfig:
    """Load a JSON config (file or preset name), apply overrides and validate"""
    raw = apply_overrides(load_raw_config(path), overrides)
    if seed is not None:
        raw["seed"] = seed
    return validate_experiment_config(raw)


def validate_experiment_config(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        problems = [
            {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"]}
            for err in exc.errors()
        ]
        raise ConfigError(f"Invalid configuration: {problems[0]['loc']}: {problems[0]['msg']}",
                          problems=problems) from None
