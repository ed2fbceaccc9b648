"""Configuration management using Pydantic."""

from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from cmml_cli.core.baseline import BaselineConfig
from cmml_cli.core.metalearn import TrainConfig
from cmml_cli.data.synthetic import SyntheticTaskSpec
from cmml_cli.models.backbone import BackboneConfig
from cmml_cli.models.context import EncoderConfig, GeneratorConfig
from cmml_cli.models.modulation import ModulationConfig
from cmml_cli.utils.exceptions import ConfigurationError


class DataConfig(BaseModel):
    """Interaction ingestion and task construction."""

    model_config = ConfigDict(extra="forbid")

    setting: Literal["scenario", "user"] = "scenario"
    ratings_paths: List[str] = Field(default_factory=list)
    label_mode: Literal["implicit", "rating"] = "implicit"
    rating_min: float = 1.0
    rating_max: float = 5.0
    user_column: str = "user_id"
    item_column: str = "item_id"
    label_column: str = "rating"
    timestamp_column: str = "timestamp"
    scenario_column: str = "scenario_id"
    max_skip_fraction: float = 0.10
    min_items: int = 100
    max_items: int = 1000
    train_ratio: float = 0.75
    support_fraction: float = 1.0 / 3.0
    per_user_cap: int = 50
    query_size: int = 10
    n_pos_support: int = 64
    n_query: int = 128


class MFConfig(BaseModel):
    """Matrix factorization pretraining of frozen embeddings."""

    model_config = ConfigDict(extra="forbid")

    dim: int = 32
    epochs: int = 20
    lr: float = 0.01
    reg: float = 0.01


class EvaluationConfig(BaseModel):
    """Evaluation protocol."""

    model_config = ConfigDict(extra="forbid")

    checkpoint: Literal["best", "last"] = "best"
    recall_n: List[int] = Field(default_factory=lambda: [10, 20, 50])
    ndcg_k: int = 3
    zero_context: bool = False
    split: Literal["meta-test", "meta-train"] = "meta-test"


class BenchConfig(BaseModel):
    """Inference cost benchmark."""

    model_config = ConfigDict(extra="forbid")

    m_values: List[int] = Field(default_factory=lambda: [256])
    k_values: List[int] = Field(default_factory=lambda: [1, 5, 10, 20])
    repeats: int = 5
    warmup_runs: int = 2
    max_timer_fraction: float = 0.05


class AblationConfig(BaseModel):
    """Multi-seed ablation on synthetic tasks."""

    model_config = ConfigDict(extra="forbid")

    variants: List[str] = Field(default_factory=lambda: ["pooling-mean/dot", "sequential/dot"])
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    reference: str = "sequential/dot"
    challenger: str = "pooling-mean/dot"


class LoggingConfig(BaseModel):
    """Logging configuration."""

    model_config = ConfigDict(extra="forbid")

    level: str = "INFO"
    console_enabled: bool = True
    file_enabled: bool = False
    file_name: str = "cmml.log"
    file_rotation: str = "100 MB"
    file_retention: str = "30 days"


class Settings(BaseSettings):
    """Run configuration shared by every command."""

    model_config = SettingsConfigDict(
        env_prefix="CMML_",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="forbid",
    )

    seed: int = 0
    output_dir: str = "./runs/default"

    data: DataConfig = Field(default_factory=DataConfig)
    synthetic: SyntheticTaskSpec = Field(default_factory=SyntheticTaskSpec)
    mf: MFConfig = Field(default_factory=MFConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    modulation: ModulationConfig = Field(default_factory=ModulationConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @property
    def output_path(self) -> Path:
        """Root directory of every artifact written by a command."""
        return Path(self.output_dir)

    @classmethod
    def from_yaml(
        cls,
        yaml_path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "Settings":
        """Load settings with precedence overrides > file > defaults."""
        config_dict: Dict[str, Any] = {}
        if yaml_path is not None:
            path = Path(yaml_path)
            if not path.exists():
                raise ConfigurationError(f"Config file not found: {path}")
            try:
                with open(path, "r", encoding="utf-8") as f:
                    loaded = yaml.safe_load(f)
            except yaml.YAMLError as e:
                mark = getattr(e, "problem_mark", None)
                line = mark.line + 1 if mark is not None else None
                problem = getattr(e, "problem", e)
                raise ConfigurationError(f"Cannot parse {path}: {problem}", line=line)
            if loaded is not None and not isinstance(loaded, dict):
                raise ConfigurationError(f"Top level of {path} must be a mapping")
            config_dict = loaded or {}

        for dotted, value in (overrides or {}).items():
            _set_dotted(config_dict, dotted, value)

        try:
            return cls(**config_dict)
        except PydanticValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(part) for part in first["loc"])
            raise ConfigurationError(first["msg"], key=key)


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    parts = [part for part in dotted.replace("-", "_").split(".") if part]
    if not parts:
        raise ConfigurationError("Empty override key")
    node = target
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError("Override descends into a scalar", key=dotted)
        node = child
    node[parts[-1]] = value


def parse_overrides(tokens: List[str]) -> Dict[str, Any]:
    """Parse flat ``--key=value`` tokens into a dotted-key mapping."""
    overrides: Dict[str, Any] = {}
    for token in tokens:
        if not token.startswith("--") or "=" not in token:
            raise ConfigurationError(f"Override must look like --key=value, got '{token}'")
        key, raw = token[2:].split("=", 1)
        try:
            overrides[key] = yaml.safe_load(raw) if raw != "" else ""
        except yaml.YAMLError:
            overrides[key] = raw
    return overrides


def split_variant(label: str) -> Tuple[str, str]:
    """Split an ablation label ``encoder/generator`` into its parts."""
    if "/" not in label:
        raise ConfigurationError(f"Variant label must be 'encoder/generator', got '{label}'")
    encoder, generator = label.split("/", 1)
    return encoder, generator


# Default settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get default settings instance."""
    return settings
