from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Iterable, Literal, Optional

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from .errors import ConfigError
from .models import NOISE_TYPES, TYPO_TYPES, LossWeights, NoiseConfig, TrainConfig


class Settings(BaseSettings):
    """Run configuration: every knob of every module, flat.

    Loaded from CAPOT_* environment variables and `.env`; RunConfig files and
    `--set` overrides are passed as init values and win over both.
    """

    model_config = SettingsConfigDict(
        env_prefix="CAPOT_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    master_seed: int = 7

    # Paths
    output_dir: str = "./runs"
    log_file: str = "./runs/capot.log"
    log_level: str = "WARNING"
    cache_dir: str = "./runs/cache"
    synonyms_path: Optional[str] = None
    lemmas_path: Optional[str] = None
    lemma_rules_path: Optional[str] = None
    determiners_path: Optional[str] = None
    stopwords_path: Optional[str] = None
    keyboard_path: Optional[str] = None

    # Noise
    noise_types: Annotated[list[str], NoDecode] = Field(default_factory=lambda: list(NOISE_TYPES))
    max_stem_lemma_words: int = 5
    placement_left: float = 1 / 3
    placement_right: float = 1 / 3
    placement_at: float = 1 / 3
    noise_workers: int = 4

    # Encoder
    embedding_dim: int = 64
    num_buckets: int = 2**18
    query_max_tokens: int = 28
    passage_max_tokens: int = 128
    share_tower_init: bool = True

    # Baseline / DA training
    batch_size: int = 32
    learning_rate: float = 1e-6
    epochs: int = 50
    negatives_per_positive: int = 1
    score_scale: float = 10.0

    # Alignment (CAPOT and PT stage 1)
    align_batch_size: int = 32
    align_learning_rate: float = 1e-5
    align_epochs: int = 3
    align_noise_rounds: int = Field(default=100, ge=1)
    align_noise_types: Annotated[list[str], NoDecode] = Field(default_factory=lambda: list(TYPO_TYPES))
    pretrain_epochs: int = 1
    tau_positive: float = 1.0
    tau_negative: float = 0.1
    tau_anchor: float = 2.0
    tau_ranking: float = 1.0
    tau_contrastive: float = 1.0
    eps_contrastive: float = 0.5
    eps_anchor: float = 0.0
    eps_ranking: float = 0.1

    # Index
    ivf_centroids: int = 0
    ivf_nprobe: int = 8

    # Evaluation
    eval_depths: Annotated[list[int], NoDecode] = Field(default_factory=lambda: [20, 100, 200])
    mrr_depth: int = 10

    # Rewrite service
    rewrite_backend: Literal["stub", "http"] = "stub"
    rewrite_endpoint: str = ""
    rewrite_timeout_seconds: int = 30
    rewrite_max_retries: int = 3

    # Synthetic corpus
    synth_num_queries: int = 500
    synth_vocab_size: int = 500
    synth_seed: int = 7
    synth_dev_fraction: float = 0.2
    external_seed: int = 13

    @field_validator("noise_types", "align_noise_types", mode="before")
    @classmethod
    def _split_types(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("noise_types", "align_noise_types")
    @classmethod
    def _known_types(cls, value: list[str]) -> list[str]:
        unknown = [item for item in value if item not in NOISE_TYPES]
        if unknown:
            raise ValueError(f"unknown noise types: {', '.join(unknown)}")
        return value

    @field_validator("eval_depths", mode="before")
    @classmethod
    def _split_depths(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [int(item) for item in value.split(",") if item.strip()]
        return value

    @field_validator("eval_depths")
    @classmethod
    def _positive_depths(cls, value: list[int]) -> list[int]:
        if not value or any(depth < 1 for depth in value):
            raise ValueError("eval depths must be positive")
        return sorted(set(value))

    def resolve_paths(self) -> None:
        output_dir = Path(self.output_dir).expanduser().resolve()
        cache_dir = Path(self.cache_dir).expanduser().resolve()
        log_path = Path(self.log_file).expanduser().resolve()

        self.output_dir = str(output_dir)
        self.cache_dir = str(cache_dir)
        self.log_file = str(log_path)

        output_dir.mkdir(parents=True, exist_ok=True)
        cache_dir.mkdir(parents=True, exist_ok=True)
        log_path.parent.mkdir(parents=True, exist_ok=True)

    def noise_config(self, types: Optional[Iterable[str]] = None, seed: Optional[int] = None) -> NoiseConfig:
        return _validated(
            NoiseConfig,
            enabled_types=list(types if types is not None else self.noise_types),
            master_seed=self.master_seed if seed is None else seed,
            max_stem_lemma_words=self.max_stem_lemma_words,
            placement_probabilities=(self.placement_left, self.placement_right, self.placement_at),
        )

    def loss_weights(self) -> LossWeights:
        return _validated(
            LossWeights,
            tau_positive=self.tau_positive,
            tau_negative=self.tau_negative,
            tau_anchor=self.tau_anchor,
            tau_ranking=self.tau_ranking,
            tau_contrastive=self.tau_contrastive,
            eps_contrastive=self.eps_contrastive,
            eps_anchor=self.eps_anchor,
            eps_ranking=self.eps_ranking,
        )

    def train_config(self, regime: str = "baseline") -> TrainConfig:
        aligning = regime == "capot"
        return _validated(
            TrainConfig,
            regime=regime,
            batch_size=self.align_batch_size if aligning else self.batch_size,
            learning_rate=self.align_learning_rate if aligning else self.learning_rate,
            epochs=self.align_epochs if aligning else self.epochs,
            negatives_per_positive=self.negatives_per_positive,
            seed=self.master_seed,
            score_scale=self.score_scale,
            embedding_dim=self.embedding_dim,
            num_buckets=self.num_buckets,
            query_max_tokens=self.query_max_tokens,
            passage_max_tokens=self.passage_max_tokens,
            share_tower_init=self.share_tower_init,
            loss_weights=self.loss_weights(),
        )

    def pretrain_config(self) -> TrainConfig:
        """Stage-1 alignment settings for the PT regime."""
        config = self.train_config("capot")
        return config.model_copy(update={"regime": "pt", "epochs": self.pretrain_epochs})

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_run_config(lines: Iterable[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_run_config(path: Optional[str] = None, overrides: Optional[dict[str, str]] = None) -> Settings:
    """Build Settings from an optional key=value file plus overrides; unknown keys are rejected."""
    values: dict[str, str] = {}
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_run_config(config_path.read_text(encoding="utf-8").splitlines()))
    values.update(overrides or {})

    unknown = sorted(key for key in values if key not in Settings.model_fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return Settings(**values)
    except ValidationError as exc:
        raise ConfigError(_first_error(exc)) from exc


def _validated(model: type, **values: Any) -> Any:
    try:
        return model(**values)
    except ValidationError as exc:
        raise ConfigError(_first_error(exc)) from exc


def _first_error(exc: ValidationError) -> str:
    errors = exc.errors()
    if not errors:
        return str(exc)
    first = errors[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    return f"{location}: {first.get('msg', 'invalid value')}" if location else first.get("msg", "invalid value")
