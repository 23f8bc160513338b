from __future__ import annotations

import math
import unicodedata
from datetime import datetime, timezone
from typing import Any, Literal, Optional, get_args

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

NoiseType = Literal[
    "determiner",
    "synonym",
    "lemmatize",
    "stem",
    "rcs",
    "kcs",
    "cd",
    "rw",
    "bt",
    "paraphrase",
]
NOISE_TYPES: tuple[str, ...] = get_args(NoiseType)
TYPO_TYPES: tuple[str, ...] = ("rcs", "kcs", "cd")
REWRITE_TYPES: tuple[str, ...] = ("bt", "paraphrase")
OFFLINE_TYPES: tuple[str, ...] = tuple(t for t in NOISE_TYPES if t not in REWRITE_TYPES)

Regime = Literal["baseline", "da", "pt", "capot"]
RewriteMode = Literal["back_translation", "paraphrase"]

MAX_SEED = 2**64 - 1


class Query(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    text: str

    @field_validator("text")
    @classmethod
    def _normalize_text(cls, value: str) -> str:
        value = unicodedata.normalize("NFC", value)
        if not value.strip():
            raise ValueError("query text is empty")
        return value


class Passage(Query):
    pass


class NoisedQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    anchor_id: str = Field(min_length=1)
    noise_type: NoiseType
    text: str = Field(min_length=1)
    seed: int = Field(ge=0, le=MAX_SEED)

    @property
    def record_id(self) -> str:
        return f"{self.anchor_id}::{self.noise_type}"


class NoiseConfig(BaseModel):
    enabled_types: list[NoiseType] = Field(default_factory=lambda: list(NOISE_TYPES), min_length=1)
    master_seed: int = Field(default=7, ge=0, le=MAX_SEED)
    max_stem_lemma_words: int = Field(default=5, ge=1)
    placement_probabilities: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    @field_validator("enabled_types")
    @classmethod
    def _dedupe(cls, value: list[str]) -> list[str]:
        seen: list[str] = []
        for item in value:
            if item not in seen:
                seen.append(item)
        return seen

    @field_validator("placement_probabilities")
    @classmethod
    def _check_probabilities(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(p < 0 or not math.isfinite(p) for p in value):
            raise ValueError("placement probabilities must be finite and nonnegative")
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError("placement probabilities must sum to 1")
        return value


class LossWeights(BaseModel):
    """Weights and margins of the contrastive, anchor and ranking terms."""

    tau_positive: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    tau_negative: float = Field(default=0.1, ge=0, allow_inf_nan=False)
    tau_anchor: float = Field(default=2.0, ge=0, allow_inf_nan=False)
    tau_ranking: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    tau_contrastive: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    eps_contrastive: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    eps_anchor: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    eps_ranking: float = Field(default=0.1, ge=0, allow_inf_nan=False)

    @classmethod
    def nq_preset(cls) -> "LossWeights":
        return cls(tau_positive=2.0, tau_negative=0.2, tau_anchor=2.0, tau_ranking=0.7)

    @classmethod
    def pretraining_preset(cls) -> "LossWeights":
        return cls(tau_positive=1.0, tau_negative=0.1, tau_anchor=1.0)

    def as_config_section(self) -> dict[str, str]:
        return {key: repr(value) for key, value in self.model_dump().items()}


class TrainConfig(BaseModel):
    regime: Regime = "baseline"
    batch_size: int = Field(default=32, ge=2)
    learning_rate: float = Field(default=1e-6, gt=0, allow_inf_nan=False)
    epochs: int = Field(default=50, ge=0)
    negatives_per_positive: int = Field(default=1, ge=0)
    seed: int = Field(default=7, ge=0, le=MAX_SEED)
    score_scale: float = Field(default=10.0, gt=0, allow_inf_nan=False)
    embedding_dim: int = Field(default=64, ge=1)
    num_buckets: int = Field(default=2**18, ge=1)
    query_max_tokens: int = Field(default=28, ge=1)
    passage_max_tokens: int = Field(default=128, ge=1)
    share_tower_init: bool = True
    loss_weights: LossWeights = Field(default_factory=LossWeights)


class TrainingTriple(BaseModel):
    model_config = ConfigDict(frozen=True)

    query: Query
    positive_passage_id: str
    negative_passage_ids: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _positive_not_negative(self) -> "TrainingTriple":
        if self.positive_passage_id in self.negative_passage_ids:
            raise ValueError("positive passage listed among negatives")
        return self


class AlignmentTriple(BaseModel):
    model_config = ConfigDict(frozen=True)

    anchor: Query
    positive: NoisedQuery
    negative: Query

    @model_validator(mode="after")
    def _check_roles(self) -> "AlignmentTriple":
        if self.negative.id == self.anchor.id:
            raise ValueError("negative query equals anchor")
        if self.positive.anchor_id != self.anchor.id:
            raise ValueError("positive does not belong to anchor")
        return self


class RewriteRequest(BaseModel):
    text: str = Field(min_length=1)
    mode: RewriteMode


class RewriteResponse(BaseModel):
    text: str = Field(min_length=1)
    backend: str = Field(min_length=1)

    @field_validator("text")
    @classmethod
    def _not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("rewrite response is empty")
        return value


class RunManifest(BaseModel):
    command: str
    regime: Optional[str] = None
    config_hash: str
    settings: dict[str, Any]
    seeds: dict[str, int] = Field(default_factory=dict)
    inputs: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)
    extra: dict[str, Any] = Field(default_factory=dict)
    started_at: str
    finished_at: Optional[str] = None
    wall_clock_seconds: Optional[float] = None


def iso_now() -> str:
    return datetime.now(timezone.utc).isoformat()
