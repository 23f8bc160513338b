from __future__ import annotations

import numpy as np
import pytest

from capot.config import Settings
from capot.models import LossWeights, TrainConfig
from capot.runtime import Runtime
from capot.services.synthetic import generate_synthetic_corpus, split_queries
from capot.services.text_resources import load_resources

SMALL_BUCKETS = 4096


@pytest.fixture(scope="session")
def resources():
    return load_resources()


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic_corpus(num_queries=40, vocab_size=120, seed=3)


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return split_queries(tiny_corpus.queries, 0.25, seed=3)


@pytest.fixture
def small_config() -> TrainConfig:
    return TrainConfig(
        batch_size=8,
        learning_rate=0.05,
        epochs=3,
        embedding_dim=16,
        num_buckets=SMALL_BUCKETS,
        seed=11,
        loss_weights=LossWeights(),
    )


@pytest.fixture
def settings(tmp_path) -> Settings:
    values = dict(
        output_dir=str(tmp_path / "runs"),
        cache_dir=str(tmp_path / "runs" / "cache"),
        log_file=str(tmp_path / "runs" / "capot.log"),
        embedding_dim=16,
        num_buckets=SMALL_BUCKETS,
        epochs=2,
        align_epochs=2,
        align_noise_rounds=2,
        pretrain_epochs=1,
        batch_size=8,
        align_batch_size=8,
        noise_workers=1,
        synth_num_queries=30,
        synth_vocab_size=100,
    )
    return Settings(**values)


@pytest.fixture
def runtime(settings) -> Runtime:
    settings.resolve_paths()
    return Runtime(settings=settings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
