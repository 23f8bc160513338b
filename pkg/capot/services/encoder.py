from __future__ import annotations

import logging
import struct
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.utils import murmurhash3_32

from ..errors import DataError, FrozenEncoderError

logger = logging.getLogger(__name__)

DEFAULT_NUM_BUCKETS = 2**18
NGRAM_SIZES = (3, 4, 5)

MODEL_MAGIC = b"CPEN"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHIIB")

# Upper bound on gathered (column, row) pairs per chunk in embed_batch.
_MAX_CHUNK_NNZ = 250_000


@dataclass(frozen=True)
class FeatureVector:
    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls) -> "FeatureVector":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class EncoderParams:
    projection: np.ndarray
    frozen: bool = False

    @property
    def embedding_dim(self) -> int:
        return int(self.projection.shape[0])

    @property
    def num_buckets(self) -> int:
        return int(self.projection.shape[1])


@dataclass(frozen=True)
class SparseGradient:
    """Gradient of a loss w.r.t. the projection, restricted to touched columns."""

    columns: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class BatchEmbedding:
    embeddings: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray


def char_ngrams(token: str) -> list[str]:
    """Raw 3-5-grams of a token plus its two boundary grams and whole-token marker."""
    grams = [token[i : i + n] for n in NGRAM_SIZES for i in range(len(token) - n + 1)]
    grams.append("<" + token[:2])
    grams.append(token[-2:] + ">")
    grams.append("<" + token + ">")
    return grams


@lru_cache(maxsize=200_000)
def _token_buckets(token: str, num_buckets: int) -> tuple[int, ...]:
    return tuple(murmurhash3_32(gram, seed=0, positive=True) % num_buckets for gram in char_ngrams(token))


def featurize(text: str, max_tokens: int, num_buckets: int = DEFAULT_NUM_BUCKETS) -> FeatureVector:
    tokens = text.lower().split()[:max_tokens]
    if not tokens:
        return FeatureVector.empty()
    counts: Counter[int] = Counter()
    for token in tokens:
        counts.update(_token_buckets(token, num_buckets))
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[index] for index in indices.tolist()], dtype=np.float64)
    return FeatureVector(indices, values)


def featurize_all(texts: Sequence[str], max_tokens: int, num_buckets: int) -> list[FeatureVector]:
    return [featurize(text, max_tokens, num_buckets) for text in texts]


def init_params(embedding_dim: int, num_buckets: int, seed: int) -> EncoderParams:
    if embedding_dim < 1 or num_buckets < 1:
        raise DataError("embedding_dim and num_buckets must be positive")
    rng = np.random.default_rng(seed)
    scale = np.float32(1.0 / np.sqrt(num_buckets))
    uniform = rng.random((embedding_dim, num_buckets), dtype=np.float32)
    projection = (uniform * np.float32(2.0) - np.float32(1.0)) * scale
    return EncoderParams(projection=np.ascontiguousarray(projection, dtype=np.float32))


def clone_frozen(params: EncoderParams) -> EncoderParams:
    projection = params.projection.copy()
    projection.setflags(write=False)
    return EncoderParams(projection=projection, frozen=True)


def clone_trainable(params: EncoderParams) -> EncoderParams:
    return EncoderParams(projection=params.projection.copy(), frozen=False)


def _check_range(params: EncoderParams, fv: FeatureVector) -> None:
    if len(fv) and (fv.indices[0] < 0 or fv.indices[-1] >= params.num_buckets):
        raise DataError(f"feature index out of range for {params.num_buckets} buckets")


def embed(params: EncoderParams, fv: FeatureVector) -> np.ndarray:
    _check_range(params, fv)
    if not len(fv):
        return np.zeros(params.embedding_dim, dtype=np.float64)
    pre_norm = params.projection[:, fv.indices].astype(np.float64) @ fv.values
    norm = float(np.linalg.norm(pre_norm))
    if norm == 0.0:
        return np.zeros(params.embedding_dim, dtype=np.float64)
    return pre_norm / norm


def embed_batch(params: EncoderParams, fvs: Sequence[FeatureVector]) -> BatchEmbedding:
    """Embed many feature vectors; rows for empty inputs are zero."""
    count = len(fvs)
    pre_norm = np.zeros((count, params.embedding_dim), dtype=np.float64)

    start = 0
    while start < count:
        stop, nnz = start, 0
        while stop < count and (stop == start or nnz + len(fvs[stop]) <= _MAX_CHUNK_NNZ):
            nnz += len(fvs[stop])
            stop += 1
        _project_chunk(params, fvs, start, stop, pre_norm)
        start = stop

    norms = np.linalg.norm(pre_norm, axis=1)
    embeddings = np.zeros_like(pre_norm)
    nonzero = norms > 0
    embeddings[nonzero] = pre_norm[nonzero] / norms[nonzero, None]
    return BatchEmbedding(embeddings=embeddings, pre_norm=pre_norm, norms=norms)


def _project_chunk(
    params: EncoderParams,
    fvs: Sequence[FeatureVector],
    start: int,
    stop: int,
    out: np.ndarray,
) -> None:
    rows = [row for row in range(start, stop) if len(fvs[row])]
    if not rows:
        return
    for row in rows:
        _check_range(params, fvs[row])
    lengths = np.array([len(fvs[row]) for row in rows])
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    columns = np.concatenate([fvs[row].indices for row in rows])
    values = np.concatenate([fvs[row].values for row in rows])
    weighted = params.projection[:, columns].astype(np.float64) * values
    out[rows] = np.add.reduceat(weighted, offsets, axis=1).T


def projection_gradient(
    params: EncoderParams,
    fvs: Sequence[FeatureVector],
    batch: BatchEmbedding,
    grad_embeddings: np.ndarray,
) -> SparseGradient:
    """Backpropagate d loss / d embedding through L2 normalisation and the sparse projection."""
    grad_embeddings = np.asarray(grad_embeddings, dtype=np.float64)
    if grad_embeddings.shape != batch.embeddings.shape:
        raise DataError("gradient shape does not match the embedded batch")

    radial = np.einsum("ij,ij->i", batch.embeddings, grad_embeddings)
    grad_pre_norm = np.zeros_like(grad_embeddings)
    nonzero = batch.norms > 0
    grad_pre_norm[nonzero] = (
        grad_embeddings[nonzero] - batch.embeddings[nonzero] * radial[nonzero, None]
    ) / batch.norms[nonzero, None]

    rows = [row for row in range(len(fvs)) if len(fvs[row]) and nonzero[row]]
    if not rows:
        return SparseGradient(np.zeros(0, dtype=np.int64), np.zeros((params.embedding_dim, 0)))

    row_ids = np.concatenate([np.full(len(fvs[row]), row) for row in rows])
    columns = np.concatenate([fvs[row].indices for row in rows])
    values = np.concatenate([fvs[row].values for row in rows])

    order = np.argsort(columns, kind="stable")
    sorted_columns = columns[order]
    starts = np.flatnonzero(np.r_[True, sorted_columns[1:] != sorted_columns[:-1]])
    contributions = grad_pre_norm[row_ids[order]] * values[order, None]
    accumulated = np.add.reduceat(contributions, starts, axis=0)
    return SparseGradient(sorted_columns[starts], accumulated.T)


def apply_gradient(params: EncoderParams, gradient: SparseGradient, learning_rate: float) -> None:
    """Plain SGD step: W[:, cols] <- W[:, cols] - lr * grad."""
    if params.frozen:
        raise FrozenEncoderError("cannot update a frozen encoder")
    if gradient.columns.size == 0:
        return
    current = params.projection[:, gradient.columns].astype(np.float64)
    params.projection[:, gradient.columns] = (current - learning_rate * gradient.values).astype(np.float32)


def encode_texts(params: EncoderParams, texts: Sequence[str], max_tokens: int) -> np.ndarray:
    fvs = featurize_all(texts, max_tokens, params.num_buckets)
    return embed_batch(params, fvs).embeddings


def save_model(params: EncoderParams, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, params.embedding_dim, params.num_buckets, int(params.frozen)
    )
    matrix = np.ascontiguousarray(params.projection, dtype="<f4")
    with open(target, "wb") as handle:
        handle.write(header)
        handle.write(matrix.tobytes(order="C"))


def load_model(path: str | Path) -> EncoderParams:
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"model file not found: {path}") from exc
    if len(payload) < _MODEL_HEADER.size:
        raise DataError(f"model file {path} is truncated")

    magic, version, dim, buckets, frozen = _MODEL_HEADER.unpack_from(payload)
    if magic != MODEL_MAGIC:
        raise DataError(f"model file {path} has bad magic bytes")
    if version != MODEL_VERSION:
        raise DataError(f"model file {path} has unsupported version {version}")
    expected = _MODEL_HEADER.size + dim * buckets * 4
    if len(payload) != expected:
        raise DataError(f"model file {path} is truncated: expected {expected} bytes, got {len(payload)}")

    projection = np.frombuffer(payload, dtype="<f4", offset=_MODEL_HEADER.size).reshape(dim, buckets)
    projection = projection.astype(np.float32, copy=True)
    params = EncoderParams(projection=projection, frozen=bool(frozen))
    if params.frozen:
        params.projection.setflags(write=False)
    return params
