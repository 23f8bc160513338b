from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from ..errors import DataError
from ..models import Passage
from .encoder import EncoderParams, encode_texts

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"CPIX"
INDEX_VERSION = 1
KMEANS_ITERATIONS = 25

_HEADER = struct.Struct("<4sHIIB")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class IvfStructure:
    centroids: np.ndarray
    posting_lists: tuple[np.ndarray, ...]

    @property
    def num_centroids(self) -> int:
        return int(self.centroids.shape[0])


@dataclass(frozen=True)
class DocumentIndex:
    ids: tuple[str, ...]
    vectors: np.ndarray
    ivf: Optional[IvfStructure] = None
    id_rank: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate passage id in index")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise DataError("index vector count does not match id count")
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))
        object.__setattr__(self, "id_rank", rank)

    @property
    def num_docs(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class SearchResult:
    ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def pairs(self) -> list[tuple[str, float]]:
        return list(zip(self.ids, self.scores))


def build_index(document_params: EncoderParams, passages: Sequence[Passage], max_tokens: int = 128) -> DocumentIndex:
    if not passages:
        raise DataError("no passages")
    ids = tuple(passage.id for passage in passages)
    seen: set[str] = set()
    for passage_id in ids:
        if passage_id in seen:
            raise DataError(f"duplicate passage id: {passage_id}")
        seen.add(passage_id)
    vectors = encode_texts(document_params, [passage.text for passage in passages], max_tokens)
    logger.info("Built index over %d passages (dim=%d)", len(ids), vectors.shape[1])
    return DocumentIndex(ids=ids, vectors=vectors.astype(np.float32))


def _scores(vectors: np.ndarray, query: np.ndarray) -> np.ndarray:
    # Row-wise products summed along the last axis, so a row's score does not
    # depend on which other rows are scored with it.
    return (vectors.astype(np.float64) * query).sum(axis=1)


def _check_query(index: DocumentIndex, query_vector: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise DataError("k must be at least 1")
    query = np.asarray(query_vector, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dim:
        raise DataError(f"query dimension {query.shape[0]} does not match index dimension {index.dim}")
    return query


def _top_k(index: DocumentIndex, rows: np.ndarray, scores: np.ndarray, k: int) -> SearchResult:
    if rows.size == 0:
        return SearchResult((), ())
    if k < rows.size:
        threshold = np.partition(-scores, k - 1)[k - 1]
        keep = np.flatnonzero(-scores <= threshold)
        rows, scores = rows[keep], scores[keep]
    order = np.lexsort((index.id_rank[rows], -scores))[:k]
    return SearchResult(
        ids=tuple(index.ids[row] for row in rows[order].tolist()),
        scores=tuple(float(score) for score in scores[order]),
    )


def search_exact(index: DocumentIndex, query_vector: np.ndarray, k: int) -> SearchResult:
    query = _check_query(index, query_vector, k)
    rows = np.arange(index.num_docs)
    return _top_k(index, rows, _scores(index.vectors, query), k)


def build_ivf(index: DocumentIndex, num_centroids: int, seed: int) -> DocumentIndex:
    """Attach a k-means coarse quantizer; returns a new index, the input is untouched."""
    if num_centroids < 1:
        raise DataError("num_centroids must be at least 1")
    if num_centroids > index.num_docs:
        raise DataError(f"num_centroids {num_centroids} exceeds document count {index.num_docs}")

    kmeans = KMeans(
        n_clusters=num_centroids,
        init="k-means++",
        n_init=1,
        max_iter=KMEANS_ITERATIONS,
        tol=0.0,
        random_state=seed % (2**32),
    )
    kmeans.fit(index.vectors)
    centroids = np.ascontiguousarray(kmeans.cluster_centers_, dtype=np.float32)

    assignment = np.argmin(_centroid_distances(centroids, index.vectors.astype(np.float64)), axis=1)
    posting_lists = tuple(np.flatnonzero(assignment == c).astype(np.int64) for c in range(num_centroids))
    logger.info(
        "Built IVF with %d centroids (largest list %d)",
        num_centroids,
        max(len(postings) for postings in posting_lists),
    )
    return replace(index, ivf=IvfStructure(centroids=centroids, posting_lists=posting_lists))


def _centroid_distances(centroids: np.ndarray, points: np.ndarray) -> np.ndarray:
    centers = centroids.astype(np.float64)
    squared = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return squared


def search_ivf(index: DocumentIndex, query_vector: np.ndarray, k: int, nprobe: int) -> SearchResult:
    if index.ivf is None:
        raise DataError("index has no IVF structure")
    query = _check_query(index, query_vector, k)
    if not 1 <= nprobe <= index.ivf.num_centroids:
        raise DataError(f"nprobe must be in [1, {index.ivf.num_centroids}]")

    distances = _centroid_distances(index.ivf.centroids, query[None, :])[0]
    nearest = np.lexsort((np.arange(distances.size), distances))[:nprobe]
    rows = np.sort(np.concatenate([index.ivf.posting_lists[c] for c in nearest]))
    return _top_k(index, rows, _scores(index.vectors[rows], query), k)


def search_batch(
    index: DocumentIndex, query_vectors: np.ndarray, k: int, nprobe: Optional[int] = None
) -> list[SearchResult]:
    if nprobe is None or index.ivf is None:
        return [search_exact(index, vector, k) for vector in query_vectors]
    return [search_ivf(index, vector, k, nprobe) for vector in query_vectors]


def save_index(index: DocumentIndex, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.num_docs, index.dim, int(index.ivf is not None))]
    for passage_id in index.ids:
        encoded = passage_id.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
    chunks.append(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    if index.ivf is not None:
        chunks.append(_U32.pack(index.ivf.num_centroids))
        chunks.append(np.ascontiguousarray(index.ivf.centroids, dtype="<f4").tobytes())
        for postings in index.ivf.posting_lists:
            chunks.append(_U32.pack(len(postings)))
            chunks.append(np.asarray(postings, dtype="<u4").tobytes())
    target.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, payload: bytes, path: str | Path):
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise DataError(f"index file {self.path} is truncated")
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()


def load_index(path: str | Path) -> DocumentIndex:
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"index file not found: {path}") from exc

    reader = _Reader(payload, path)
    magic, version, num_docs, dim, has_ivf = _HEADER.unpack(reader.take(_HEADER.size))
    if magic != INDEX_MAGIC:
        raise DataError(f"index file {path} has bad magic bytes")
    if version != INDEX_VERSION:
        raise DataError(f"index file {path} has unsupported version {version}")

    ids = []
    for _ in range(num_docs):
        try:
            ids.append(reader.take(reader.u32()).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"index file {path} has a corrupt id table") from exc
    vectors = reader.array("<f4", num_docs * dim).reshape(num_docs, dim).astype(np.float32)

    ivf = None
    if has_ivf:
        num_centroids = reader.u32()
        centroids = reader.array("<f4", num_centroids * dim).reshape(num_centroids, dim).astype(np.float32)
        posting_lists = tuple(reader.array("<u4", reader.u32()).astype(np.int64) for _ in range(num_centroids))
        covered = np.sort(np.concatenate(posting_lists)) if posting_lists else np.zeros(0, dtype=np.int64)
        if not np.array_equal(covered, np.arange(num_docs)):
            raise DataError(f"index file {path} has posting lists that do not partition the documents")
        ivf = IvfStructure(centroids=centroids, posting_lists=posting_lists)

    if reader.offset != len(payload):
        raise DataError(f"index file {path} has trailing bytes")
    return DocumentIndex(ids=tuple(ids), vectors=vectors, ivf=ivf)
