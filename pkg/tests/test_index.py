from __future__ import annotations

import numpy as np
import pytest

from capot.errors import DataError
from capot.models import Passage
from capot.services.encoder import init_params
from capot.services.index import (
    DocumentIndex,
    build_index,
    build_ivf,
    load_index,
    save_index,
    search_batch,
    search_exact,
    search_ivf,
)
from tests.conftest import unit_rows

DEPTHS = (20, 100, 200)


def _naive_scan(index: DocumentIndex, query: np.ndarray, k: int) -> list[str]:
    scored = []
    for row, passage_id in enumerate(index.ids):
        score = float(sum(float(index.vectors[row, j]) * float(query[j]) for j in range(index.dim)))
        scored.append((-score, passage_id))
    scored.sort()
    return [passage_id for _, passage_id in scored[:k]]


@pytest.fixture(scope="module")
def random_index() -> DocumentIndex:
    rng = np.random.default_rng(5)
    vectors = unit_rows(rng, 1000, 16).astype(np.float32)
    ids = tuple(f"d{number:04d}" for number in rng.permutation(1000))
    return DocumentIndex(ids=ids, vectors=vectors)


def test_exact_search_matches_naive_scan(random_index):
    rng = np.random.default_rng(6)
    for query in unit_rows(rng, 100, 16):
        for k in DEPTHS:
            result = search_exact(random_index, query, k)
            assert list(result.ids) == _naive_scan(random_index, query, k)
            assert list(result.scores) == sorted(result.scores, reverse=True)


def test_ties_break_by_passage_id():
    vectors = np.tile(np.array([[1.0, 0.0]], dtype=np.float32), (4, 1))
    index = DocumentIndex(ids=("d3", "d1", "d2", "d0"), vectors=vectors)
    assert search_exact(index, np.array([1.0, 0.0]), 3).ids == ("d0", "d1", "d2")


def test_k_larger_than_corpus_returns_everything(random_index):
    assert len(search_exact(random_index, np.ones(16) / 4.0, 5000)) == 1000


def test_searching_every_list_equals_exact_search(random_index):
    ivf_index = build_ivf(random_index, 16, seed=1)
    rng = np.random.default_rng(7)
    for query in unit_rows(rng, 30, 16):
        exact = search_exact(ivf_index, query, 20)
        assert search_ivf(ivf_index, query, 20, nprobe=16) == exact


def test_ivf_recall_is_monotone_in_nprobe(random_index):
    ivf_index = build_ivf(random_index, 16, seed=1)
    rng = np.random.default_rng(8)
    queries = unit_rows(rng, 40, 16)
    recalls = []
    for nprobe in (1, 2, 4, 8, 16):
        hits = 0
        for query in queries:
            truth = set(search_exact(ivf_index, query, 20).ids)
            hits += len(truth & set(search_ivf(ivf_index, query, 20, nprobe).ids))
        recalls.append(hits / (20 * len(queries)))
    assert recalls == sorted(recalls)
    assert recalls[-1] == 1.0


def test_ivf_posting_lists_partition_documents(random_index):
    ivf_index = build_ivf(random_index, 10, seed=2)
    assert random_index.ivf is None
    covered = np.sort(np.concatenate(ivf_index.ivf.posting_lists))
    assert np.array_equal(covered, np.arange(1000))


def test_ivf_validation(random_index):
    with pytest.raises(DataError):
        build_ivf(random_index, 0, seed=1)
    with pytest.raises(DataError):
        build_ivf(random_index, 1001, seed=1)
    with pytest.raises(DataError, match="no IVF"):
        search_ivf(random_index, np.ones(16), 5, 1)
    ivf_index = build_ivf(random_index, 4, seed=1)
    with pytest.raises(DataError, match="nprobe"):
        search_ivf(ivf_index, np.ones(16), 5, 5)


def test_query_dimension_and_k_are_checked(random_index):
    with pytest.raises(DataError, match="dimension"):
        search_exact(random_index, np.ones(3), 5)
    with pytest.raises(DataError):
        search_exact(random_index, np.ones(16), 0)


def test_build_index_from_passages():
    params = init_params(8, 512, seed=1)
    passages = [Passage(id="p2", text="red apples"), Passage(id="p1", text="green pears")]
    index = build_index(params, passages, max_tokens=128)
    assert index.ids == ("p2", "p1")
    assert index.vectors.dtype == np.float32
    assert not index.vectors.flags.writeable
    with pytest.raises(DataError, match="duplicate passage id: p1"):
        build_index(params, passages + [Passage(id="p1", text="again")])
    with pytest.raises(DataError, match="no passages"):
        build_index(params, [])


def test_index_persistence_round_trip(tmp_path, random_index):
    ivf_index = build_ivf(random_index, 8, seed=3)
    path = tmp_path / "index.bin"
    save_index(ivf_index, path)
    loaded = load_index(path)
    assert loaded.ids == ivf_index.ids
    assert np.array_equal(loaded.vectors, ivf_index.vectors)
    query = np.ones(16) / 4.0
    assert search_ivf(loaded, query, 10, 3) == search_ivf(ivf_index, query, 10, 3)
    save_index(loaded, tmp_path / "again.bin")
    assert path.read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_load_index_rejects_corruption(tmp_path, random_index):
    path = tmp_path / "index.bin"
    save_index(random_index, path)
    payload = path.read_bytes()
    path.write_bytes(payload[:-3])
    with pytest.raises(DataError, match="truncated"):
        load_index(path)
    path.write_bytes(b"NOPE" + payload[4:])
    with pytest.raises(DataError, match="magic"):
        load_index(path)
    path.write_bytes(payload + b"\x00")
    with pytest.raises(DataError, match="trailing"):
        load_index(path)


def test_search_batch_uses_ivf_only_when_asked(random_index):
    ivf_index = build_ivf(random_index, 8, seed=3)
    queries = unit_rows(np.random.default_rng(9), 5, 16)
    exact = search_batch(ivf_index, queries, 10)
    assert exact == [search_exact(ivf_index, q, 10) for q in queries]
    assert search_batch(ivf_index, queries, 10, nprobe=8) == exact


def test_quarter_of_lists_searched_keeps_most_of_exact_top_ten():
    rng = np.random.default_rng(12)
    index = DocumentIndex(
        ids=tuple(f"g{number:04d}" for number in range(1000)),
        vectors=unit_rows(rng, 1000, 8).astype(np.float32),
    )
    clustered = build_ivf(index, 32, seed=3)
    overlaps = []
    for query in unit_rows(rng, 100, 8):
        exact = set(search_exact(clustered, query, 10).ids)
        approximate = set(search_ivf(clustered, query, 10, nprobe=8).ids)
        overlaps.append(len(exact & approximate) / 10)
    assert np.mean(overlaps) >= 0.9
