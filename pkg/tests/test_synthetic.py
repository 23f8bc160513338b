from __future__ import annotations

import pytest

from capot.errors import DataError
from capot.services.synthetic import (
    DISTRACTORS_PER_QUERY,
    generate_external_queries,
    generate_synthetic_corpus,
    pseudo_vocabulary,
    split_queries,
)


def _is_subsequence(needle: list[str], haystack: list[str]) -> bool:
    remaining = iter(haystack)
    return all(token in remaining for token in needle)


def test_same_seed_gives_identical_corpus():
    first = generate_synthetic_corpus(30, 100, seed=9)
    second = generate_synthetic_corpus(30, 100, seed=9)
    assert first == second
    assert generate_synthetic_corpus(30, 100, seed=10).queries != first.queries


def test_every_query_has_exactly_one_relevant_passage(tiny_corpus):
    assert len(tiny_corpus.passages) == len(tiny_corpus.queries) * (1 + DISTRACTORS_PER_QUERY)
    assert set(tiny_corpus.qrels) == {query.id for query in tiny_corpus.queries}
    assert all(len(relevant) == 1 for relevant in tiny_corpus.qrels.values())
    passage_ids = [passage.id for passage in tiny_corpus.passages]
    assert len(set(passage_ids)) == len(passage_ids)


def test_relevant_passage_embeds_query_tokens_in_order(tiny_corpus):
    passages = {passage.id: passage.text.split() for passage in tiny_corpus.passages}
    for query in tiny_corpus.queries:
        (relevant,) = tiny_corpus.qrels[query.id]
        assert _is_subsequence(query.text.split(), passages[relevant])


def test_query_and_passage_lengths(tiny_corpus):
    assert all(4 <= len(query.text.split()) <= 9 for query in tiny_corpus.queries)
    assert all(30 <= len(passage.text.split()) <= 60 for passage in tiny_corpus.passages)
    vocabulary = set(tiny_corpus.vocabulary)
    assert all(set(passage.text.split()) <= vocabulary for passage in tiny_corpus.passages)


def test_token_overlap_baseline_finds_relevant_passages():
    corpus = generate_synthetic_corpus(200, 300, seed=21)
    passage_tokens = [(passage.id, set(passage.text.split())) for passage in corpus.passages]
    hits = 0
    for query in corpus.queries:
        tokens = set(query.text.split())
        ranked = sorted(passage_tokens, key=lambda item: (-len(tokens & item[1]), item[0]))
        top = {passage_id for passage_id, _ in ranked[:20]}
        hits += bool(corpus.qrels[query.id] & top)
    assert hits / len(corpus.queries) >= 0.95


def test_corpus_size_validation():
    with pytest.raises(DataError, match="num_queries must be at least 10"):
        generate_synthetic_corpus(9, 100, seed=1)
    with pytest.raises(DataError, match="vocab too small"):
        generate_synthetic_corpus(400, 99, seed=1)


def test_pseudo_vocabulary_is_distinct_and_lowercase():
    words = pseudo_vocabulary(500, seed=2)
    assert len(set(words)) == 500
    assert all(word.isalpha() and word.islower() for word in words)


def test_external_queries_shift_the_vocabulary(tiny_corpus):
    base = set(tiny_corpus.vocabulary)
    foreign_only = generate_external_queries(25, tiny_corpus.vocabulary, seed=4, overlap=0.0)
    assert [query.id for query in foreign_only][:2] == ["x00000", "x00001"]
    assert all(not set(query.text.split()) & base for query in foreign_only)

    in_domain = generate_external_queries(25, tiny_corpus.vocabulary, seed=4, overlap=1.0)
    assert all(set(query.text.split()) <= base for query in in_domain)

    assert generate_external_queries(25, tiny_corpus.vocabulary, seed=4) == generate_external_queries(
        25, tiny_corpus.vocabulary, seed=4
    )
    with pytest.raises(DataError):
        generate_external_queries(5, tiny_corpus.vocabulary, seed=4, overlap=1.5)


def test_split_is_deterministic_disjoint_and_ordered(tiny_corpus):
    train, dev = split_queries(tiny_corpus.queries, 0.25, seed=3)
    assert len(dev) == 10
    assert len(train) == 30
    assert {q.id for q in train}.isdisjoint({q.id for q in dev})
    positions = {query.id: i for i, query in enumerate(tiny_corpus.queries)}
    assert [positions[q.id] for q in train] == sorted(positions[q.id] for q in train)
    assert split_queries(tiny_corpus.queries, 0.25, seed=3) == (train, dev)
    with pytest.raises(DataError):
        split_queries(tiny_corpus.queries, 1.0, seed=3)
