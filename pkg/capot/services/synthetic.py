from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError
from ..models import Passage, Query
from ..seeding import make_rng

logger = logging.getLogger(__name__)

ONSETS = ("b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl")
NUCLEI = ("a", "e", "i", "o", "u", "ai", "ou")
CODAS = ("", "", "", "n", "r", "s", "l", "m")

MIN_QUERIES = 10
MIN_VOCAB_SIZE = 50
QUERY_TOKENS = (4, 9)
PASSAGE_TOKENS = (30, 60)
DISTRACTORS_PER_QUERY = 4


@dataclass(frozen=True)
class SyntheticCorpus:
    queries: list[Query]
    passages: list[Passage]
    qrels: dict[str, set[str]]
    vocabulary: tuple[str, ...]


def pseudo_vocabulary(size: int, seed: int, label: str = "vocabulary") -> tuple[str, ...]:
    """Distinct pronounceable pseudo-words of two or three syllables."""
    rng = make_rng(seed, "synthetic", label)
    words: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(words) < size:
        attempts += 1
        if attempts > size * 200:
            raise DataError(f"cannot generate {size} distinct pseudo-words")
        syllables = int(rng.integers(2, 4))
        word = "".join(
            ONSETS[rng.integers(len(ONSETS))] + NUCLEI[rng.integers(len(NUCLEI))] + CODAS[rng.integers(len(CODAS))]
            for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return tuple(words)


def _passage_tokens(
    rng: np.random.Generator,
    vocabulary: Sequence[str],
    embedded: Sequence[str],
) -> list[str]:
    length = int(rng.integers(PASSAGE_TOKENS[0], PASSAGE_TOKENS[1] + 1))
    filler = [vocabulary[i] for i in rng.integers(len(vocabulary), size=max(length - len(embedded), 0))]
    slots = np.sort(rng.choice(len(filler) + len(embedded), size=len(embedded), replace=False))
    tokens: list[str] = []
    source = iter(filler)
    embedded_iter = iter(embedded)
    slot_set = set(slots.tolist())
    for position in range(len(filler) + len(embedded)):
        tokens.append(next(embedded_iter) if position in slot_set else next(source))
    return tokens


def generate_synthetic_corpus(
    num_queries: int,
    vocab_size: int,
    seed: int,
    distractors_per_query: int = DISTRACTORS_PER_QUERY,
) -> SyntheticCorpus:
    """Seeded stand-in retrieval corpus: one relevant passage and several overlapping distractors per query."""
    if num_queries < MIN_QUERIES:
        raise DataError(f"num_queries must be at least {MIN_QUERIES}")
    minimum = max(MIN_VOCAB_SIZE, num_queries // 4)
    if vocab_size < minimum:
        raise DataError(f"vocab too small: {vocab_size} words for {num_queries} queries (need {minimum})")

    vocabulary = pseudo_vocabulary(vocab_size, seed)
    rng = make_rng(seed, "synthetic", "corpus")

    query_tokens: list[list[str]] = []
    seen_queries: set[str] = set()
    while len(query_tokens) < num_queries:
        length = int(rng.integers(QUERY_TOKENS[0], QUERY_TOKENS[1] + 1))
        tokens = [vocabulary[i] for i in rng.choice(vocab_size, size=length, replace=False)]
        text = " ".join(tokens)
        if text not in seen_queries:
            seen_queries.add(text)
            query_tokens.append(tokens)

    drafts: list[tuple[int, str]] = []
    for number, tokens in enumerate(query_tokens):
        drafts.append((number, " ".join(_passage_tokens(rng, vocabulary, tokens))))
        for _ in range(distractors_per_query):
            shared_count = int(rng.integers(1, min(2, len(tokens) - 1) + 1))
            shared = [tokens[i] for i in np.sort(rng.choice(len(tokens), size=shared_count, replace=False))]
            drafts.append((-1, " ".join(_passage_tokens(rng, vocabulary, shared))))

    order = rng.permutation(len(drafts))
    queries = [Query(id=f"q{number:05d}", text=" ".join(tokens)) for number, tokens in enumerate(query_tokens)]
    passages: list[Passage] = []
    qrels: dict[str, set[str]] = {}
    for position, draft_index in enumerate(order.tolist()):
        owner, text = drafts[draft_index]
        passage_id = f"p{position:06d}"
        passages.append(Passage(id=passage_id, text=text))
        if owner >= 0:
            qrels[queries[owner].id] = {passage_id}

    logger.info(
        "Generated synthetic corpus: %d queries, %d passages, vocabulary %d",
        len(queries),
        len(passages),
        vocab_size,
    )
    return SyntheticCorpus(queries=queries, passages=passages, qrels=qrels, vocabulary=vocabulary)


def generate_external_queries(
    num_queries: int,
    base_vocabulary: Sequence[str],
    seed: int,
    overlap: float = 0.5,
) -> list[Query]:
    """Queries from a shifted distribution: a mix of corpus words and words the corpus never uses."""
    if num_queries < 1:
        raise DataError("num_queries must be positive")
    if not 0.0 <= overlap <= 1.0:
        raise DataError("overlap must be within [0, 1]")

    base = set(base_vocabulary)
    foreign = [word for word in pseudo_vocabulary(len(base_vocabulary) * 2, seed, "external") if word not in base]
    rng = make_rng(seed, "synthetic", "external-queries")

    queries: list[Query] = []
    for number in range(num_queries):
        length = int(rng.integers(QUERY_TOKENS[0], QUERY_TOKENS[1] + 1))
        tokens = []
        for _ in range(length):
            pool = base_vocabulary if rng.random() < overlap else foreign
            tokens.append(pool[int(rng.integers(len(pool)))])
        queries.append(Query(id=f"x{number:05d}", text=" ".join(tokens)))
    return queries


def split_queries(queries: Sequence[Query], dev_fraction: float, seed: int) -> tuple[list[Query], list[Query]]:
    """Deterministic train/dev split; both sides keep the input order."""
    if not 0.0 < dev_fraction < 1.0:
        raise DataError("dev fraction must be strictly between 0 and 1")
    dev_count = max(1, int(round(len(queries) * dev_fraction)))
    if dev_count >= len(queries):
        raise DataError("not enough queries for a train/dev split")
    dev_positions = set(make_rng(seed, "synthetic", "split").permutation(len(queries))[:dev_count].tolist())
    train = [query for i, query in enumerate(queries) if i not in dev_positions]
    dev = [query for i, query in enumerate(queries) if i in dev_positions]
    return train, dev
