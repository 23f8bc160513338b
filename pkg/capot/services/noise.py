from __future__ import annotations

import logging
import random
import re
import string
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Literal, Optional, Sequence

from ..errors import BackendError, CapotError, DataError
from ..models import NoiseConfig, NoisedQuery, Query, RewriteRequest
from ..seeding import derive_seed
from .rewrite import RewriteClient
from .text_resources import TextResources, load_resources, match_case, split_core

logger = logging.getLogger(__name__)

Granularity = Literal["character", "word"]
Placement = Literal["left", "right", "at"]

RANDOM_CHARACTER_POOL = string.ascii_lowercase + " "
PLACEMENTS: tuple[Placement, ...] = ("left", "right", "at")

_WORD = re.compile(r"\S+")


def record_seed(master_seed: int, query_id: str, noise_type: str) -> int:
    return derive_seed(master_seed, query_id, noise_type)


def select_anchor_index(
    text: str,
    granularity: Granularity,
    rng: random.Random,
    eligible: Optional[Callable[[str], bool]] = None,
) -> int:
    """Uniform anchor over characters or whitespace tokens, optionally restricted by `eligible`."""
    units = list(text) if granularity == "character" else text.split()
    if not units:
        raise DataError("empty query")
    positions = [i for i, unit in enumerate(units) if eligible is None or eligible(unit)]
    if not positions:
        raise DataError("empty query")
    return positions[rng.randrange(len(positions))]


def draw_placement(rng: random.Random, probabilities: Sequence[float]) -> Placement:
    return rng.choices(PLACEMENTS, weights=probabilities, k=1)[0]


def _word_spans(text: str) -> list[tuple[int, int]]:
    return [match.span() for match in _WORD.finditer(text)]


def _edit_character(text: str, index: int, placement: Placement, char: str) -> str:
    if placement == "left":
        return text[:index] + char + text[index:]
    if placement == "right":
        return text[: index + 1] + char + text[index + 1 :]
    return text[:index] + char + text[index + 1 :]


class QueryNoiser:
    """Applies the ten query noising functions under the anchor-index protocol."""

    def __init__(self, resources: Optional[TextResources] = None, rewriter: Optional[RewriteClient] = None):
        self.resources = resources or load_resources()
        self.rewriter = rewriter
        self._handlers: dict[str, Callable[[str, random.Random, NoiseConfig], str]] = {
            "rcs": self._random_character,
            "kcs": self._keyboard_character,
            "cd": self._character_deletion,
            "rw": self._word_reorder,
            "determiner": self._determiner,
            "synonym": self._synonym,
            "lemmatize": self._lemmatize,
            "stem": self._stem,
            "bt": self._back_translation,
            "paraphrase": self._paraphrase,
        }

    def apply(self, query: Query, noise_type: str, config: NoiseConfig) -> NoisedQuery:
        handler = self._handlers.get(noise_type)
        if handler is None:
            raise DataError(f"unknown noise type: {noise_type}")
        seed = record_seed(config.master_seed, query.id, noise_type)
        text = handler(query.text, random.Random(seed), config)
        return NoisedQuery(anchor_id=query.id, noise_type=noise_type, text=text, seed=seed)

    # Character-level noise

    def _random_character(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        index = select_anchor_index(text, "character", rng)
        return self._random_character_at(text, index, rng, config)

    def _random_character_at(self, text: str, index: int, rng: random.Random, config: NoiseConfig) -> str:
        placement = draw_placement(rng, config.placement_probabilities)
        pool = RANDOM_CHARACTER_POOL
        if placement == "at":
            pool = pool.replace(text[index], "")
            if not text[:index].strip() and not text[index + 1 :].strip():
                pool = pool.replace(" ", "")
        return _edit_character(text, index, placement, pool[rng.randrange(len(pool))])

    def _keyboard_character(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        index = select_anchor_index(text, "character", rng)
        neighbors = self.resources.keyboard_neighbors(text[index])
        if not neighbors:
            return self._random_character_at(text, index, rng, config)
        placement = draw_placement(rng, config.placement_probabilities)
        char = neighbors[rng.randrange(len(neighbors))]
        if text[index].isupper():
            char = char.upper()
        return _edit_character(text, index, placement, char)

    def _character_deletion(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        if len(text.strip()) == 1:
            logger.warning("Character deletion skipped: query %r has a single character", text)
            return text
        index = select_anchor_index(text, "character", rng, eligible=lambda char: not char.isspace())
        return text[:index] + text[index + 1 :]

    # Word-level noise

    def _word_reorder(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        spans = _word_spans(text)
        if len(spans) < 2:
            return text
        first = select_anchor_index(text, "word", rng)
        second = rng.randrange(len(spans) - 1)
        if second >= first:
            second += 1
        words = [text[start:end] for start, end in spans]
        words[first], words[second] = words[second], words[first]
        return _replace_words(text, spans, words)

    def _determiner(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        spans = _word_spans(text)
        tokens = [text[start:end] for start, end in spans]
        has_content = any(not self.resources.is_stopword(token) for token in tokens)
        eligible = (lambda token: not self.resources.is_stopword(token)) if has_content else None
        index = select_anchor_index(text, "word", rng, eligible=eligible)
        placement = draw_placement(rng, config.placement_probabilities)
        determiners = self.resources.determiners.tokens
        start, end = spans[index]

        if placement == "at":
            choices = [word for word in determiners if word != tokens[index].lower()]
            if choices:
                return text[:start] + choices[rng.randrange(len(choices))] + text[end:]
            placement = "left"
        determiner = determiners[rng.randrange(len(determiners))]
        if placement == "left":
            return text[:start] + determiner + " " + text[start:]
        return text[:end] + " " + determiner + text[end:]

    def _synonym(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        spans = _word_spans(text)
        candidates: list[tuple[int, list[str]]] = []
        for position, (start, end) in enumerate(spans):
            pieces = split_core(text[start:end])
            if pieces is None:
                continue
            synonyms = self.resources.synonyms_of(pieces[1])
            if synonyms:
                candidates.append((position, synonyms))
        if not candidates:
            return text

        position, synonyms = candidates[rng.randrange(len(candidates))]
        leading, core, trailing = split_core(text[slice(*spans[position])])
        replacement = match_case(core, synonyms[rng.randrange(len(synonyms))])
        words = [text[start:end] for start, end in spans]
        words[position] = leading + replacement + trailing
        return _replace_words(text, spans, words)

    def _lemmatize(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        return self._transform_words(text, rng, config, self.resources.lemmatize)

    def _stem(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        return self._transform_words(text, rng, config, self.resources.stem)

    def _transform_words(
        self,
        text: str,
        rng: random.Random,
        config: NoiseConfig,
        transform: Callable[[str], str],
    ) -> str:
        spans = _word_spans(text)
        if not spans:
            raise DataError("empty query")
        count = min(config.max_stem_lemma_words, len(spans))
        chosen = rng.sample(range(len(spans)), count)

        words = [text[start:end] for start, end in spans]
        for position in chosen:
            pieces = split_core(words[position])
            if pieces is None:
                continue
            leading, core, trailing = pieces
            words[position] = leading + transform(core) + trailing
        return _replace_words(text, spans, words)

    # Model-backed noise

    def _back_translation(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        return self._rewrite(text, "back_translation")

    def _paraphrase(self, text: str, rng: random.Random, config: NoiseConfig) -> str:
        return self._rewrite(text, "paraphrase")

    def _rewrite(self, text: str, mode: str) -> str:
        if self.rewriter is None:
            raise BackendError("rewrite backend required")
        return self.rewriter.rewrite(RewriteRequest(text=text, mode=mode)).text


def _replace_words(text: str, spans: list[tuple[int, int]], words: list[str]) -> str:
    pieces: list[str] = []
    cursor = 0
    for (start, end), word in zip(spans, words):
        pieces.append(text[cursor:start])
        pieces.append(word)
        cursor = end
    pieces.append(text[cursor:])
    return "".join(pieces)


def apply_noise(
    query: Query,
    noise_type: str,
    config: NoiseConfig,
    resources: Optional[TextResources] = None,
    rewriter: Optional[RewriteClient] = None,
) -> NoisedQuery:
    return QueryNoiser(resources, rewriter).apply(query, noise_type, config)


def noise_dataset(
    queries: Sequence[Query],
    config: NoiseConfig,
    resources: Optional[TextResources] = None,
    rewriter: Optional[RewriteClient] = None,
    workers: int = 1,
) -> list[NoisedQuery]:
    """One NoisedQuery per (query, enabled type), in input order."""
    if not queries:
        raise DataError("no queries")
    noiser = QueryNoiser(resources, rewriter)

    def noise_one(query: Query) -> list[NoisedQuery]:
        records = []
        for noise_type in config.enabled_types:
            try:
                records.append(noiser.apply(query, noise_type, config))
            except CapotError as exc:
                raise type(exc)(f"query {query.id}: {exc.message}") from exc
        return records

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            batches = list(executor.map(noise_one, queries))
    else:
        batches = [noise_one(query) for query in queries]

    records = [record for batch in batches for record in batch]
    logger.info(
        "Noised %d queries into %d records (types=%s)",
        len(queries),
        len(records),
        ",".join(config.enabled_types),
    )
    return records


def noise_rounds(
    queries: Sequence[Query],
    config: NoiseConfig,
    rounds: int,
    resources: Optional[TextResources] = None,
    rewriter: Optional[RewriteClient] = None,
    workers: int = 1,
) -> list[NoisedQuery]:
    """`rounds` independently seeded noise_dataset passes, concatenated.

    Round 0 is exactly noise_dataset(queries, config); round r draws from the
    master seed's "round" stream r.
    """
    if rounds < 1:
        raise DataError("rounds must be at least 1")
    records: list[NoisedQuery] = []
    for round_number in range(rounds):
        seeded = config
        if round_number:
            seeded = config.model_copy(update={"master_seed": derive_seed(config.master_seed, "round", round_number)})
        records.extend(noise_dataset(queries, seeded, resources, rewriter, workers))
    return records
