from __future__ import annotations

import logging
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from ..errors import DataError, FrozenEncoderError
from ..models import AlignmentTriple, NoisedQuery, Passage, Query, TrainConfig, TrainingTriple
from ..seeding import derive_seed, make_rng
from ..services.encoder import (
    EncoderParams,
    FeatureVector,
    apply_gradient,
    clone_frozen,
    clone_trainable,
    embed_batch,
    featurize,
    init_params,
    projection_gradient,
)
from ..services.losses import LossBreakdown, capot_batch_loss

logger = logging.getLogger(__name__)

TripleSource = Union[Sequence[AlignmentTriple], Callable[[int], Sequence[AlignmentTriple]]]


class EncoderPair(NamedTuple):
    query: EncoderParams
    document: EncoderParams
    loss_trace: list[float]


class PretrainResult(NamedTuple):
    stage_one: EncoderParams
    pair: EncoderPair


def initial_towers(config: TrainConfig) -> tuple[EncoderParams, EncoderParams]:
    query = init_params(config.embedding_dim, config.num_buckets, derive_seed(config.seed, "query-tower"))
    if config.share_tower_init:
        document = clone_trainable(query)
    else:
        document = init_params(config.embedding_dim, config.num_buckets, derive_seed(config.seed, "document-tower"))
    return query, document


def build_training_triples(
    queries: Sequence[Query],
    passages: Sequence[Passage],
    qrels: Mapping[str, Iterable[str]],
    negatives_per_positive: int,
    seed: int,
) -> list[TrainingTriple]:
    """One triple per query: its first relevant passage plus seeded non-relevant negatives."""
    if not queries:
        raise DataError("no queries")
    passage_ids = [passage.id for passage in passages]
    known = set(passage_ids)
    triples: list[TrainingTriple] = []
    for query in queries:
        relevant = set(qrels.get(query.id, ()))
        if not relevant:
            raise DataError(f"query {query.id} has no qrels")
        dangling = sorted(relevant - known)
        if dangling:
            raise DataError(f"qrels for {query.id} reference unknown passages: {', '.join(dangling[:5])}")

        negatives: tuple[str, ...] = ()
        if negatives_per_positive:
            pool = [pid for pid in passage_ids if pid not in relevant]
            if len(pool) < negatives_per_positive:
                raise DataError(f"not enough non-relevant passages to sample negatives for {query.id}")
            picks = make_rng(seed, "negatives", query.id).choice(len(pool), size=negatives_per_positive, replace=False)
            negatives = tuple(pool[i] for i in sorted(picks.tolist()))
        triples.append(
            TrainingTriple(query=query, positive_passage_id=sorted(relevant)[0], negative_passage_ids=negatives)
        )
    return triples


def _check_dangling_qrels(
    qrels: Mapping[str, Iterable[str]], queries: Sequence[Query], passages: Sequence[Passage]
) -> None:
    query_ids = {query.id for query in queries}
    passage_ids = {passage.id for passage in passages}
    for query_id, relevant in qrels.items():
        if query_id not in query_ids:
            continue
        unknown = [pid for pid in relevant if pid not in passage_ids]
        if unknown:
            raise DataError(f"dangling qrel {query_id} -> {unknown[0]}")


def _in_batch_softmax_step(
    query_params: EncoderParams,
    document_params: EncoderParams,
    query_fvs: Sequence[FeatureVector],
    passage_fvs: Sequence[FeatureVector],
    positive_columns: np.ndarray,
    mask: np.ndarray,
    config: TrainConfig,
) -> float:
    queries = embed_batch(query_params, query_fvs)
    passages = embed_batch(document_params, passage_fvs)
    scores = config.score_scale * (queries.embeddings @ passages.embeddings.T)
    scores = np.where(mask, -np.inf, scores)

    rows = np.arange(len(query_fvs))
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probabilities = exp / exp.sum(axis=1, keepdims=True)
    log_normalizer = np.log(exp.sum(axis=1))
    losses = log_normalizer - shifted[rows, positive_columns]

    grad_scores = probabilities.copy()
    grad_scores[rows, positive_columns] -= 1.0
    grad_scores /= len(query_fvs)
    grad_queries = config.score_scale * grad_scores @ passages.embeddings
    grad_passages = config.score_scale * grad_scores.T @ queries.embeddings

    query_step = projection_gradient(query_params, query_fvs, queries, grad_queries)
    document_step = projection_gradient(document_params, passage_fvs, passages, grad_passages)
    apply_gradient(query_params, query_step, config.learning_rate)
    apply_gradient(document_params, document_step, config.learning_rate)
    return float(losses.mean())


def _train_bi_encoder(
    triples: Sequence[TrainingTriple],
    passages: Sequence[Passage],
    relevant: Mapping[str, set[str]],
    config: TrainConfig,
    initial_query: Optional[EncoderParams],
    label: str,
) -> EncoderPair:
    query_params, document_params = initial_towers(config)
    if initial_query is not None:
        if initial_query.projection.shape != query_params.projection.shape:
            raise DataError("initial query tower does not match the configured encoder shape")
        query_params = clone_trainable(initial_query)

    passage_text = {passage.id: passage.text for passage in passages}
    passage_features: dict[str, FeatureVector] = {}

    def passage_fv(passage_id: str) -> FeatureVector:
        if passage_id not in passage_features:
            passage_features[passage_id] = featurize(
                passage_text[passage_id], config.passage_max_tokens, config.num_buckets
            )
        return passage_features[passage_id]

    query_fvs = [featurize(t.query.text, config.query_max_tokens, config.num_buckets) for t in triples]

    loss_trace: list[float] = []
    for epoch in range(config.epochs):
        order = make_rng(config.seed, "bi-encoder-order", epoch).permutation(len(triples))
        batch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [int(i) for i in order[start : start + config.batch_size]]
            candidates: list[str] = []
            column_of: dict[str, int] = {}
            for i in batch:
                for passage_id in (triples[i].positive_passage_id, *triples[i].negative_passage_ids):
                    if passage_id not in column_of:
                        column_of[passage_id] = len(candidates)
                        candidates.append(passage_id)

            positive_columns = np.array([column_of[triples[i].positive_passage_id] for i in batch])
            mask = np.zeros((len(batch), len(candidates)), dtype=bool)
            for row, i in enumerate(batch):
                for passage_id in relevant[triples[i].query.id]:
                    column = column_of.get(passage_id)
                    if column is not None and column != positive_columns[row]:
                        mask[row, column] = True

            batch_losses.append(
                _in_batch_softmax_step(
                    query_params,
                    document_params,
                    [query_fvs[i] for i in batch],
                    [passage_fv(passage_id) for passage_id in candidates],
                    positive_columns,
                    mask,
                    config,
                )
            )
        loss_trace.append(float(np.mean(batch_losses)))
        logger.info("%s epoch %d/%d mean loss %.6f", label, epoch + 1, config.epochs, loss_trace[-1])

    return EncoderPair(query=query_params, document=document_params, loss_trace=loss_trace)


def train_baseline(
    queries: Sequence[Query],
    passages: Sequence[Passage],
    qrels: Mapping[str, Iterable[str]],
    config: TrainConfig,
    initial_query: Optional[EncoderParams] = None,
) -> EncoderPair:
    """Train both towers with in-batch softmax over inner products."""
    _check_dangling_qrels(qrels, queries, passages)
    triples = build_training_triples(queries, passages, qrels, config.negatives_per_positive, config.seed)
    relevant = {query.id: set(qrels[query.id]) for query in queries}
    return _train_bi_encoder(triples, passages, relevant, config, initial_query, "baseline")


def train_data_augmentation(
    queries: Sequence[Query],
    noised_queries: Sequence[NoisedQuery],
    passages: Sequence[Passage],
    qrels: Mapping[str, Iterable[str]],
    config: TrainConfig,
) -> EncoderPair:
    """Baseline training on clean queries plus noised variants that inherit their anchor's passages."""
    _check_dangling_qrels(qrels, queries, passages)
    triples = build_training_triples(queries, passages, qrels, config.negatives_per_positive, config.seed)
    by_anchor = {triple.query.id: triple for triple in triples}
    relevant = {query.id: set(qrels[query.id]) for query in queries}

    for record in noised_queries:
        anchor = by_anchor.get(record.anchor_id)
        if anchor is None:
            raise DataError(f"noised query {record.record_id} has no qrels for its anchor")
        variant = Query(id=record.record_id, text=record.text)
        triples.append(
            TrainingTriple(
                query=variant,
                positive_passage_id=anchor.positive_passage_id,
                negative_passage_ids=anchor.negative_passage_ids,
            )
        )
        relevant[variant.id] = relevant[record.anchor_id]

    label = "da" if noised_queries else "baseline"
    logger.info("Data augmentation: %d clean + %d noised training examples", len(queries), len(noised_queries))
    return _train_bi_encoder(triples, passages, relevant, config, None, label)


def sample_alignment_triples(
    queries: Sequence[Query],
    noised_queries: Sequence[NoisedQuery],
    seed: int,
) -> list[AlignmentTriple]:
    """Pair each noised query with its clean root and a uniformly drawn other query."""
    anchors = {query.id: position for position, query in enumerate(queries)}
    if len(anchors) < 2:
        raise DataError("alignment needs at least 2 distinct anchor queries")
    rng = make_rng(seed, "alignment-triples")
    draws = rng.integers(len(queries) - 1, size=len(noised_queries))

    triples: list[AlignmentTriple] = []
    for record, draw in zip(noised_queries, draws.tolist()):
        position = anchors.get(record.anchor_id)
        if position is None:
            raise DataError(f"noised query {record.record_id} has no clean anchor")
        negative = draw if draw < position else draw + 1
        triples.append(AlignmentTriple(anchor=queries[position], positive=record, negative=queries[negative]))
    return triples


def epoch_sampler(
    queries: Sequence[Query], noised_queries: Sequence[NoisedQuery], seed: int
) -> Callable[[int], list[AlignmentTriple]]:
    """Fresh negatives every epoch, from an epoch-labelled sub-seed."""

    def sample(epoch: int) -> list[AlignmentTriple]:
        return sample_alignment_triples(queries, noised_queries, derive_seed(seed, "alignment-epoch", epoch))

    return sample


class CapotAligner:
    """SGD on the CAPOT objective for the query tower; the anchor copy never moves."""

    def __init__(self, query_params: EncoderParams, config: TrainConfig):
        if query_params.frozen:
            raise FrozenEncoderError("cannot align a frozen encoder")
        self.config = config
        self.weights = config.loss_weights
        self.anchor = clone_frozen(query_params)
        self.params = clone_trainable(query_params)
        self.history: list[LossBreakdown] = []
        # anchors and negatives only, keyed by text
        self._clean_features: dict[str, FeatureVector] = {}

    def _featurize(self, text: str) -> FeatureVector:
        return featurize(text, self.config.query_max_tokens, self.params.num_buckets)

    def _clean(self, query: Query) -> FeatureVector:
        cached = self._clean_features.get(query.text)
        if cached is None:
            cached = self._clean_features[query.text] = self._featurize(query.text)
        return cached

    def step(self, triples: Sequence[AlignmentTriple]) -> LossBreakdown:
        count = len(triples)
        fvs = (
            [self._clean(t.anchor) for t in triples]
            + [self._featurize(t.positive.text) for t in triples]
            + [self._clean(t.negative) for t in triples]
        )
        batch = embed_batch(self.params, fvs)
        frozen = embed_batch(self.anchor, fvs[:count]).embeddings

        e_x = batch.embeddings[:count]
        e_pos = batch.embeddings[count : 2 * count]
        e_neg = batch.embeddings[2 * count :]
        breakdown, grads = capot_batch_loss(e_x, e_pos, e_neg, frozen, self.weights)

        grad_embeddings = np.concatenate([grads.clean, grads.positive, grads.negative])
        gradient = projection_gradient(self.params, fvs, batch, grad_embeddings)
        apply_gradient(self.params, gradient, self.config.learning_rate)
        return breakdown

    def fit(self, source: TripleSource) -> EncoderParams:
        for epoch in range(self.config.epochs):
            triples = source(epoch) if callable(source) else source
            if not triples:
                raise DataError("no alignment triples")
            order = make_rng(self.config.seed, "alignment-order", epoch).permutation(len(triples))
            total = LossBreakdown.zero()
            for start in range(0, len(order), self.config.batch_size):
                total = total + self.step([triples[int(i)] for i in order[start : start + self.config.batch_size]])
            self.history.append(total)
            logger.info(
                "alignment epoch %d/%d loss %.6f (contrastive %.6f, anchor %.6f, ranking %.6f)",
                epoch + 1,
                self.config.epochs,
                total.total / len(triples),
                total.contrastive / len(triples),
                total.anchor / len(triples),
                total.ranking / len(triples),
            )
        return self.params


def align_capot(query_params: EncoderParams, alignment_triples: TripleSource, config: TrainConfig) -> EncoderParams:
    """Post-training alignment of the query tower only; returns a new encoder."""
    return CapotAligner(query_params, config).fit(alignment_triples)


def pretrain_align(
    external_queries: Sequence[Query],
    external_noised: Sequence[NoisedQuery],
    queries: Sequence[Query],
    passages: Sequence[Passage],
    qrels: Mapping[str, Iterable[str]],
    align_config: TrainConfig,
    train_config: TrainConfig,
) -> PretrainResult:
    """Align a fresh query tower on external noised queries, then train the bi-encoder from it."""
    fresh, _ = initial_towers(train_config)
    sampler = epoch_sampler(external_queries, external_noised, align_config.seed)
    stage_one = CapotAligner(fresh, align_config).fit(sampler)
    logger.info("Pre-training alignment finished after %d epochs", align_config.epochs)
    pair = train_baseline(queries, passages, qrels, train_config, initial_query=stage_one)
    return PretrainResult(stage_one=stage_one, pair=pair)


def mean_squared_distance(
    params: EncoderParams,
    left_texts: Sequence[str],
    right_texts: Sequence[str],
    max_tokens: int,
    right_params: Optional[EncoderParams] = None,
) -> float:
    """Mean |f(left) - g(right)|^2, with g defaulting to f."""
    if len(left_texts) != len(right_texts) or not left_texts:
        raise DataError("distance needs two non-empty text lists of equal length")
    other = right_params or params
    left = embed_batch(params, [featurize(t, max_tokens, params.num_buckets) for t in left_texts]).embeddings
    right = embed_batch(other, [featurize(t, max_tokens, other.num_buckets) for t in right_texts]).embeddings
    difference = left - right
    return float(np.einsum("ij,ij->i", difference, difference).mean())
