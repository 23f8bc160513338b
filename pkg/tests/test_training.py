from __future__ import annotations

import logging
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from capot.errors import DataError, FrozenEncoderError
from capot.models import LossWeights, NoiseConfig, NoisedQuery, Passage, Query, TrainConfig
from capot.services.encoder import (
    apply_gradient,
    clone_frozen,
    clone_trainable,
    embed_batch,
    encode_texts,
    featurize_all,
    init_params,
    projection_gradient,
)
from capot.services.losses import capot_batch_loss
from capot.services.noise import noise_dataset
from capot.services.synthetic import pseudo_vocabulary
from capot.workflows.training import (
    CapotAligner,
    align_capot,
    build_training_triples,
    epoch_sampler,
    initial_towers,
    mean_squared_distance,
    pretrain_align,
    sample_alignment_triples,
    train_baseline,
    train_data_augmentation,
)


def _swap_first(text: str) -> str:
    return text[1] + text[0] + text[2:]


def _noised(queries, noise_type: str = "rcs") -> list[NoisedQuery]:
    return [NoisedQuery(anchor_id=q.id, noise_type=noise_type, text=_swap_first(q.text), seed=1) for q in queries]


def _alignment_config(**overrides) -> TrainConfig:
    values = dict(
        regime="capot",
        batch_size=8,
        learning_rate=2e-4,
        epochs=10,
        embedding_dim=16,
        num_buckets=4096,
        seed=5,
        loss_weights=LossWeights(),
    )
    values.update(overrides)
    return TrainConfig(**values)


def test_training_triples_sample_non_relevant_negatives(tiny_corpus):
    triples = build_training_triples(tiny_corpus.queries, tiny_corpus.passages, tiny_corpus.qrels, 3, seed=2)
    assert len(triples) == len(tiny_corpus.queries)
    for triple in triples:
        relevant = tiny_corpus.qrels[triple.query.id]
        assert triple.positive_passage_id in relevant
        assert len(triple.negative_passage_ids) == 3
        assert not set(triple.negative_passage_ids) & relevant
    assert triples == build_training_triples(tiny_corpus.queries, tiny_corpus.passages, tiny_corpus.qrels, 3, seed=2)


def test_training_triple_errors(tiny_corpus):
    with pytest.raises(DataError, match="no queries"):
        build_training_triples([], tiny_corpus.passages, tiny_corpus.qrels, 1, seed=1)
    orphan = Query(id="orphan", text="nothing relevant")
    with pytest.raises(DataError, match="query orphan has no qrels"):
        build_training_triples([orphan], tiny_corpus.passages, tiny_corpus.qrels, 1, seed=1)
    with pytest.raises(DataError, match="unknown passages"):
        build_training_triples([orphan], tiny_corpus.passages, {"orphan": {"p999999"}}, 1, seed=1)


def test_initial_towers_share_initialisation_by_default(small_config):
    query, document = initial_towers(small_config.model_copy(update={"share_tower_init": False}))
    assert not np.array_equal(query.projection, document.projection)
    query, document = initial_towers(small_config)
    assert np.array_equal(query.projection, document.projection)
    assert query.projection is not document.projection


def test_zero_epochs_returns_initial_towers(tiny_corpus, tiny_split, small_config):
    config = small_config.model_copy(update={"epochs": 0})
    pair = train_baseline(tiny_split[0], tiny_corpus.passages, tiny_corpus.qrels, config)
    query, document = initial_towers(config)
    assert np.array_equal(pair.query.projection, query.projection)
    assert np.array_equal(pair.document.projection, document.projection)
    assert pair.loss_trace == []


def test_same_seed_training_is_bit_identical(tiny_corpus, tiny_split, small_config):
    first = train_baseline(tiny_split[0], tiny_corpus.passages, tiny_corpus.qrels, small_config)
    second = train_baseline(tiny_split[0], tiny_corpus.passages, tiny_corpus.qrels, small_config)
    assert np.array_equal(first.query.projection, second.query.projection)
    assert np.array_equal(first.document.projection, second.document.projection)
    assert first.loss_trace == second.loss_trace
    assert len(first.loss_trace) == small_config.epochs


def test_baseline_overfits_a_small_training_set():
    words = pseudo_vocabulary(36, seed=8)
    queries = [Query(id=f"q{i:02d}", text=" ".join(words[3 * i : 3 * i + 3])) for i in range(12)]
    passages = [Passage(id=f"p{i:02d}", text=query.text) for i, query in enumerate(queries)]
    qrels = {query.id: {passage.id} for query, passage in zip(queries, passages)}
    config = TrainConfig(
        batch_size=4,
        learning_rate=0.01,
        epochs=100,
        embedding_dim=32,
        num_buckets=4096,
        seed=3,
        share_tower_init=True,
    )
    pair = train_baseline(queries, passages, qrels, config)

    query_vectors = encode_texts(pair.query, [q.text for q in queries], config.query_max_tokens)
    passage_vectors = encode_texts(pair.document, [p.text for p in passages], config.passage_max_tokens)
    top = np.argmax(query_vectors @ passage_vectors.T, axis=1)
    assert top.tolist() == list(range(len(queries)))


def test_full_batch_smoothed_loss_trace_never_rises():
    words = pseudo_vocabulary(36, seed=8)
    queries = [Query(id=f"q{i:02d}", text=" ".join(words[3 * i : 3 * i + 3])) for i in range(12)]
    passages = [Passage(id=f"p{i:02d}", text=query.text) for i, query in enumerate(queries)]
    qrels = {query.id: {passage.id} for query, passage in zip(queries, passages)}
    config = TrainConfig(
        batch_size=len(queries),
        learning_rate=1e-4,
        epochs=60,
        embedding_dim=16,
        num_buckets=4096,
        seed=3,
    )
    trace = np.array(train_baseline(queries, passages, qrels, config).loss_trace)

    smoothed = np.convolve(trace, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smoothed) <= 1e-12)
    assert trace[-1] < trace[0]


def test_dangling_qrels_are_rejected(tiny_corpus, tiny_split, small_config):
    qrels = dict(tiny_corpus.qrels)
    first = tiny_split[0][0].id
    qrels[first] = {"p-missing"}
    with pytest.raises(DataError, match=f"dangling qrel {first} -> p-missing"):
        train_baseline(tiny_split[0], tiny_corpus.passages, qrels, small_config)


def test_empty_augmentation_equals_baseline(tiny_corpus, tiny_split, small_config):
    baseline = train_baseline(tiny_split[0], tiny_corpus.passages, tiny_corpus.qrels, small_config)
    augmented = train_data_augmentation(tiny_split[0], [], tiny_corpus.passages, tiny_corpus.qrels, small_config)
    assert np.array_equal(baseline.query.projection, augmented.query.projection)
    assert np.array_equal(baseline.document.projection, augmented.document.projection)


def test_augmentation_adds_one_example_per_noised_query(tiny_corpus, tiny_split, small_config, caplog):
    train = tiny_split[0]
    caplog.set_level(logging.INFO, logger="capot.workflows.training")
    train_data_augmentation(train, _noised(train), tiny_corpus.passages, tiny_corpus.qrels, small_config)
    assert f"Data augmentation: {len(train)} clean + {len(train)} noised training examples" in caplog.text


def test_augmentation_requires_anchor_qrels(tiny_corpus, tiny_split, small_config):
    stray = NoisedQuery(anchor_id="q-unknown", noise_type="cd", text="stray query", seed=1)
    with pytest.raises(DataError, match="noised query q-unknown::cd has no qrels for its anchor"):
        train_data_augmentation(tiny_split[0], [stray], tiny_corpus.passages, tiny_corpus.qrels, small_config)


def test_two_anchor_alignment_always_picks_the_other_query():
    queries = [Query(id="a", text="first query"), Query(id="b", text="second query")]
    noised = [
        NoisedQuery(anchor_id=queries[i % 2].id, noise_type="cd", text="some query", seed=i) for i in range(1000)
    ]
    for triple in sample_alignment_triples(queries, noised, seed=4):
        assert triple.negative.id != triple.anchor.id
        assert triple.positive.anchor_id == triple.anchor.id


def test_alignment_negatives_are_uniform_over_other_queries():
    queries = [Query(id=f"q{i}", text=f"query number {i}") for i in range(5)]
    noised = [NoisedQuery(anchor_id="q0", noise_type="rcs", text="qeury number 0", seed=i) for i in range(10_000)]
    counts = Counter(triple.negative.id for triple in sample_alignment_triples(queries, noised, seed=12))
    assert "q0" not in counts
    observed = [counts[f"q{i}"] for i in range(1, 5)]
    assert chisquare(observed).pvalue > 0.001


def test_alignment_sampling_errors():
    single = [Query(id="a", text="only query")]
    with pytest.raises(DataError, match="alignment needs at least 2 distinct anchor queries"):
        sample_alignment_triples(single, [], seed=1)
    queries = single + [Query(id="b", text="other query")]
    stray = NoisedQuery(anchor_id="c", noise_type="cd", text="stray", seed=1)
    with pytest.raises(DataError, match="no clean anchor"):
        sample_alignment_triples(queries, [stray], seed=1)


def test_epoch_sampler_redraws_per_epoch(tiny_split):
    train = tiny_split[0]
    sampler = epoch_sampler(train, _noised(train), seed=6)
    assert sampler(0) == sampler(0)
    assert [t.negative.id for t in sampler(0)] != [t.negative.id for t in sampler(1)]


def test_aligner_step_is_one_exact_sgd_update(tiny_split):
    train = tiny_split[0]
    config = _alignment_config()
    params = init_params(16, 4096, seed=2)
    triples = sample_alignment_triples(train, _noised(train), seed=3)[:8]

    aligner = CapotAligner(params, config)
    breakdown = aligner.step(triples)

    expected = clone_trainable(params)
    texts = [t.anchor.text for t in triples] + [t.positive.text for t in triples] + [t.negative.text for t in triples]
    fvs = featurize_all(texts, config.query_max_tokens, 4096)
    batch = embed_batch(expected, fvs)
    frozen = embed_batch(clone_frozen(params), fvs[:8]).embeddings
    e = batch.embeddings
    reference, grads = capot_batch_loss(e[:8], e[8:16], e[16:], frozen, config.loss_weights)
    gradient = projection_gradient(expected, fvs, batch, np.concatenate([grads.clean, grads.positive, grads.negative]))
    apply_gradient(expected, gradient, config.learning_rate)

    assert breakdown == reference
    assert np.array_equal(aligner.params.projection, expected.projection)


def test_alignment_leaves_anchor_and_input_untouched(tiny_split):
    train = tiny_split[0]
    params = init_params(16, 4096, seed=2)
    original = params.projection.copy()
    aligner = CapotAligner(params, _alignment_config(epochs=2))
    aligned = aligner.fit(sample_alignment_triples(train, _noised(train), seed=3))
    assert np.array_equal(aligner.anchor.projection, original)
    assert np.array_equal(params.projection, original)
    assert not np.array_equal(aligned.projection, original)
    assert len(aligner.history) == 2


def test_frozen_encoder_cannot_be_aligned():
    with pytest.raises(FrozenEncoderError, match="cannot align a frozen encoder"):
        CapotAligner(clone_frozen(init_params(4, 64, seed=1)), _alignment_config())


def test_zero_epoch_alignment_embeds_identically(tiny_split):
    train = tiny_split[0]
    params = init_params(16, 4096, seed=2)
    aligned = align_capot(params, sample_alignment_triples(train, _noised(train), seed=3), _alignment_config(epochs=0))
    texts = [q.text for q in train]
    assert np.array_equal(encode_texts(aligned, texts, 28), encode_texts(params, texts, 28))


def test_alignment_needs_triples():
    with pytest.raises(DataError, match="no alignment triples"):
        align_capot(init_params(4, 64, seed=1), [], _alignment_config(epochs=1))


def test_alignment_pulls_typos_towards_their_clean_queries(tiny_split, resources):
    train = tiny_split[0]
    noised = noise_dataset(train, NoiseConfig(master_seed=9, enabled_types=["rcs", "kcs", "cd"]), resources)
    by_id = {q.id: q.text for q in train}
    clean_texts = [by_id[record.anchor_id] for record in noised]
    noisy_texts = [record.text for record in noised]

    params = init_params(16, 4096, seed=2)
    triples = sample_alignment_triples(train, noised, seed=3)
    anchored = align_capot(params, triples, _alignment_config())
    before = mean_squared_distance(params, clean_texts, noisy_texts, 28)
    after = mean_squared_distance(anchored, clean_texts, noisy_texts, 28)
    assert after < before

    free_weights = LossWeights().model_copy(update={"tau_anchor": 0.0})
    free = align_capot(params, triples, _alignment_config(loss_weights=free_weights))
    texts = [q.text for q in train]
    anchored_drift = mean_squared_distance(anchored, texts, texts, 28, right_params=params)
    free_drift = mean_squared_distance(free, texts, texts, 28, right_params=params)
    assert free_drift >= anchored_drift


def test_zero_epoch_pretraining_reduces_to_baseline(tiny_corpus, tiny_split, small_config):
    train = tiny_split[0]
    align_config = _alignment_config(epochs=0)
    result = pretrain_align(
        train, _noised(train), train, tiny_corpus.passages, tiny_corpus.qrels, align_config, small_config
    )
    baseline = train_baseline(train, tiny_corpus.passages, tiny_corpus.qrels, small_config)
    assert np.array_equal(result.stage_one.projection, initial_towers(small_config)[0].projection)
    assert np.array_equal(result.pair.query.projection, baseline.query.projection)
    assert np.array_equal(result.pair.document.projection, baseline.document.projection)


def test_pretraining_moves_the_stage_one_tower(tiny_corpus, tiny_split, small_config):
    train = tiny_split[0]
    result = pretrain_align(
        train, _noised(train), train, tiny_corpus.passages, tiny_corpus.qrels, _alignment_config(epochs=1), small_config
    )
    assert not np.array_equal(result.stage_one.projection, initial_towers(small_config)[0].projection)
    assert not result.stage_one.frozen


def test_mean_squared_distance_validation():
    params = init_params(4, 64, seed=1)
    assert mean_squared_distance(params, ["same text"], ["same text"], 28) == 0.0
    with pytest.raises(DataError):
        mean_squared_distance(params, ["a"], [], 28)
