from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..dataio import write_json, write_jsonl, write_qrels
from ..models import Passage
from ..runtime import Runtime
from ..seeding import derive_seed
from ..services.encoder import EncoderParams, save_model
from ..services.evaluation import (
    CLEAN_ROW,
    TYPOS_ROW,
    EvalReport,
    compare_runs,
    evaluate_noise_robustness,
    write_comparison_csv,
    write_report_csv,
)
from ..services.index import DocumentIndex, build_index, build_ivf, save_index
from ..services.noise import noise_dataset, noise_rounds
from ..services.synthetic import generate_external_queries, generate_synthetic_corpus, split_queries
from .runner import Provenance
from .training import align_capot, epoch_sampler, pretrain_align, train_baseline, train_data_augmentation

logger = logging.getLogger(__name__)

REGIME_ORDER = ("baseline", "da", "pt", "capot")
CROSS_CORPUS_REGIME = "capot_external"

TYPO_GAIN_POINTS = 0.05
CLEAN_COST_POINTS = 0.04


@dataclass
class ExperimentResult:
    reports: dict[str, EvalReport]
    summary: dict[str, Any]


def directional_checks(reports: dict[str, EvalReport]) -> dict[str, Any]:
    """The desk-scale reproduction checks, evaluated on finished reports."""
    baseline, capot = reports["baseline"], reports["capot"]
    depths = baseline.depths
    first, last = depths[0], depths[-1]

    typo_gain = capot.accuracy[TYPOS_ROW][first] - baseline.accuracy[TYPOS_ROW][first]
    clean_cost = baseline.accuracy[CLEAN_ROW][first] - capot.accuracy[CLEAN_ROW][first]
    checks: dict[str, Any] = {
        "typo_gain_at_first_depth": typo_gain,
        "typo_gain_ok": typo_gain >= TYPO_GAIN_POINTS,
        "clean_cost_at_first_depth": clean_cost,
        "clean_cost_ok": clean_cost <= CLEAN_COST_POINTS,
        "baseline_typo_loss_first": baseline.relative_loss(TYPOS_ROW, first),
        "baseline_typo_loss_last": baseline.relative_loss(TYPOS_ROW, last),
        "degradation_narrows_with_k": abs(baseline.relative_loss(TYPOS_ROW, last))
        <= abs(baseline.relative_loss(TYPOS_ROW, first)),
        "pt_recorded": "pt" in reports,
    }

    augmented = reports.get("da")
    if augmented is not None:
        da_gain = augmented.accuracy[TYPOS_ROW][first] - baseline.accuracy[TYPOS_ROW][first]
        checks.update(da_typo_gain_at_first_depth=da_gain, da_typo_ok=da_gain >= 0)

    external = reports.get(CROSS_CORPUS_REGIME)
    if external is not None:
        ordered = [
            baseline.accuracy[TYPOS_ROW][k] < external.accuracy[TYPOS_ROW][k] <= capot.accuracy[TYPOS_ROW][k]
            for k in depths
        ]
        checks.update(
            cross_corpus_gain_at_first_depth=external.accuracy[TYPOS_ROW][first] - baseline.accuracy[TYPOS_ROW][first],
            cross_corpus_improves=external.accuracy[TYPOS_ROW][first] > baseline.accuracy[TYPOS_ROW][first],
            cross_corpus_ordering_depths=sum(ordered),
            cross_corpus_ordering_ok=sum(ordered) >= min(2, len(depths)),
        )
    return checks


def _index_for(runtime: Runtime, document: EncoderParams, passages: list[Passage]) -> DocumentIndex:
    settings = runtime.settings
    index = build_index(document, passages, settings.passage_max_tokens)
    if settings.ivf_centroids:
        index = build_ivf(index, settings.ivf_centroids, settings.master_seed)
    return index


def run_experiment(runtime: Runtime, out_dir: str, include_cross_corpus: bool = True) -> ExperimentResult:
    """Synthetic corpus through every regime to per-regime reports, a comparison and a summary."""
    settings = runtime.settings
    out = Path(out_dir)
    provenance = Provenance(settings, "pipeline")
    provenance.seeds.update(synth_seed=settings.synth_seed, external_seed=settings.external_seed)

    corpus = generate_synthetic_corpus(settings.synth_num_queries, settings.synth_vocab_size, settings.synth_seed)
    train, dev = split_queries(corpus.queries, settings.synth_dev_fraction, settings.synth_seed)
    write_jsonl(out / "passages.jsonl", corpus.passages)
    write_jsonl(out / "train_queries.jsonl", train)
    write_jsonl(out / "dev_queries.jsonl", dev)
    write_qrels(out / "qrels.tsv", corpus.qrels)

    resources = runtime.resources()
    align_noise = runtime.noise_config(settings.align_noise_types, derive_seed(settings.master_seed, "train-noise"))
    eval_noise = runtime.noise_config(seed=derive_seed(settings.master_seed, "eval-noise"))
    train_noised = noise_rounds(
        train,
        align_noise,
        settings.align_noise_rounds,
        resources,
        runtime.rewriter_for(align_noise),
        settings.noise_workers,
    )
    # DA trains on the first round only.
    first_round = train_noised[: len(train) * len(align_noise.enabled_types)]
    dev_noised = noise_dataset(dev, eval_noise, resources, runtime.rewriter_for(eval_noise), settings.noise_workers)
    write_jsonl(out / "train_noised.jsonl", train_noised)
    write_jsonl(out / "dev_noised.jsonl", dev_noised)

    def evaluate(regime: str, query: EncoderParams, index: DocumentIndex) -> EvalReport:
        nprobe = min(settings.ivf_nprobe, index.ivf.num_centroids) if index.ivf is not None else None
        report = evaluate_noise_robustness(
            query,
            index,
            dev,
            dev_noised,
            corpus.qrels,
            settings.eval_depths,
            settings.query_max_tokens,
            regime=regime,
            seed=settings.master_seed,
            metric="accuracy",
            nprobe=nprobe,
        )
        write_report_csv(report, out / f"report_{regime}.csv")
        provenance.add_output(f"report_{regime}", out / f"report_{regime}.csv")
        return report

    reports: dict[str, EvalReport] = {}

    baseline = train_baseline(train, corpus.passages, corpus.qrels, settings.train_config("baseline"))
    baseline_index = _index_for(runtime, baseline.document, corpus.passages)
    save_model(baseline.query, out / "baseline" / "query.model")
    save_model(baseline.document, out / "baseline" / "document.model")
    save_index(baseline_index, out / "baseline" / "index.bin")
    reports["baseline"] = evaluate("baseline", baseline.query, baseline_index)

    align_config = settings.train_config("capot")
    aligned = align_capot(baseline.query, epoch_sampler(train, train_noised, align_config.seed), align_config)
    save_model(aligned, out / "capot" / "query.model")
    reports["capot"] = evaluate("capot", aligned, baseline_index)

    augmented = train_data_augmentation(train, first_round, corpus.passages, corpus.qrels, settings.train_config("da"))
    reports["da"] = evaluate("da", augmented.query, _index_for(runtime, augmented.document, corpus.passages))

    external = generate_external_queries(len(train), corpus.vocabulary, settings.external_seed)
    external_noise = align_noise.model_copy(update={"master_seed": derive_seed(settings.external_seed, "external-noise")})
    external_noised = noise_rounds(
        external,
        external_noise,
        settings.align_noise_rounds,
        resources,
        runtime.rewriter_for(external_noise),
        settings.noise_workers,
    )
    write_jsonl(out / "external_queries.jsonl", external)

    pretrained = pretrain_align(
        external,
        external_noised,
        train,
        corpus.passages,
        corpus.qrels,
        settings.pretrain_config(),
        settings.train_config("pt"),
    )
    save_model(pretrained.stage_one, out / "pt" / "stage1_query.model")
    reports["pt"] = evaluate("pt", pretrained.pair.query, _index_for(runtime, pretrained.pair.document, corpus.passages))

    if include_cross_corpus:
        # Same triple count as the in-distribution run, so the step count matches.
        cross = align_capot(baseline.query, epoch_sampler(external, external_noised, align_config.seed), align_config)
        reports[CROSS_CORPUS_REGIME] = evaluate(CROSS_CORPUS_REGIME, cross, baseline_index)

    comparison = compare_runs([reports[regime] for regime in REGIME_ORDER])
    write_comparison_csv(comparison, out / "comparison.csv")
    provenance.add_output("comparison", out / "comparison.csv")

    summary = {
        "depths": list(reports["baseline"].depths),
        "typo_accuracy": {name: report.accuracy[TYPOS_ROW] for name, report in reports.items()},
        "clean_accuracy": {name: report.accuracy[CLEAN_ROW] for name, report in reports.items()},
        "checks": directional_checks(reports),
        "train_queries": len(train),
        "dev_queries": len(dev),
        "passages": len(corpus.passages),
    }
    write_json(out / "summary.json", summary)
    provenance.add_output("summary", out / "summary.json")
    provenance.extra["checks"] = summary["checks"]
    provenance.finish()
    logger.info("Pipeline checks: %s", summary["checks"])
    return ExperimentResult(reports=reports, summary=summary)
