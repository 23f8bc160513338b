from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Any, Optional, Sequence

from ..config import Settings
from ..dataio import (
    file_sha256,
    manifest_path,
    read_noised,
    read_passages,
    read_qrels,
    read_queries,
    write_json,
    write_jsonl,
    write_qrels,
    write_search_results,
)
from ..errors import DataError
from ..models import RunManifest, iso_now
from ..runtime import Runtime
from ..services.encoder import encode_texts, load_model, save_model
from ..services.evaluation import (
    compare_runs,
    evaluate_noise_robustness,
    read_report_csv,
    write_comparison_csv,
    write_report_csv,
)
from ..services.index import build_index, build_ivf, load_index, save_index, search_batch
from ..services.noise import noise_rounds
from ..services.synthetic import generate_synthetic_corpus, split_queries
from .training import (
    align_capot,
    epoch_sampler,
    pretrain_align,
    train_baseline,
    train_data_augmentation,
)

logger = logging.getLogger(__name__)


class Provenance:
    """Collects inputs and outputs of one command and writes a manifest next to each artifact."""

    def __init__(self, settings: Settings, command: str, regime: Optional[str] = None):
        self.settings = settings
        self.command = command
        self.regime = regime
        self.started_at = iso_now()
        self._clock = time.monotonic()
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {"master_seed": settings.master_seed}
        self.extra: dict[str, Any] = {}

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_sha256(path)

    def add_output(self, name: str, path: str | Path) -> None:
        self.outputs[name] = str(path)

    def finish(self) -> RunManifest:
        manifest = RunManifest(
            command=self.command,
            regime=self.regime,
            config_hash=self.settings.config_hash(),
            settings=self.settings.model_dump(mode="json"),
            seeds=self.seeds,
            inputs=self.inputs,
            outputs=self.outputs,
            extra=self.extra,
            started_at=self.started_at,
            finished_at=iso_now(),
            wall_clock_seconds=round(time.monotonic() - self._clock, 3),
        )
        payload = manifest.model_dump(mode="json")
        for path in self.outputs.values():
            write_json(manifest_path(path), payload)
        logger.info("%s finished in %.3fs (%d outputs)", self.command, manifest.wall_clock_seconds, len(self.outputs))
        return manifest


def _require_queries(path: str | Path):
    queries = read_queries(path)
    if not queries:
        raise DataError("no queries")
    return queries


def run_synth(
    runtime: Runtime,
    out_dir: str,
    num_queries: Optional[int] = None,
    vocab_size: Optional[int] = None,
    seed: Optional[int] = None,
) -> dict[str, Any]:
    settings = runtime.settings
    num_queries = num_queries or settings.synth_num_queries
    vocab_size = vocab_size or settings.synth_vocab_size
    seed = settings.synth_seed if seed is None else seed

    provenance = Provenance(settings, "synth")
    provenance.seeds["synth_seed"] = seed
    corpus = generate_synthetic_corpus(num_queries, vocab_size, seed)
    train, dev = split_queries(corpus.queries, settings.synth_dev_fraction, seed)

    out = Path(out_dir)
    files = {
        "queries": out / "queries.jsonl",
        "passages": out / "passages.jsonl",
        "qrels": out / "qrels.tsv",
        "train_queries": out / "train_queries.jsonl",
        "dev_queries": out / "dev_queries.jsonl",
        "train_qrels": out / "train_qrels.tsv",
    }
    write_jsonl(files["queries"], corpus.queries)
    write_jsonl(files["passages"], corpus.passages)
    write_qrels(files["qrels"], corpus.qrels)
    write_jsonl(files["train_queries"], train)
    write_jsonl(files["dev_queries"], dev)
    write_qrels(files["train_qrels"], {query.id: corpus.qrels[query.id] for query in train})
    for name, path in files.items():
        provenance.add_output(name, path)
    provenance.extra.update(num_queries=num_queries, vocab_size=vocab_size, passages=len(corpus.passages))
    provenance.finish()
    return {"queries": len(corpus.queries), "passages": len(corpus.passages), "train": len(train), "dev": len(dev)}


def run_noise(
    runtime: Runtime,
    queries_path: str,
    out_path: str,
    types: Optional[Sequence[str]] = None,
    seed: Optional[int] = None,
    rounds: int = 1,
) -> dict[str, Any]:
    settings = runtime.settings
    provenance = Provenance(settings, "noise")
    queries = _require_queries(queries_path)
    provenance.add_input(queries_path)

    config = runtime.noise_config(types, seed)
    provenance.seeds["noise_seed"] = config.master_seed
    records = noise_rounds(
        queries,
        config,
        rounds,
        resources=runtime.resources(),
        rewriter=runtime.rewriter_for(config),
        workers=settings.noise_workers,
    )
    write_jsonl(out_path, records)
    provenance.add_output("noised", out_path)
    provenance.extra.update(noise_types=list(config.enabled_types), rounds=rounds)
    provenance.finish()
    return {"records": len(records), "types": list(config.enabled_types), "rounds": rounds}


def run_train(
    runtime: Runtime,
    regime: str,
    queries_path: str,
    passages_path: str,
    qrels_path: str,
    out_dir: str,
    noised_path: Optional[str] = None,
    external_queries_path: Optional[str] = None,
) -> dict[str, Any]:
    settings = runtime.settings
    if regime not in ("baseline", "da", "pt"):
        raise DataError(f"train supports baseline, da and pt regimes, not {regime!r}")
    provenance = Provenance(settings, "train", regime)
    queries = _require_queries(queries_path)
    passages = read_passages(passages_path)
    qrels = read_qrels(qrels_path)
    for path in (queries_path, passages_path, qrels_path):
        provenance.add_input(path)

    config = settings.train_config(regime)
    out = Path(out_dir)
    if regime == "da":
        if not noised_path:
            raise DataError("da regime requires --noised")
        provenance.add_input(noised_path)
        pair = train_data_augmentation(queries, read_noised(noised_path), passages, qrels, config)
    elif regime == "pt":
        if not external_queries_path:
            raise DataError("pt regime requires --external-queries")
        provenance.add_input(external_queries_path)
        external = _require_queries(external_queries_path)
        noise_config = runtime.noise_config(settings.align_noise_types, settings.external_seed)
        external_noised = noise_rounds(
            external,
            noise_config,
            settings.align_noise_rounds,
            runtime.resources(),
            runtime.rewriter_for(noise_config),
        )
        result = pretrain_align(
            external, external_noised, queries, passages, qrels, settings.pretrain_config(), config
        )
        save_model(result.stage_one, out / "stage1_query.model")
        provenance.add_output("stage1_query", out / "stage1_query.model")
        pair = result.pair
    else:
        pair = train_baseline(queries, passages, qrels, config)

    save_model(pair.query, out / "query.model")
    save_model(pair.document, out / "document.model")
    provenance.add_output("query", out / "query.model")
    provenance.add_output("document", out / "document.model")
    provenance.seeds["train_seed"] = config.seed
    provenance.extra["loss_trace"] = pair.loss_trace
    provenance.finish()
    return {"regime": regime, "epochs": config.epochs, "final_loss": pair.loss_trace[-1] if pair.loss_trace else None}


def run_index(
    runtime: Runtime,
    model_path: str,
    passages_path: str,
    out_path: str,
    ivf_centroids: Optional[int] = None,
) -> dict[str, Any]:
    settings = runtime.settings
    provenance = Provenance(settings, "index")
    document = load_model(model_path)
    passages = read_passages(passages_path)
    provenance.add_input(model_path)
    provenance.add_input(passages_path)

    index = build_index(document, passages, settings.passage_max_tokens)
    centroids = settings.ivf_centroids if ivf_centroids is None else ivf_centroids
    if centroids:
        index = build_ivf(index, centroids, settings.master_seed)
    save_index(index, out_path)
    provenance.add_output("index", out_path)
    provenance.finish()
    return {"documents": index.num_docs, "dim": index.dim, "ivf_centroids": centroids, "sha256": file_sha256(out_path)}


def run_align(
    runtime: Runtime,
    model_path: str,
    queries_path: str,
    noised_path: str,
    index_path: str,
    out_path: str,
) -> dict[str, Any]:
    """CAPOT on the query tower; the index file is only hashed, before and after."""
    settings = runtime.settings
    provenance = Provenance(settings, "align", "capot")
    index_before = file_sha256(index_path)
    queries = _require_queries(queries_path)
    noised = read_noised(noised_path)
    query_params = load_model(model_path)
    for path in (model_path, queries_path, noised_path, index_path):
        provenance.add_input(path)

    config = settings.train_config("capot")
    aligned = align_capot(query_params, epoch_sampler(queries, noised, config.seed), config)
    save_model(aligned, out_path)

    index_after = file_sha256(index_path)
    if index_after != index_before:
        raise DataError(f"index file {index_path} changed during alignment")
    provenance.add_output("aligned_query", out_path)
    provenance.seeds["align_seed"] = config.seed
    provenance.extra.update(index_sha256_before=index_before, index_sha256_after=index_after)
    provenance.finish()
    return {"index_sha256_before": index_before, "index_sha256_after": index_after, "index_unchanged": True}


def run_search(
    runtime: Runtime,
    model_path: str,
    index_path: str,
    queries_path: str,
    out_path: str,
    k: int = 20,
    nprobe: Optional[int] = None,
) -> dict[str, Any]:
    settings = runtime.settings
    provenance = Provenance(settings, "search")
    queries = _require_queries(queries_path)
    query_params = load_model(model_path)
    index = load_index(index_path)
    for path in (model_path, index_path, queries_path):
        provenance.add_input(path)

    vectors = encode_texts(query_params, [query.text for query in queries], settings.query_max_tokens)
    lists_to_search = nprobe if nprobe is not None else (settings.ivf_nprobe if index.ivf is not None else None)
    if lists_to_search is not None and index.ivf is not None:
        lists_to_search = min(lists_to_search, index.ivf.num_centroids)
    results = search_batch(index, vectors, k, lists_to_search)
    write_search_results(out_path, {query.id: result.pairs() for query, result in zip(queries, results)})
    provenance.add_output("results", out_path)
    provenance.finish()
    return {"queries": len(queries), "k": k}


def run_eval(
    runtime: Runtime,
    model_path: str,
    index_path: str,
    queries_path: str,
    noised_path: str,
    qrels_path: str,
    out_path: str,
    regime: str = "baseline",
    metric: str = "accuracy",
) -> dict[str, Any]:
    settings = runtime.settings
    provenance = Provenance(settings, "eval", regime)
    queries = _require_queries(queries_path)
    noised = read_noised(noised_path)
    qrels = read_qrels(qrels_path)
    query_params = load_model(model_path)
    index = load_index(index_path)
    for path in (model_path, index_path, queries_path, noised_path, qrels_path):
        provenance.add_input(path)

    depths = [settings.mrr_depth] if metric == "mrr" else settings.eval_depths
    nprobe = min(settings.ivf_nprobe, index.ivf.num_centroids) if index.ivf is not None else None
    report = evaluate_noise_robustness(
        query_params,
        index,
        queries,
        noised,
        qrels,
        depths,
        settings.query_max_tokens,
        regime=regime,
        seed=settings.master_seed,
        dataset_hash=file_sha256(noised_path),
        metric=metric,
        nprobe=nprobe,
    )
    write_report_csv(report, out_path)
    provenance.add_output("report", out_path)
    provenance.extra["dataset_hash"] = report.dataset_hash
    provenance.finish()
    return {"rows": report.rows, "depths": list(report.depths), "metric": metric}


def run_compare(runtime: Runtime, report_paths: Sequence[str], out_path: str) -> dict[str, Any]:
    provenance = Provenance(runtime.settings, "compare")
    reports = [read_report_csv(path) for path in report_paths]
    for path in report_paths:
        provenance.add_input(path)
    frame = compare_runs(reports)
    write_comparison_csv(frame, out_path)
    provenance.add_output("comparison", out_path)
    provenance.finish()
    return {"regimes": [report.regime for report in reports], "rows": len(frame)}
