from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..errors import DataError
from ..models import NOISE_TYPES, TYPO_TYPES, NoisedQuery, Query
from .encoder import EncoderParams, encode_texts
from .index import DocumentIndex, SearchResult, search_batch

logger = logging.getLogger(__name__)

Metric = Literal["accuracy", "mrr"]
Ranking = Union[SearchResult, Sequence[str]]

CLEAN_ROW = "none"
AVERAGE_ROW = "average"
TYPOS_ROW = "typos"
REPORT_COLUMNS = ["noise_type", "k", "accuracy", "relative_loss", "regime", "seed"]
REGIME_LABELS = {"baseline": "Regular", "da": "DA", "pt": "PT", "capot": "CAPOT"}


def _ranked_ids(ranking: Ranking) -> Sequence[str]:
    return ranking.ids if isinstance(ranking, SearchResult) else ranking


def _check_coverage(results: Mapping[str, Ranking], qrels: Mapping[str, Iterable[str]]) -> None:
    if not results:
        raise DataError("no queries")
    missing = sorted(query_id for query_id in results if not qrels.get(query_id))
    if missing:
        preview = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise DataError(f"queries missing from qrels: {preview}")


def retrieval_accuracy(results: Mapping[str, Ranking], qrels: Mapping[str, Iterable[str]], k: int) -> float:
    """Fraction of queries with at least one relevant passage in the top k."""
    _check_coverage(results, qrels)
    hits = 0
    for query_id, ranking in results.items():
        relevant = set(qrels[query_id])
        if any(passage_id in relevant for passage_id in _ranked_ids(ranking)[:k]):
            hits += 1
    return hits / len(results)


def mrr_at_k(results: Mapping[str, Ranking], qrels: Mapping[str, Iterable[str]], k: int = 10) -> float:
    _check_coverage(results, qrels)
    total = 0.0
    for query_id, ranking in results.items():
        relevant = set(qrels[query_id])
        for rank, passage_id in enumerate(_ranked_ids(ranking)[:k], start=1):
            if passage_id in relevant:
                total += 1.0 / rank
                break
    return total / len(results)


def relative_loss(accuracy: float, clean: float) -> float:
    return 0.0 if clean == 0 else (accuracy - clean) / clean


@dataclass
class EvalReport:
    """Per noise type retrieval quality at each depth, with aggregate rows."""

    accuracy: dict[str, dict[int, float]]
    depths: tuple[int, ...]
    regime: str = "baseline"
    seed: int = 0
    dataset_hash: str = ""
    metric: Metric = "accuracy"
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def rows(self) -> list[str]:
        return list(self.accuracy)

    def relative_loss(self, row: str, k: int) -> float:
        return relative_loss(self.accuracy[row][k], self.accuracy[CLEAN_ROW][k])

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                "noise_type": row,
                "k": k,
                "accuracy": round(100.0 * self.accuracy[row][k], 2),
                "relative_loss": round(100.0 * self.relative_loss(row, k), 2),
                "regime": self.regime,
                "seed": self.seed,
            }
            for row in self.rows
            for k in self.depths
        ]
        return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def degradation_report(
    clean_metrics: Mapping[int, float],
    noisy_metrics_by_type: Mapping[str, Mapping[int, float]],
    depths: Sequence[int],
    regime: str = "baseline",
    seed: int = 0,
    dataset_hash: str = "",
    metric: Metric = "accuracy",
) -> EvalReport:
    depths = tuple(sorted(set(depths)))
    if not depths:
        raise DataError("at least one depth is required")
    unknown = [name for name in noisy_metrics_by_type if name not in NOISE_TYPES]
    if unknown:
        raise DataError(f"unknown noise types in report: {', '.join(unknown)}")
    for name, metrics in [(CLEAN_ROW, clean_metrics), *noisy_metrics_by_type.items()]:
        missing = [k for k in depths if k not in metrics]
        if missing:
            raise DataError(f"{name} has no value at depths {missing}")
        out_of_range = [k for k in depths if not 0.0 <= metrics[k] <= 1.0]
        if out_of_range:
            raise DataError(f"{name} has values outside [0, 1] at depths {out_of_range}")

    accuracy: dict[str, dict[int, float]] = {CLEAN_ROW: {k: float(clean_metrics[k]) for k in depths}}
    present = [name for name in NOISE_TYPES if name in noisy_metrics_by_type]
    for name in present:
        accuracy[name] = {k: float(noisy_metrics_by_type[name][k]) for k in depths}
    if present:
        accuracy[AVERAGE_ROW] = {k: float(np.mean([accuracy[name][k] for name in present])) for k in depths}
    if all(name in noisy_metrics_by_type for name in TYPO_TYPES):
        accuracy[TYPOS_ROW] = {k: float(np.mean([accuracy[name][k] for name in TYPO_TYPES])) for k in depths}

    return EvalReport(
        accuracy=accuracy,
        depths=depths,
        regime=regime,
        seed=seed,
        dataset_hash=dataset_hash,
        metric=metric,
    )


def _metric_at(results: Mapping[str, SearchResult], qrels, depths: Sequence[int], metric: Metric) -> dict[int, float]:
    if metric == "mrr":
        return {k: mrr_at_k(results, qrels, k) for k in depths}
    return {k: retrieval_accuracy(results, qrels, k) for k in depths}


def evaluate_noise_robustness(
    query_params: EncoderParams,
    index: DocumentIndex,
    queries: Sequence[Query],
    noised_queries: Sequence[NoisedQuery],
    qrels: Mapping[str, Iterable[str]],
    depths: Sequence[int],
    max_tokens: int,
    regime: str = "baseline",
    seed: int = 0,
    dataset_hash: str = "",
    metric: Metric = "accuracy",
    nprobe: Optional[int] = None,
) -> EvalReport:
    """Search clean and noised queries against a frozen index and build the degradation report."""
    if not queries:
        raise DataError("no queries")
    depths = tuple(sorted(set(depths)))
    search_depth = max(depths)
    clean_ids = {query.id for query in queries}

    by_type: dict[str, list[NoisedQuery]] = {}
    for record in noised_queries:
        by_type.setdefault(record.noise_type, []).append(record)
    for noise_type, records in by_type.items():
        anchors = [record.anchor_id for record in records]
        if len(set(anchors)) != len(anchors) or set(anchors) != clean_ids:
            raise DataError(f"mismatched id sets: {noise_type} records do not cover the clean queries exactly")

    def run(ids: list[str], texts: list[str]) -> dict[str, SearchResult]:
        vectors = encode_texts(query_params, texts, max_tokens)
        return dict(zip(ids, search_batch(index, vectors, search_depth, nprobe)))

    clean_results = run([query.id for query in queries], [query.text for query in queries])
    clean = _metric_at(clean_results, qrels, depths, metric)
    noisy: dict[str, dict[int, float]] = {}
    for noise_type, records in by_type.items():
        results = run([record.anchor_id for record in records], [record.text for record in records])
        noisy[noise_type] = _metric_at(results, qrels, depths, metric)
        logger.info("Evaluated %s noise: %s", noise_type, noisy[noise_type])

    return degradation_report(clean, noisy, depths, regime, seed, dataset_hash, metric)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(target, index=False, float_format="%.2f")


def read_report_csv(path: str | Path, metric: Metric = "accuracy") -> EvalReport:
    try:
        frame = pd.read_csv(path, dtype={"noise_type": str, "regime": str}, keep_default_na=False)
    except FileNotFoundError as exc:
        raise DataError(f"report file not found: {path}") from exc
    if list(frame.columns) != REPORT_COLUMNS:
        raise DataError(f"{path}: expected columns {REPORT_COLUMNS}, got {list(frame.columns)}")
    if frame.empty:
        raise DataError(f"{path}: report is empty")

    accuracy: dict[str, dict[int, float]] = {}
    for row in frame.itertuples(index=False):
        accuracy.setdefault(row.noise_type, {})[int(row.k)] = float(row.accuracy) / 100.0
    if CLEAN_ROW not in accuracy:
        raise DataError(f"{path}: report has no clean row")
    return EvalReport(
        accuracy=accuracy,
        depths=tuple(sorted(frame["k"].astype(int).unique().tolist())),
        regime=str(frame["regime"].iloc[0]),
        seed=int(frame["seed"].iloc[0]),
        metric=metric,
    )


def _labels(reports: Sequence[EvalReport]) -> list[str]:
    labels: list[str] = []
    for report in reports:
        base = REGIME_LABELS.get(report.regime, report.regime)
        label, suffix = base, 2
        while label in labels:
            label, suffix = f"{base}_{suffix}", suffix + 1
        labels.append(label)
    return labels


def compare_runs(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Side-by-side accuracy, loss and delta columns, the first report being the reference."""
    if not reports:
        raise DataError("no reports to compare")
    reference = reports[0]
    for report in reports[1:]:
        if report.depths != reference.depths or report.rows != reference.rows:
            raise DataError(
                f"report schema mismatch: {report.regime} does not share rows and depths with {reference.regime}"
            )

    records = []
    labels = _labels(reports)
    for row in reference.rows:
        for k in reference.depths:
            record: dict[str, object] = {"noise_type": row, "k": k}
            clean = reference.accuracy[CLEAN_ROW][k]
            for label, report in zip(labels, reports):
                value = report.accuracy[row][k]
                record[f"{label}_accuracy"] = 100.0 * value
                record[f"{label}_loss"] = 100.0 * relative_loss(value, clean)
                record[f"{label}_delta"] = 100.0 * (value - reference.accuracy[row][k])
            records.append(record)
    return pd.DataFrame.from_records(records)


def write_comparison_csv(frame: pd.DataFrame, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, float_format="%.2f")
