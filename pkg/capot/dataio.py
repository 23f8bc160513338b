from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, TypeVar

from pydantic import BaseModel, ValidationError

from .errors import DataError
from .models import NoisedQuery, Passage, Query

ModelT = TypeVar("ModelT", bound=BaseModel)

Qrels = dict[str, set[str]]


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    return digest.hexdigest()


def _open_for_read(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8") from exc


def _prepare_write(path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def read_jsonl(path: str | Path, model: type[ModelT]) -> list[ModelT]:
    records: list[ModelT] = []
    for number, line in enumerate(_open_for_read(path), start=1):
        if not line.strip():
            continue
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as exc:
            first = exc.errors()[0] if exc.errors() else {}
            field = ".".join(str(part) for part in first.get("loc", ()))
            detail = first.get("msg", "invalid record")
            raise DataError(f"{Path(path).name}:{number}: {field + ': ' if field else ''}{detail}") from exc
    return records


def write_jsonl(path: str | Path, records: Iterable[BaseModel]) -> None:
    target = _prepare_write(path)
    with open(target, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record.model_dump_json())
            handle.write("\n")


def _unique_ids(records: Sequence[Query], path: str | Path) -> None:
    seen: set[str] = set()
    for record in records:
        if record.id in seen:
            raise DataError(f"{Path(path).name}: duplicate id {record.id!r}")
        seen.add(record.id)


def read_queries(path: str | Path) -> list[Query]:
    queries = read_jsonl(path, Query)
    _unique_ids(queries, path)
    return queries


def read_passages(path: str | Path) -> list[Passage]:
    passages = read_jsonl(path, Passage)
    _unique_ids(passages, path)
    return passages


def read_noised(path: str | Path) -> list[NoisedQuery]:
    return read_jsonl(path, NoisedQuery)


def read_qrels(path: str | Path) -> Qrels:
    qrels: Qrels = {}
    for number, line in enumerate(_open_for_read(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise DataError(f"{Path(path).name}:{number}: expected query_id TAB passage_id")
        qrels.setdefault(parts[0].strip(), set()).add(parts[1].strip())
    return qrels


def write_qrels(path: str | Path, qrels: Mapping[str, Iterable[str]]) -> None:
    target = _prepare_write(path)
    with open(target, "w", encoding="utf-8", newline="\n") as handle:
        for query_id, passage_ids in qrels.items():
            for passage_id in sorted(passage_ids):
                handle.write(f"{query_id}\t{passage_id}\n")


def write_search_results(path: str | Path, rankings: Mapping[str, Sequence[tuple[str, float]]]) -> None:
    target = _prepare_write(path)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["query_id", "rank", "passage_id", "score"])
        for query_id, ranking in rankings.items():
            for rank, (passage_id, score) in enumerate(ranking, start=1):
                writer.writerow([query_id, rank, passage_id, f"{score:.8f}"])


def read_search_results(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    rankings: dict[str, list[tuple[str, float]]] = {}
    lines = _open_for_read(path)
    reader = csv.DictReader(lines, delimiter="\t")
    if reader.fieldnames != ["query_id", "rank", "passage_id", "score"]:
        raise DataError(f"{Path(path).name}: unexpected search result header {reader.fieldnames}")
    for row in reader:
        rankings.setdefault(row["query_id"], []).append((row["passage_id"], float(row["score"])))
    return rankings


def write_json(path: str | Path, payload: Any) -> None:
    target = _prepare_write(path)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(artifact: str | Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")
