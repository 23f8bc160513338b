from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from capot.cli import main


@pytest.fixture
def base_args(tmp_path) -> list[str]:
    runs = tmp_path / "runs"
    values = {
        "output_dir": runs,
        "cache_dir": runs / "cache",
        "log_file": runs / "capot.log",
        "embedding_dim": 16,
        "num_buckets": 4096,
        "epochs": 2,
        "align_epochs": 2,
        "align_noise_rounds": 2,
        "batch_size": 8,
        "align_batch_size": 8,
        "noise_workers": 1,
    }
    args: list[str] = []
    for key, value in values.items():
        args += ["--set", f"{key}={value}"]
    return args


def _last_json(stream: str) -> dict:
    return json.loads(stream.strip().splitlines()[-1])


def _run(capsys, *argv: str) -> tuple[int, dict]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, _last_json(captured.out if code == 0 else captured.err)


def test_usage_errors_exit_with_one(capsys, base_args):
    code, payload = _run(capsys, *base_args, "frobnicate")
    assert code == 1
    assert payload["error"] == "usage_error"

    code, payload = _run(capsys, "--set", "no-equals-sign", "synth", "--out", "x")
    assert code == 1


def test_unknown_config_key_is_a_data_error(capsys, base_args, tmp_path):
    code, payload = _run(capsys, *base_args, "--set", "learning_rat=0.1", "synth", "--out", str(tmp_path / "d"))
    assert code == 2
    assert payload == {"error": "config_error", "message": "unknown config keys: learning_rat"}


def test_eval_on_empty_query_file_reports_no_queries(capsys, base_args, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    code, payload = _run(
        capsys,
        *base_args,
        "eval",
        "--model", str(tmp_path / "query.model"),
        "--index", str(tmp_path / "index.bin"),
        "--queries", str(empty),
        "--noised", str(empty),
        "--qrels", str(tmp_path / "qrels.tsv"),
        "--out", str(tmp_path / "report.csv"),
    )
    assert code == 2
    assert payload == {"error": "data_error", "message": "no queries"}


def test_align_with_missing_index_is_a_data_error(capsys, base_args, tmp_path):
    missing = tmp_path / "absent" / "index.bin"
    code = main(
        [
            *base_args,
            "align",
            "--model", str(tmp_path / "query.model"),
            "--queries", str(tmp_path / "queries.jsonl"),
            "--noised", str(tmp_path / "noised.jsonl"),
            "--index", str(missing),
            "--out", str(tmp_path / "aligned.model"),
        ]
    )
    captured = capsys.readouterr()
    assert code == 2
    assert captured.out == ""
    assert _last_json(captured.err) == {"error": "data_error", "message": f"file not found: {missing}"}


def test_filesystem_errors_exit_with_two(capsys, base_args, tmp_path):
    blocker = tmp_path / "not-a-directory"
    blocker.write_text("occupied", encoding="utf-8")
    code, payload = _run(capsys, *base_args, "synth", "--out", str(blocker), "--num-queries", "30", "--vocab-size", "100")
    assert code == 2
    assert payload["error"] == "data_error"
    assert str(blocker) in payload["message"]


def test_missing_rewrite_endpoint_exits_with_three(capsys, base_args, tmp_path):
    queries = tmp_path / "queries.jsonl"
    queries.write_text('{"id": "q1", "text": "buy a film"}\n', encoding="utf-8")
    code, payload = _run(
        capsys,
        *base_args,
        "--set", "rewrite_backend=http",
        "noise",
        "--queries", str(queries),
        "--out", str(tmp_path / "noised.jsonl"),
        "--types", "bt",
    )
    assert code == 3
    assert payload["error"] == "backend_error"


def test_command_chain(capsys, base_args, tmp_path):
    data = tmp_path / "data"
    models = tmp_path / "models"

    code, synth = _run(capsys, *base_args, "synth", "--out", str(data), "--num-queries", "30", "--vocab-size", "100")
    assert code == 0
    assert synth == {"queries": 30, "passages": 150, "train": 24, "dev": 6}
    assert (data / "queries.jsonl.manifest.json").exists()

    code, trained = _run(
        capsys,
        *base_args,
        "train",
        "--queries", str(data / "train_queries.jsonl"),
        "--passages", str(data / "passages.jsonl"),
        "--qrels", str(data / "train_qrels.tsv"),
        "--out", str(models),
    )
    assert code == 0
    assert trained["epochs"] == 2
    manifest = json.loads((models / "query.model.manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "train"
    assert len(manifest["extra"]["loss_trace"]) == 2

    code, indexed = _run(
        capsys, *base_args, "index", "--model", str(models / "document.model"),
        "--passages", str(data / "passages.jsonl"), "--out", str(models / "index.bin"),
    )
    assert code == 0
    assert indexed["documents"] == 150

    code, noised = _run(
        capsys, *base_args, "noise", "--queries", str(data / "train_queries.jsonl"),
        "--out", str(data / "train_noised.jsonl"), "--types", "rcs,kcs,cd", "--rounds", "2",
    )
    assert code == 0
    assert noised == {"records": 24 * 3 * 2, "types": ["rcs", "kcs", "cd"], "rounds": 2}

    document_bytes = (models / "document.model").read_bytes()
    align_args = [
        "align",
        "--model", str(models / "query.model"),
        "--queries", str(data / "train_queries.jsonl"),
        "--noised", str(data / "train_noised.jsonl"),
        "--index", str(models / "index.bin"),
    ]
    code, aligned = _run(capsys, *base_args, *align_args, "--out", str(models / "aligned.model"))
    assert code == 0
    assert aligned["index_unchanged"] is True
    assert aligned["index_sha256_before"] == aligned["index_sha256_after"] == indexed["sha256"]
    code, _ = _run(capsys, *base_args, *align_args, "--out", str(models / "aligned_again.model"))
    assert (models / "aligned.model").read_bytes() == (models / "aligned_again.model").read_bytes()
    assert (models / "document.model").read_bytes() == document_bytes

    code, _ = _run(
        capsys, *base_args, "noise", "--queries", str(data / "dev_queries.jsonl"),
        "--out", str(data / "dev_noised.jsonl"), "--types", "rcs,kcs,cd",
    )
    assert code == 0

    reports = []
    for regime, model in (("baseline", "query.model"), ("capot", "aligned.model")):
        report = models / f"report_{regime}.csv"
        code, evaluated = _run(
            capsys, *base_args, "eval", "--model", str(models / model), "--index", str(models / "index.bin"),
            "--queries", str(data / "dev_queries.jsonl"), "--noised", str(data / "dev_noised.jsonl"),
            "--qrels", str(data / "qrels.tsv"), "--out", str(report), "--regime", regime,
        )
        assert code == 0
        assert evaluated["depths"] == [20, 100, 200]
        assert "typos" in evaluated["rows"]
        reports.append(str(report))

    code, compared = _run(capsys, *base_args, "compare", "--reports", *reports, "--out", str(models / "comparison.csv"))
    assert code == 0
    assert compared["regimes"] == ["baseline", "capot"]
    frame = pd.read_csv(models / "comparison.csv", keep_default_na=False)
    assert {"Regular_accuracy", "CAPOT_loss", "CAPOT_delta"} <= set(frame.columns)

    code, searched = _run(
        capsys, *base_args, "search", "--model", str(models / "aligned.model"), "--index", str(models / "index.bin"),
        "--queries", str(data / "dev_queries.jsonl"), "--out", str(models / "results.tsv"), "--k", "5",
    )
    assert code == 0
    lines = Path(models / "results.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "query_id\trank\tpassage_id\tscore"
    assert len(lines) == 1 + 6 * 5
