from __future__ import annotations

import pytest

from capot.errors import DataError
from capot.models import NoisedQuery, Passage, Query
from capot.services.encoder import init_params
from capot.services.evaluation import (
    AVERAGE_ROW,
    CLEAN_ROW,
    TYPOS_ROW,
    compare_runs,
    degradation_report,
    evaluate_noise_robustness,
    mrr_at_k,
    read_report_csv,
    relative_loss,
    retrieval_accuracy,
    write_comparison_csv,
    write_report_csv,
)
from capot.services.index import build_index


@pytest.mark.parametrize(
    "clean, noisy, expected",
    [
        (0.7973, 0.7230, -9.31),
        (0.7163, 0.5845, -18.40),
        (0.7940, 0.7586, -4.46),
    ],
)
def test_published_degradation_cells(clean, noisy, expected):
    report = degradation_report({20: clean}, {"rcs": {20: noisy}}, depths=[20])
    assert 100 * report.relative_loss(AVERAGE_ROW, 20) == pytest.approx(expected, abs=0.01)


def test_average_and_typo_rows():
    noisy = {"rcs": {20: 0.5}, "kcs": {20: 0.6}, "cd": {20: 0.7}, "synonym": {20: 0.9}}
    report = degradation_report({20: 0.8}, noisy, depths=[20])
    assert report.accuracy[TYPOS_ROW][20] == pytest.approx(0.6)
    assert report.accuracy[AVERAGE_ROW][20] == pytest.approx(0.675)
    assert report.rows[0] == CLEAN_ROW
    assert report.relative_loss(CLEAN_ROW, 20) == 0.0


def test_typo_row_needs_all_three_typo_types():
    report = degradation_report({20: 0.8}, {"rcs": {20: 0.5}, "cd": {20: 0.7}}, depths=[20])
    assert TYPOS_ROW not in report.rows


def test_report_validation():
    with pytest.raises(DataError, match="unknown noise"):
        degradation_report({20: 0.8}, {"shout": {20: 0.1}}, depths=[20])
    with pytest.raises(DataError, match="depths"):
        degradation_report({20: 0.8}, {"rcs": {100: 0.1}}, depths=[20])
    with pytest.raises(DataError, match="outside"):
        degradation_report({20: 1.2}, {}, depths=[20])


def test_relative_loss_with_zero_clean_accuracy():
    assert relative_loss(0.3, 0.0) == 0.0


def test_retrieval_accuracy_and_mrr():
    results = {"q1": ["p3", "p1", "p9"], "q2": ["p7", "p8", "p2"], "q3": ["p5"]}
    qrels = {"q1": {"p1"}, "q2": {"p2"}, "q3": {"p4"}}
    assert retrieval_accuracy(results, qrels, 1) == 0.0
    assert retrieval_accuracy(results, qrels, 2) == pytest.approx(1 / 3)
    assert retrieval_accuracy(results, qrels, 3) == pytest.approx(2 / 3)
    assert mrr_at_k(results, qrels, 10) == pytest.approx((1 / 2 + 1 / 3) / 3)
    assert mrr_at_k(results, qrels, 2) == pytest.approx((1 / 2) / 3)


def test_metric_errors():
    with pytest.raises(DataError, match="no queries"):
        retrieval_accuracy({}, {}, 5)
    with pytest.raises(DataError, match="missing from qrels"):
        retrieval_accuracy({"q1": ["p1"]}, {}, 5)


def test_report_csv_round_trip(tmp_path):
    report = degradation_report(
        {20: 0.7973, 100: 0.86}, {"rcs": {20: 0.70, 100: 0.80}, "kcs": {20: 0.72, 100: 0.81}}, depths=[100, 20]
    )
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "noise_type,k,accuracy,relative_loss,regime,seed"
    loaded = read_report_csv(path)
    assert loaded.rows == report.rows
    assert loaded.depths == (20, 100)
    assert loaded.accuracy[CLEAN_ROW][20] == pytest.approx(0.7973)


def test_degradation_arithmetic_is_recomputable_from_csv(tmp_path):
    report = degradation_report({20: 0.7163}, {"rcs": {20: 0.5845}}, depths=[20])
    frame = report.to_frame()
    row = frame[frame.noise_type == "rcs"].iloc[0]
    assert row.accuracy == pytest.approx(58.45)
    assert row.relative_loss == pytest.approx(-18.40, abs=0.01)


def test_compare_runs_matches_comparison_table_arithmetic(tmp_path):
    regular = degradation_report({20: 0.7973}, {"rcs": {20: 0.6712}}, depths=[20], regime="baseline")
    capot = degradation_report({20: 0.7700}, {"rcs": {20: 0.7543}}, depths=[20], regime="capot")
    frame = compare_runs([regular, capot])
    rcs = frame[frame.noise_type == "rcs"].iloc[0]
    assert rcs.CAPOT_loss == pytest.approx(-5.39, abs=0.01)
    assert rcs.CAPOT_delta == pytest.approx(8.31, abs=0.01)
    assert rcs.Regular_delta == 0.0
    write_comparison_csv(frame, tmp_path / "comparison.csv")
    assert (tmp_path / "comparison.csv").read_text(encoding="utf-8").startswith("noise_type,k,Regular_accuracy")


def test_compare_runs_rejects_schema_mismatch():
    one = degradation_report({20: 0.8}, {"rcs": {20: 0.7}}, depths=[20])
    two = degradation_report({20: 0.8}, {"cd": {20: 0.7}}, depths=[20], regime="capot")
    with pytest.raises(DataError, match="schema mismatch"):
        compare_runs([one, two])
    with pytest.raises(DataError):
        compare_runs([])


def _tiny_setup():
    params = init_params(16, 1024, seed=4)
    passages = [
        Passage(id="p1", text="solar panels energy"),
        Passage(id="p2", text="violin concert music"),
        Passage(id="p3", text="mountain hiking trail"),
    ]
    queries = [Query(id="q1", text="solar panels energy"), Query(id="q2", text="violin concert music")]
    qrels = {"q1": {"p1"}, "q2": {"p2"}}
    return params, build_index(params, passages), queries, qrels


def test_evaluate_noise_robustness_on_identical_towers():
    params, index, queries, qrels = _tiny_setup()
    noised = [
        NoisedQuery(anchor_id="q1", noise_type="cd", text="solar panels energy", seed=1),
        NoisedQuery(anchor_id="q2", noise_type="cd", text="violin concert music", seed=2),
    ]
    report = evaluate_noise_robustness(params, index, queries, noised, qrels, [1, 3], max_tokens=28)
    assert report.accuracy[CLEAN_ROW] == {1: 1.0, 3: 1.0}
    assert report.accuracy["cd"] == {1: 1.0, 3: 1.0}

    mrr = evaluate_noise_robustness(params, index, queries, noised, qrels, [10], max_tokens=28, metric="mrr")
    assert mrr.metric == "mrr"
    assert mrr.accuracy[CLEAN_ROW][10] == 1.0


def test_evaluate_rejects_mismatched_noise_coverage():
    params, index, queries, qrels = _tiny_setup()
    noised = [NoisedQuery(anchor_id="q1", noise_type="cd", text="solar panel", seed=1)]
    with pytest.raises(DataError, match="mismatched id sets"):
        evaluate_noise_robustness(params, index, queries, noised, qrels, [1], max_tokens=28)
    with pytest.raises(DataError, match="no queries"):
        evaluate_noise_robustness(params, index, [], [], qrels, [1], max_tokens=28)
