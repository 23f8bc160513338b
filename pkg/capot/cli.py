from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, NoReturn, Optional, Sequence

from . import create_runtime
from .errors import CapotError, DataError, UsageError, sanitize_error
from .workflows import experiment, runner

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _csv_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _override(value: str) -> tuple[str, str]:
    if "=" not in value:
        raise argparse.ArgumentTypeError(f"expected key=value, got {value!r}")
    key, raw = value.split("=", 1)
    return key.strip(), raw.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capot", description="Noise-robust dense retrieval with contrastive alignment.")
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--set", dest="overrides", action="append", type=_override, default=[], metavar="KEY=VALUE")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = commands.add_parser("synth", help="generate the synthetic corpus")
    synth.add_argument("--out", required=True)
    synth.add_argument("--num-queries", type=int)
    synth.add_argument("--vocab-size", type=int)
    synth.add_argument("--seed", type=int)

    noise = commands.add_parser("noise", help="noise a query file")
    noise.add_argument("--queries", required=True)
    noise.add_argument("--out", required=True)
    noise.add_argument("--types", type=_csv_list)
    noise.add_argument("--seed", type=int)
    noise.add_argument("--rounds", type=int, default=1)

    train = commands.add_parser("train", help="train a bi-encoder")
    train.add_argument("--regime", choices=["baseline", "da", "pt"], default="baseline")
    train.add_argument("--queries", required=True)
    train.add_argument("--passages", required=True)
    train.add_argument("--qrels", required=True)
    train.add_argument("--noised")
    train.add_argument("--external-queries")
    train.add_argument("--out", required=True)

    index = commands.add_parser("index", help="encode passages into an index")
    index.add_argument("--model", required=True)
    index.add_argument("--passages", required=True)
    index.add_argument("--out", required=True)
    index.add_argument("--ivf-centroids", type=int)

    align = commands.add_parser("align", help="align the query encoder against a frozen index")
    align.add_argument("--model", required=True)
    align.add_argument("--queries", required=True)
    align.add_argument("--noised", required=True)
    align.add_argument("--index", required=True)
    align.add_argument("--out", required=True)

    search = commands.add_parser("search", help="rank passages for each query")
    search.add_argument("--model", required=True)
    search.add_argument("--index", required=True)
    search.add_argument("--queries", required=True)
    search.add_argument("--out", required=True)
    search.add_argument("--k", type=int, default=20)
    search.add_argument("--nprobe", type=int)

    evaluate = commands.add_parser("eval", help="degradation report for clean and noised queries")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--index", required=True)
    evaluate.add_argument("--queries", required=True)
    evaluate.add_argument("--noised", required=True)
    evaluate.add_argument("--qrels", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--regime", default="baseline")
    evaluate.add_argument("--metric", choices=["accuracy", "mrr"], default="accuracy")

    compare = commands.add_parser("compare", help="side-by-side regime comparison")
    compare.add_argument("--reports", nargs="+", required=True)
    compare.add_argument("--out", required=True)

    pipeline = commands.add_parser("pipeline", help="run every regime on the synthetic corpus")
    pipeline.add_argument("--out", required=True)
    pipeline.add_argument("--skip-cross-corpus", action="store_true")
    return parser


def dispatch(args: argparse.Namespace) -> dict[str, Any]:
    runtime = create_runtime(args.config, dict(args.overrides))
    logger.info("Running %s", args.command)

    if args.command == "synth":
        return runner.run_synth(runtime, args.out, args.num_queries, args.vocab_size, args.seed)
    if args.command == "noise":
        return runner.run_noise(runtime, args.queries, args.out, args.types, args.seed, args.rounds)
    if args.command == "train":
        return runner.run_train(
            runtime, args.regime, args.queries, args.passages, args.qrels, args.out, args.noised, args.external_queries
        )
    if args.command == "index":
        return runner.run_index(runtime, args.model, args.passages, args.out, args.ivf_centroids)
    if args.command == "align":
        return runner.run_align(runtime, args.model, args.queries, args.noised, args.index, args.out)
    if args.command == "search":
        return runner.run_search(runtime, args.model, args.index, args.queries, args.out, args.k, args.nprobe)
    if args.command == "eval":
        return runner.run_eval(
            runtime, args.model, args.index, args.queries, args.noised, args.qrels, args.out, args.regime, args.metric
        )
    if args.command == "compare":
        return runner.run_compare(runtime, args.reports, args.out)
    if args.command == "pipeline":
        result = experiment.run_experiment(runtime, args.out, include_cross_corpus=not args.skip_cross_corpus)
        return result.summary["checks"]
    raise UsageError(f"unknown command: {args.command}")


def _report_failure(exc: CapotError) -> int:
    logger.info("Command failed: %s", exc.message, exc_info=True)
    payload = {"error": exc.code, "message": sanitize_error(exc, "command failed")}
    print(json.dumps(payload), file=sys.stderr)
    return exc.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = dispatch(args)
    except CapotError as exc:
        return _report_failure(exc)
    except OSError as exc:
        message = f"{exc.strerror}: {exc.filename}" if exc.filename and exc.strerror else str(exc)
        return _report_failure(DataError(message))

    print(json.dumps(result, sort_keys=True, default=str))
    return 0
