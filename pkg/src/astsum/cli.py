"""Command-line entry point.

Exit codes: 0 ok, 1 training failure, 2 parse error, 3 I/O error,
4 configuration error, 5 data error, 6 checkpoint error.
Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .ast_core import ast_from_json, ast_to_json, parse_source
from .config import RunConfig
from .data import CorpusError, detokenize, read_corpus
from .errors import (
    AstsumError,
    CheckpointError,
    ConfigError,
    EmptyCorpus,
    LengthError,
    LexError,
    ParseError,
    SchemaError,
    StructureError,
)
from .linearize import linearize, preorder
from .model import load_checkpoint, save_checkpoint
from .relations import NONE, binary_tree_sparsity, build_head_masks, relation_matrices, sparsity_report

EXIT_OK, EXIT_TRAIN, EXIT_PARSE, EXIT_IO, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5, 6

log = logging.getLogger("astsum")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path) -> str:
    if path is None or path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _load_ast(args):
    """Tree from ``--ast`` JSON or MiniLang source (``--in`` or stdin)."""
    try:
        if getattr(args, "ast", None):
            return ast_from_json(_read_text(args.ast))
        return parse_source(_read_text(args.input))
    except (LexError, ParseError) as exc:
        raise CliError(EXIT_PARSE, f"parse error: {exc}") from None
    except (SchemaError, StructureError) as exc:
        raise CliError(EXIT_PARSE, f"invalid AST JSON: {exc}") from None


def _run_config(args) -> RunConfig:
    try:
        base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
        overrides = {
            key: getattr(args, key, None)
            for key in ("seed", "epochs", "batch_size", "patience", "lr", "beam", "out", "data", "checkpoint")
        }
        if getattr(args, "traversal", None):
            overrides["traversal"] = args.traversal
        return base.override(**overrides)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None


def _load_checkpoint(path):
    if not path:
        raise CliError(EXIT_CONFIG, "a checkpoint path is required (--checkpoint)")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint error: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    print(ast_to_json(_load_ast(args)))
    return EXIT_OK


def cmd_linearize(args) -> int:
    ast = _load_ast(args)
    print(json.dumps(linearize(ast, args.traversal).to_obj(), ensure_ascii=False))
    return EXIT_OK


def cmd_relations(args) -> int:
    config = _run_config(args).model
    ast = _load_ast(args)
    seq = preorder(ast)
    rel = relation_matrices(ast, seq)
    patterns = build_head_masks(rel.A, rel.S, config)

    def jsonable(matrix):
        return [[None if v == NONE else int(v) for v in row] for row in matrix]

    doc = {
        "n": seq.n,
        "tokens": list(seq.tokens),
        "A": jsonable(rel.A),
        "S": jsonable(rel.S),
        "delta_anc": config.delta_anc,
        "delta_sib": config.delta_sib,
        **{k: v for k, v in sparsity_report(patterns).items() if k != "n"},
    }
    print(json.dumps(doc, ensure_ascii=False))
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .training import train

    run = _run_config(args)
    if run.traversal != "pot":
        raise CliError(EXIT_CONFIG, "config error: the encoder trains on the POT traversal only")
    if not run.data:
        raise CliError(EXIT_CONFIG, "config error: no training data given (--data or 'data' key)")
    if not run.out:
        raise CliError(EXIT_CONFIG, "config error: no output directory given (--out or 'out' key)")
    try:
        corpus = read_corpus(run.data)
    except CorpusError as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from None
    if not len(corpus.split("train")):
        raise CliError(EXIT_DATA, f"data error: {run.data} holds no training samples")
    out = _out_dir(run.out)

    log_path = out / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as log_file:

        def on_epoch(entry):
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
            log.info("epoch %d train_loss %.6f", entry["epoch"], entry["train_loss"])

        try:
            checkpoint, history = train(run.model, corpus, batch_size=run.batch_size, epochs=run.epochs,
                                        patience=run.patience, min_freq=run.min_freq, on_epoch=on_epoch)
        except LengthError as exc:
            raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
        except (EmptyCorpus, CorpusError) as exc:
            raise CliError(EXIT_DATA, f"data error: {exc}") from None
        except (ArithmeticError, AstsumError) as exc:
            raise CliError(EXIT_TRAIN, f"training failed: {exc}") from None

    try:
        save_checkpoint(out / "checkpoint.json", checkpoint)
        (out / "vocab_src.json").write_text(checkpoint.vocab_src.to_json() + "\n", encoding="utf-8")
        (out / "vocab_tgt.json").write_text(checkpoint.vocab_tgt.to_json() + "\n", encoding="utf-8")
        (out / "run_config.json").write_text(json.dumps(run.to_dict(), indent=2) + "\n", encoding="utf-8")
        plot_training_log(history, out / "loss_curve.png")
    except (OSError, CheckpointError) as exc:
        raise CliError(EXIT_IO, f"cannot write outputs: {exc}") from None
    last = history[-1]
    print(f"epochs={len(history)} final_train_loss={last['train_loss']:.6f} "
          f"final_valid_loss={'-' if last['valid_loss'] is None else format(last['valid_loss'], '.6f')} "
          f"checkpoint={out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    from .evaluation import summarize_unit

    checkpoint = _load_checkpoint(args.checkpoint)
    ast = _load_ast(args)
    beam = args.beam if args.beam is not None else None
    if beam is not None and beam < 1:
        raise CliError(EXIT_CONFIG, "config error: --beam must be >= 1")
    print(detokenize(summarize_unit(checkpoint, ast, beam)))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate, load_baselines, reference_rows, render_report, report_to_obj
    from .plotting import plot_metrics

    checkpoint = _load_checkpoint(args.checkpoint)
    if not args.data:
        raise CliError(EXIT_CONFIG, "config error: --data is required")
    try:
        corpus = read_corpus(args.data).split(args.split)
    except CorpusError as exc:
        raise CliError(EXIT_DATA, f"data error: {exc}") from None
    if not len(corpus):
        raise CliError(EXIT_DATA, f"data error: no samples in split {args.split!r} of {args.data}")
    if args.beam is not None and args.beam < 1:
        raise CliError(EXIT_CONFIG, "config error: --beam must be >= 1")
    report = evaluate(checkpoint, corpus, args.beam)
    table = load_baselines()
    text = render_report(report, table, all_rows=args.all_baselines)
    obj = report_to_obj(report, table)
    print(json.dumps(obj, indent=2) if args.json else text)
    if args.out:
        out = _out_dir(args.out)
        try:
            (out / "report.txt").write_text(text + "\n", encoding="utf-8")
            (out / "report.json").write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
            plot_metrics(report, reference_rows(table), out / "metrics.png")
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write report: {exc}") from None
    return EXIT_OK


_RANGE = re.compile(r"^\s*(\d+)\s*(?:(?:\.\.|-|:)\s*(\d+))?\s*$")
MAX_BENCH_DEPTH = 10


def parse_depths(text: str) -> list[int]:
    m = _RANGE.match(text or "")
    if not m:
        raise ConfigError(f"bad depth range {text!r}; use e.g. 2..6")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) else lo
    if lo < 1 or hi < lo or hi > MAX_BENCH_DEPTH:
        raise ConfigError(f"depth range must satisfy 1 <= lo <= hi <= {MAX_BENCH_DEPTH}, got {text!r}")
    return list(range(lo, hi + 1))


BENCH_FIELDS = ("depth", "n", "n_squared", "ancestor", "sibling", "ancestor_ratio", "sibling_ratio")


def cmd_bench(args) -> int:
    try:
        depths = parse_depths(args.depths)
        if args.delta is not None and args.delta < 1:
            raise ConfigError("--delta must be >= 1")
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
    rows = [binary_tree_sparsity(d, args.delta) for d in depths]
    writer = csv.DictWriter(sys.stdout, fieldnames=BENCH_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{row[k]:.6f}" if k.endswith("ratio") else row[k]) for k in BENCH_FIELDS})
    if args.out:
        from .plotting import plot_sparsity

        out = _out_dir(args.out)
        with (out / "sparsity.csv").open("w", encoding="utf-8", newline="") as fh:
            file_writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
            file_writer.writeheader()
            file_writer.writerows(rows)
        plot_sparsity(rows, out / "sparsity.png")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_source_args(p):
    p.add_argument("--in", dest="input", metavar="FILE", help="MiniLang source file (default: stdin)")
    p.add_argument("--ast", metavar="FILE", help="AST JSON file instead of MiniLang source")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="run config JSON (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="astsum", description="AST-structured code summarization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse MiniLang into AST JSON")
    p.add_argument("--in", dest="input", metavar="FILE", help="MiniLang source file (default: stdin)")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("linearize", parents=[common], help="emit the POT or SBT traversal")
    _add_source_args(p)
    p.add_argument("--traversal", choices=("pot", "sbt"), default="pot")
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("relations", parents=[common], help="emit distance matrices and head mask counts")
    _add_source_args(p)
    p.set_defaults(func=cmd_relations)

    p = sub.add_parser("train", parents=[common], help="train a model on a JSONL corpus")
    p.add_argument("--data", metavar="FILE")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", parents=[common], help="summarize one code unit")
    p.add_argument("--checkpoint", metavar="FILE", required=True)
    _add_source_args(p)
    p.add_argument("--beam", type=int)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a corpus split")
    p.add_argument("--checkpoint", metavar="FILE", required=True)
    p.add_argument("--data", metavar="FILE", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--beam", type=int)
    p.add_argument("--json", action="store_true", help="print the JSON report instead of the text table")
    p.add_argument("--all-baselines", action="store_true", help="list every reference row, not only AST-MHSA")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="attention sparsity on perfect binary trees (CSV)")
    p.add_argument("--depths", default="2..6")
    p.add_argument("--delta", type=int, help="distance threshold (default: unbounded)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"astsum {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"astsum {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
