"""Decode a corpus, score it, and report it beside the bundled reference table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from statistics import fmean
from typing import Optional

from .data import Corpus, detokenize, unit_ast
from .errors import EmptyCorpus
from .linearize import preorder
from .metrics import score_all
from .model import Checkpoint, decode_beam, decode_greedy, encode

METRICS = ("bleu", "meteor", "rouge_l")
HEADER = ("method", "language", "BLEU(%)", "METEOR(%)", "ROUGE-L(%)")
REFERENCE_NOTE = "paper-reported, not reproduced"
AVERAGING = "corpus score = mean of sentence scores; METEOR-lite = exact matches only"


@dataclass
class MetricReport:
    bleu: float
    meteor: float
    rouge_l: float
    samples: list[dict] = field(default_factory=list)
    decoding: str = "greedy"

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @classmethod
    def from_samples(cls, samples: list[dict], decoding: str = "greedy") -> "MetricReport":
        if not samples:
            raise EmptyCorpus("nothing to score")
        means = {m: fmean(s[m] for s in samples) for m in METRICS}
        return cls(samples=samples, decoding=decoding, **means)


def load_baselines() -> dict:
    text = resources.files("astsum").joinpath("data/baselines.json").read_text(encoding="utf-8")
    return json.loads(text)


def reference_rows(table: dict, method: Optional[str] = "AST-MHSA") -> list[dict]:
    rows = []
    for row in table["rows"]:
        if method is not None and row["method"] != method:
            continue
        for language in ("java", "python"):
            rows.append({"method": row["method"], "language": language.capitalize(), **row[language]})
    return rows


def summarize_unit(checkpoint: Checkpoint, ast, beam: Optional[int] = None) -> list[str]:
    enc = encode(preorder(ast), ast, checkpoint.params, checkpoint.config, checkpoint.vocab_src)
    if beam is None:
        ids = decode_greedy(enc, checkpoint.params, checkpoint.config)
    else:
        ids = decode_beam(enc, checkpoint.params, checkpoint.config, beam)
    return checkpoint.vocab_tgt.decode(ids)


def score_predictions(pairs, decoding: str = "greedy") -> MetricReport:
    """Score ``(id, prediction tokens, reference tokens)`` triples."""
    samples = []
    for sid, pred, ref in pairs:
        samples.append({"id": sid, "prediction": detokenize(pred), "reference": detokenize(ref),
                        **score_all(list(pred), list(ref))})
    return MetricReport.from_samples(samples, decoding)


def evaluate(checkpoint: Checkpoint, corpus: Corpus, beam: Optional[int] = None) -> MetricReport:
    """Decode every unit of ``corpus`` (greedy unless ``beam`` is given) and score it."""
    if not len(corpus):
        raise EmptyCorpus("evaluation corpus is empty")
    pairs = [(u.id, summarize_unit(checkpoint, unit_ast(u), beam), u.summary) for u in corpus]
    return score_predictions(pairs, "greedy" if beam is None else f"beam-{beam}")


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def render_report(report: MetricReport, table: dict, all_rows: bool = False) -> str:
    """Space-delimited text table: this run first, then the reference rows."""
    lines = [f"# {AVERAGING}; decoding={report.decoding}; samples={report.n_samples}", " ".join(HEADER)]
    lines.append(" ".join(["this-run", "-", _pct(report.bleu), _pct(report.meteor), _pct(report.rouge_l)]))
    for row in reference_rows(table, None if all_rows else "AST-MHSA"):
        lines.append(f"{row['method']} (paper) {row['language']} "
                     f"{row['bleu']:.2f} {row['meteor']:.2f} {row['rouge_l']:.2f}")
    lines.append(f"# reference rows: {REFERENCE_NOTE}")
    return "\n".join(lines)


def report_to_obj(report: MetricReport, table: dict) -> dict:
    return {
        "averaging": AVERAGING,
        "decoding": report.decoding,
        "n_samples": report.n_samples,
        "scores": {m: getattr(report, m) for m in METRICS},
        "scores_percent": {m: round(100.0 * getattr(report, m), 2) for m in METRICS},
        "samples": report.samples,
        "reference": {"note": REFERENCE_NOTE, "rows": reference_rows(table)},
    }


def report_schema() -> dict:
    text = resources.files("astsum").joinpath("data/report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)
