"""Corpus ingestion, vocabularies and batching."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .ast_core import Ast, SourceUnit, ast_from_obj, parse_source
from .errors import AstsumError, EmptyCorpus, SchemaError, VocabError
from .linearize import preorder
from .relations import build_head_masks, relation_matrices

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
SPLITS = ("train", "valid", "test")

_SUMMARY_TOKEN = re.compile(r"\w+|[^\w\s]")


class CorpusError(AstsumError):
    """A corpus file that cannot be read or holds an invalid record."""


def tokenize_summary(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace and punctuation, keep punctuation tokens."""
    return tuple(_SUMMARY_TOKEN.findall(text.lower()))


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Token/id mapping with fixed reserved ids PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Iterable[str], min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise VocabError("vocabulary must start with the four reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise VocabError("vocabulary tokens must be unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.min_freq = min_freq

    @classmethod
    def build(cls, sequences: Iterable[Iterable[str]], min_freq: int = 1) -> "Vocabulary":
        counts = Counter(tok for seq in sequences for tok in seq)
        for tok in RESERVED:
            counts.pop(tok, None)
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + kept, min_freq)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_json(self) -> str:
        return json.dumps({"min_freq": self.min_freq, "tokens": self.itos}, indent=2, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(obj["tokens"], obj.get("min_freq", 1))


# --------------------------------------------------------------------------
# corpus


@dataclass
class Corpus:
    units: list[SourceUnit]

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def split(self, name: str) -> "Corpus":
        return Corpus([u for u in self.units if u.split == name])


def unit_ast(unit: SourceUnit) -> Ast:
    return unit.ast if unit.ast is not None else parse_source(unit.code)


def unit_from_obj(obj: dict, where: str = "record") -> SourceUnit:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    for key in ("id", "summary"):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise SchemaError(f"{where}: field {key!r} must be a nonempty string")
    code = obj.get("code", "")
    if not isinstance(code, str):
        raise SchemaError(f"{where}: field 'code' must be a string")
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise SchemaError(f"{where}: split must be one of {SPLITS}, got {split!r}")
    ast = ast_from_obj(obj["ast"]) if obj.get("ast") is not None else parse_source(code)
    summary = tokenize_summary(obj["summary"])
    if not summary:
        raise SchemaError(f"{where}: summary has no tokens")
    return SourceUnit(obj["id"], code, summary, ast, split)


def read_corpus(path) -> Corpus:
    """Load a JSON Lines corpus; every record is parsed (or its AST validated) up front."""
    units = []
    seen = set()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            unit = unit_from_obj(obj, f"line {lineno}")
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON ({exc})") from None
        except AstsumError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
        if unit.id in seen:
            raise CorpusError(f"line {lineno}: duplicate id {unit.id!r}")
        seen.add(unit.id)
        units.append(unit)
    return Corpus(units)


def build_vocab(corpus: Corpus, min_freq: int = 1) -> tuple[Vocabulary, Vocabulary]:
    train = corpus.split("train")
    if not len(train):
        raise EmptyCorpus("no training samples to build vocabularies from")
    asts = [unit_ast(u) for u in train]
    src = Vocabulary.build((preorder(a).tokens for a in asts), min_freq)
    tgt = Vocabulary.build((u.summary for u in train), min_freq)
    return src, tgt


# --------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class Example:
    """One encoded sample with its own attention patterns."""

    id: str
    src_ids: np.ndarray
    allow: np.ndarray  # (H, n, n)
    bias_index: np.ndarray  # (H, n, n)
    tgt_ids: np.ndarray  # summary ids without BOS/EOS


@dataclass(frozen=True)
class Batch:
    ids: list[str]
    src_ids: np.ndarray  # (B, n) padded with PAD
    src_mask: np.ndarray  # (B, n) True at real positions
    allow: np.ndarray  # (B, H, n, n)
    bias_index: np.ndarray  # (B, H, n, n)
    tgt_in: np.ndarray  # (B, m) BOS + summary
    tgt_out: np.ndarray  # (B, m) summary + EOS

    def __len__(self):
        return len(self.ids)


def encode_source(ast: Ast, src_vocab: Vocabulary, config):
    seq = preorder(ast)
    rel = relation_matrices(ast, seq)
    patterns = build_head_masks(rel.A, rel.S, config)
    allow = np.stack([p.allow for p in patterns])
    bias_index = np.stack([p.bias_index for p in patterns])
    return np.asarray(src_vocab.encode(seq.tokens), dtype=np.int64), allow, bias_index, patterns


def make_example(unit: SourceUnit, src_vocab: Vocabulary, tgt_vocab: Vocabulary, config) -> Example:
    src_ids, allow, bias_index, _ = encode_source(unit_ast(unit), src_vocab, config)
    tgt = np.asarray(tgt_vocab.encode(unit.summary), dtype=np.int64)
    return Example(unit.id, src_ids, allow, bias_index, tgt)


def collate(examples: list[Example], config) -> Batch:
    B = len(examples)
    H = config.n_heads
    n = max(len(e.src_ids) for e in examples)
    m = max(len(e.tgt_ids) for e in examples) + 1
    src_ids = np.full((B, n), PAD, dtype=np.int64)
    src_mask = np.zeros((B, n), dtype=bool)
    # padded query rows attend only to themselves; padded keys are never allowed
    allow = np.broadcast_to(np.eye(n, dtype=bool), (B, H, n, n)).copy()
    bias_index = np.zeros((B, H, n, n), dtype=np.int64)
    tgt_in = np.full((B, m), PAD, dtype=np.int64)
    tgt_out = np.full((B, m), PAD, dtype=np.int64)
    for b, e in enumerate(examples):
        k = len(e.src_ids)
        src_ids[b, :k] = e.src_ids
        src_mask[b, :k] = True
        allow[b, :, :k, :k] = e.allow
        bias_index[b, :, :k, :k] = e.bias_index
        t = len(e.tgt_ids)
        tgt_in[b, 0] = BOS
        tgt_in[b, 1 : t + 1] = e.tgt_ids
        tgt_out[b, :t] = e.tgt_ids
        tgt_out[b, t] = EOS
    return Batch([e.id for e in examples], src_ids, src_mask, allow, bias_index, tgt_in, tgt_out)


def batchify(corpus, vocabs, config, batch_size: int,
             rng: Optional[np.random.Generator] = None) -> list[Batch]:
    """Group samples into padded batches, optionally shuffled by ``rng``.

    ``corpus`` may be a :class:`Corpus` (encoded with ``vocabs``) or a list of
    already-encoded :class:`Example` objects, in which case ``vocabs`` is unused.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(corpus, Corpus):
        src_vocab, tgt_vocab = vocabs
        examples = [make_example(u, src_vocab, tgt_vocab, config) for u in corpus]
    else:
        examples = list(corpus)
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    return [
        collate([examples[i] for i in order[start : start + batch_size]], config)
        for start in range(0, len(examples), batch_size)
    ]
