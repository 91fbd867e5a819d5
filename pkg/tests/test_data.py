import json
from importlib import resources

import numpy as np
import pytest

from astsum.ast_core import parse_source
from astsum.config import ModelConfig, RunConfig
from astsum.data import (
    BOS,
    EOS,
    PAD,
    UNK,
    Corpus,
    CorpusError,
    Vocabulary,
    batchify,
    build_vocab,
    detokenize,
    read_corpus,
    tokenize_summary,
)
from astsum.errors import ConfigError, EmptyCorpus, VocabError
from astsum.linearize import preorder

OVERFIT = resources.files("astsum").joinpath("data/overfit32.jsonl")


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


def test_summary_tokenizer():
    assert tokenize_summary("Returns the Max, of x_1!") == ("returns", "the", "max", ",", "of", "x_1", "!")
    assert detokenize(["a", "b"]) == "a b"


def test_vocab_min_freq_and_order():
    v = Vocabulary.build([["a", "b", "a"], ["a", "c", "c"]], min_freq=2)
    assert v.itos == ["<pad>", "<s>", "</s>", "<unk>", "a", "c"]
    assert "b" not in v and v.encode(["b", "a"]) == [UNK, 4]
    assert v.decode([BOS, 4, 5, EOS, 4]) == ["a", "c"]
    assert Vocabulary.from_json(v.to_json()) == v
    with pytest.raises(VocabError):
        Vocabulary(["x", "<s>", "</s>", "<unk>"])


def test_overfit_vocab_counts():
    corpus = read_corpus(OVERFIT)
    assert len(corpus) == 32
    src, tgt = build_vocab(corpus)
    rendered = {tok for u in corpus for tok in preorder(parse_source(u.code)).tokens}
    words = {w for u in corpus for w in u.summary}
    assert len(src) == len(rendered) + 4
    assert len(tgt) == len(words) + 4
    again = build_vocab(read_corpus(OVERFIT))
    assert again[0].to_json() == src.to_json() and again[1].to_json() == tgt.to_json()


def test_empty_train_split(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "a", "code": "fn f() { return 1; }", "summary": "one", "split": "test"}])
    with pytest.raises(EmptyCorpus):
        build_vocab(read_corpus(path))


@pytest.mark.parametrize(
    "records",
    [
        [{"id": "a", "code": "fn f() { return 1; }", "summary": "x"}, {"id": "a", "code": "fn g() { return 2; }", "summary": "y"}],
        [{"id": "a", "code": "fn f( { }", "summary": "x"}],
        [{"id": "a", "code": "fn f() { return 1; }", "summary": ""}],
        [{"id": "a", "code": "fn f() { return 1; }", "summary": "x", "split": "dev"}],
    ],
)
def test_corpus_errors(tmp_path, records):
    with pytest.raises(CorpusError):
        read_corpus(write_jsonl(tmp_path / "c.jsonl", records))


def test_corpus_with_ast_field(tmp_path):
    ast = {"label": "Return", "value": None, "children": [{"label": "Num", "value": "1", "children": []}]}
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "j", "code": "", "summary": "Gives one.", "ast": ast}])
    (unit,) = read_corpus(path)
    assert unit.ast.N == 2 and unit.summary == ("gives", "one", ".")


def test_batchify_sizes_padding_and_shuffle():
    corpus = read_corpus(OVERFIT)
    five = Corpus(corpus.units[:5])
    cfg = ModelConfig(d_model=8, n_heads=2, src_vocab=100, tgt_vocab=100)
    vocabs = build_vocab(five)
    batches = batchify(five, vocabs, cfg, 2)
    assert [len(b) for b in batches] == [2, 2, 1]
    for b in batches:
        real = b.src_mask
        n = real.shape[1]
        for k in range(len(b)):
            k_len = real[k].sum()
            assert (b.src_ids[k, k_len:] == PAD).all()
            pad_block = b.allow[k][:, k_len:, :]
            assert (pad_block == np.eye(n, dtype=bool)[k_len:]).all()
            assert not b.allow[k][:, :k_len, k_len:].any()
        assert (b.tgt_in[:, 0] == BOS).all()
        for k in range(len(b)):
            out = b.tgt_out[k]
            t = int((out != PAD).sum())
            assert out[t - 1] == EOS
            assert (b.tgt_in[k, 1:t] == out[: t - 1]).all()
    order = lambda seed: [b.ids for b in batchify(corpus, build_vocab(corpus), cfg, 8, np.random.default_rng(seed))]
    assert order(4) == order(4)
    assert order(4) != order(5)


def test_run_config(tmp_path):
    cfg = RunConfig.from_dict({"n_heads": 2, "d_model": 8, "epochs": 3, "traversal": "pot"})
    assert cfg.model.n_heads == 2 and cfg.epochs == 3
    assert cfg.override(epochs=None, seed=4).model.seed == 4
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"heads": 4})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"n_heads": 3, "d_model": 9})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"batch_size": 0})
    path = tmp_path / "r.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(path) == cfg
