import json
import math

import numpy as np
import pytest

from astsum.ast_core import SourceUnit, ast_from_nested
from astsum.data import BOS, EOS, batchify, make_example
from astsum.errors import CheckpointIOError, ConfigError, LengthError, ShapeError, ShapeMismatch, VersionError
from astsum.linearize import preorder, sbt
from astsum.model import (
    Checkpoint,
    batch_loss,
    checkpoint_from_json,
    decode_beam,
    decode_greedy,
    decode_train,
    encode,
    forward_loss,
    init_params,
    load_checkpoint,
    param_shapes,
    per_sample_loss,
    save_checkpoint,
    sequence_score,
)

from oracles import dense_decoder, dense_encoder, random_tree, randomize, tiny_config, tiny_vocabs

SRC, TGT = tiny_vocabs()
T0 = ast_from_nested(
    ("FunctionDef", "x", [("Param", "y", []), ("Block", None, [("Assign", None, []), ("Return", None, [])])])
)


def setup(seed=0, **kw):
    cfg = tiny_config(SRC, TGT, **kw)
    params = randomize(init_params(cfg), np.random.default_rng(1000 + seed))
    return cfg, params


def test_init_deterministic_and_shapes():
    cfg = tiny_config(SRC, TGT, src_vocab=10)
    a, b = init_params(cfg, 3), init_params(cfg, 3)
    assert all(a[n].tobytes() == b[n].tobytes() for n in a.names())
    assert a["src_embed"].shape == (10, 8)
    cfg5 = tiny_config(SRC, TGT, delta_anc=5, n_heads=4)
    assert param_shapes(cfg5)["rel_bias.anc"] == (2, 12)
    p = init_params(cfg5)
    assert np.abs(p["enc.0.self.wq"]).max() <= 0.08
    assert (p["enc.0.ln1.gamma"] == 1).all() and (p["enc.0.ln1.beta"] == 0).all()
    assert (p["rel_bias.anc"] == 0).all()
    with pytest.raises(ConfigError):
        init_params(tiny_config(SRC, TGT, n_heads=3, d_model=9))


def test_single_node_encoder():
    cfg, params = setup()
    t = ast_from_nested(("Num", "1", []))
    enc = encode(preorder(t), t, params, cfg, SRC)
    assert enc.states.shape == (1, 8)
    assert all(p.allow.tolist() == [[True]] for p in enc.patterns)


def test_encode_rejects_sbt():
    cfg, params = setup()
    with pytest.raises(ShapeError):
        encode(sbt(T0), T0, params, cfg, SRC)


def test_encoder_matches_dense_on_t0():
    cfg, params = setup(1)
    enc = encode(preorder(T0), T0, params, cfg, SRC)
    ref = dense_encoder(params, cfg, T0, SRC.encode(preorder(T0).tokens))
    assert np.abs(enc.states - ref).max() <= 1e-9


def test_decoder_matches_dense():
    rng = np.random.default_rng(0)
    for seed in range(10):
        cfg, params = setup(seed, enc_layers=2, dec_layers=2, n_heads=4)
        t = random_tree(rng, 10)
        enc = encode(preorder(t), t, params, cfg, SRC)
        tgt = [BOS] + list(rng.integers(4, len(TGT), size=int(rng.integers(0, 7))))
        mem = dense_encoder(params, cfg, t, SRC.encode(preorder(t).tokens))
        assert np.abs(decode_train(enc, tgt, params, cfg) - dense_decoder(params, cfg, mem, tgt)).max() <= 1e-9


def test_sibling_swap_with_symmetric_bias():
    cfg, params = setup(2)
    table = params.params["rel_bias.sib"]
    d = cfg.delta_sib
    for k in range(1, d + 1):
        table[:, d + k] = table[:, d - k]
    swapped = ast_from_nested(
        ("FunctionDef", "x", [("Block", None, [("Assign", None, []), ("Return", None, [])]), ("Param", "y", [])])
    )
    a = encode(preorder(T0), T0, params, cfg, SRC).states
    b = encode(preorder(swapped), swapped, params, cfg, SRC).states
    # preorder positions: T0 root 0, Param 1, Block 2; swapped root 0, Block 1, Param 4
    assert np.allclose(a[0], b[0], atol=1e-12)
    assert np.allclose(a[1], b[4], atol=1e-12)
    assert np.allclose(a[2], b[1], atol=1e-12)


def test_decode_train_shape_and_causality():
    cfg, params = setup(3)
    enc = encode(preorder(T0), T0, params, cfg, SRC)
    assert decode_train(enc, [BOS], params, cfg).shape == (1, len(TGT))
    rng = np.random.default_rng(4)
    base = [BOS] + list(rng.integers(4, len(TGT), size=6))
    ref = decode_train(enc, base, params, cfg)
    for t in range(len(base) - 1):
        changed = list(base)
        for k in range(t + 1, len(base)):
            changed[k] = int(rng.integers(4, len(TGT)))
        out = decode_train(enc, changed, params, cfg)
        assert np.array_equal(out[: t + 1], ref[: t + 1])
    with pytest.raises(LengthError):
        decode_train(enc, [BOS] * (cfg.max_len + 1), params, cfg)


def units_for(trees, rng):
    out = []
    for i, t in enumerate(trees):
        summary = tuple(TGT.itos[int(k)] for k in rng.integers(4, len(TGT), size=int(rng.integers(1, 6))))
        out.append(SourceUnit(f"u{i}", "", summary, t, "train"))
    return out


def test_padded_batch_matches_dense_per_sample():
    rng = np.random.default_rng(6)
    cfg, params = setup(6)
    units = units_for([random_tree(rng, 10) for _ in range(5)], rng)
    examples = [make_example(u, SRC, TGT, cfg) for u in units]
    batch = batchify(examples, None, cfg, 5)[0]
    got = per_sample_loss(batch, params, cfg)
    for k, u in enumerate(units):
        mem = dense_encoder(params, cfg, u.ast, SRC.encode(preorder(u.ast).tokens))
        tgt = TGT.encode(u.summary)
        logits = dense_decoder(params, cfg, mem, [BOS] + tgt)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ref = -np.mean([logp[t, y] for t, y in enumerate(tgt + [EOS])])
        assert abs(got[k] - ref) <= 1e-9


def test_duplicate_samples_equal_losses():
    rng = np.random.default_rng(7)
    cfg, params = setup(7)
    (u,) = units_for([random_tree(rng, 8)], rng)
    ex = make_example(u, SRC, TGT, cfg)
    losses = per_sample_loss(batchify([ex, ex], None, cfg, 2)[0], params, cfg)
    assert losses[0] == losses[1]


def test_init_loss_near_log_vocab():
    rng = np.random.default_rng(8)
    units = units_for([random_tree(rng, 8) for _ in range(4)], rng)
    losses = []
    for seed in range(10):
        cfg = tiny_config(SRC, TGT, seed=seed)
        batch = batchify([make_example(u, SRC, TGT, cfg) for u in units], None, cfg, 4)[0]
        losses.append(forward_loss(batch, init_params(cfg), cfg)[0])
    assert len(TGT) == 16
    assert all(abs(x - math.log(16)) <= 0.5 for x in losses)


def test_loss_bitwise_repeatable():
    rng = np.random.default_rng(9)
    cfg, params = setup(9)
    units = units_for([random_tree(rng, 8) for _ in range(3)], rng)
    batch = batchify([make_example(u, SRC, TGT, cfg) for u in units], None, cfg, 3)[0]
    a = batch_loss(batch, params, cfg)[0].item()
    b = batch_loss(batch, params, cfg)[0].item()
    assert a == b


def test_greedy_limits_and_determinism():
    cfg, params = setup(10, max_len=1)
    enc = encode(preorder(T0), T0, params, cfg, SRC)
    assert len(decode_greedy(enc, params, cfg)) <= 1
    cfg, params = setup(10)
    enc = encode(preorder(T0), T0, params, cfg, SRC)
    assert decode_greedy(enc, params, cfg) == decode_greedy(enc, params, cfg)


def test_beam_width_one_is_greedy_and_wider_scores_higher():
    rng = np.random.default_rng(11)
    for k in range(50):
        cfg, params = setup(100 + k)
        t = random_tree(rng, 8)
        enc = encode(preorder(t), t, params, cfg, SRC)
        greedy = decode_greedy(enc, params, cfg)
        assert decode_beam(enc, params, cfg, 1) == greedy
        if k < 15:
            wide = decode_beam(enc, params, cfg, 4)
            assert sequence_score(enc, wide, params, cfg) >= sequence_score(enc, greedy, params, cfg) - 1e-12
    with pytest.raises(ConfigError):
        decode_beam(enc, params, cfg, 0)


# -- checkpoints --------------------------------------------------------------


def make_ckpt(seed=12):
    cfg, params = setup(seed)
    return Checkpoint(cfg, params, SRC, TGT, 5)


def test_checkpoint_round_trip(tmp_path):
    ck = make_ckpt()
    path = tmp_path / "ck.json"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.config == ck.config and back.step == 5
    assert back.vocab_src == SRC and back.vocab_tgt == TGT
    for name in ck.params.names():
        assert back.params[name].tobytes() == ck.params[name].tobytes()
    enc_a = encode(preorder(T0), T0, ck.params, ck.config, SRC)
    enc_b = encode(preorder(T0), T0, back.params, back.config, back.vocab_src)
    tgt = [BOS, 5, 6, 7]
    assert np.array_equal(decode_train(enc_a, tgt, ck.params, ck.config),
                          decode_train(enc_b, tgt, back.params, back.config))
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and list(doc["params"]) == sorted(doc["params"])
    assert not (tmp_path / "ck.json.tmp").exists()


def test_checkpoint_errors(tmp_path):
    doc = json.loads(make_ckpt().to_json())
    missing = dict(doc, params={k: v for k, v in doc["params"].items() if k != "out.b"})
    with pytest.raises(ShapeMismatch, match="out.b"):
        checkpoint_from_json(json.dumps(missing))
    with pytest.raises(VersionError):
        checkpoint_from_json(json.dumps(dict(doc, version=2)))
    bad = json.loads(json.dumps(doc))
    bad["params"]["out.w"]["shape"] = [1, 1]
    with pytest.raises(ShapeMismatch):
        checkpoint_from_json(json.dumps(bad))
    with pytest.raises(CheckpointIOError):
        load_checkpoint(tmp_path / "nope.json")
