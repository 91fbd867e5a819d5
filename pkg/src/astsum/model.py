"""Relation-masked transformer encoder, standard decoder, decoding and checkpoints.

The encoder has no absolute positions: tree structure enters only through
the per-head masks (ancestor heads first, sibling heads second) and one
learned scalar bias per head and clamped signed distance. The decoder uses
learned absolute positions, causal self-attention and full cross-attention.
Blocks are post-norm: ``x = LN(x + sublayer(x))``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn_core as nn
from .ast_core import Ast
from .config import ModelConfig
from .data import BOS, EOS, PAD, Batch, Vocabulary, encode_source
from .errors import (
    CheckpointError,
    CheckpointIOError,
    ConfigError,
    LengthError,
    ShapeError,
    ShapeMismatch,
    VersionError,
    VocabError,
)
from .linearize import POT, LinearSeq, preorder
from .relations import AttentionPattern

CHECKPOINT_VERSION = 1
INIT_RANGE = 0.08


# --------------------------------------------------------------------------
# parameters


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in initialization order."""
    d, f, half = config.d_model, config.d_ff, config.n_heads // 2
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (config.src_vocab, d),
        "tgt_embed": (config.tgt_vocab, d),
        "tgt_pos": (config.max_len, d),
        "rel_bias.anc": (half, 2 * config.delta_anc + 2),
        "rel_bias.sib": (half, 2 * config.delta_sib + 2),
    }

    def attention(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)
        shapes[f"{prefix}.bo"] = (d,)

    def norm(prefix):
        shapes[f"{prefix}.gamma"] = (d,)
        shapes[f"{prefix}.beta"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for layer in range(config.enc_layers):
        p = f"enc.{layer}"
        attention(f"{p}.self")
        norm(f"{p}.ln1")
        ffn(f"{p}.ff")
        norm(f"{p}.ln2")
    for layer in range(config.dec_layers):
        p = f"dec.{layer}"
        attention(f"{p}.self")
        norm(f"{p}.ln1")
        attention(f"{p}.cross")
        norm(f"{p}.ln2")
        ffn(f"{p}.ff")
        norm(f"{p}.ln3")
    shapes["out.w"] = (d, config.tgt_vocab)
    shapes["out.b"] = (config.tgt_vocab,)
    return shapes


def init_params(config: ModelConfig, seed: Optional[int] = None) -> nn.ParamStore:
    """Uniform(-0.08, 0.08) weights, zero biases and relative biases, unit norm gains."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = nn.ParamStore()
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            value = np.ones(shape)
        elif leaf in ("beta", "bo", "b1", "b2", "b") or name.startswith("rel_bias"):
            value = np.zeros(shape)
        else:
            value = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
        store.add(name, value)
    return store


# --------------------------------------------------------------------------
# building blocks


def _split_heads(x: nn.Tensor, H: int) -> nn.Tensor:
    B, n, d = x.shape
    return nn.transpose(nn.reshape(x, (B, n, H, d // H)), (0, 2, 1, 3))


def _merge_heads(x: nn.Tensor) -> nn.Tensor:
    B, H, n, dh = x.shape
    return nn.reshape(nn.transpose(x, (0, 2, 1, 3)), (B, n, H * dh))


def _attention_block(P, prefix, x_q, x_kv, allow, bias, H, rate, rng):
    q = _split_heads(nn.matmul(x_q, P(f"{prefix}.wq")), H)
    k = _split_heads(nn.matmul(x_kv, P(f"{prefix}.wk")), H)
    v = _split_heads(nn.matmul(x_kv, P(f"{prefix}.wv")), H)
    heads = nn.masked_attention(q, k, v, allow, bias)
    out = nn.add(nn.matmul(_merge_heads(heads), P(f"{prefix}.wo")), P(f"{prefix}.bo"))
    return nn.dropout(out, rate, rng)


def _add_norm(P, prefix, x, sub):
    return nn.layer_norm(nn.add(x, sub), P(f"{prefix}.gamma"), P(f"{prefix}.beta"))


def _ffn_block(P, prefix, x, rate, rng):
    out = nn.feed_forward(x, P(f"{prefix}.w1"), P(f"{prefix}.b1"), P(f"{prefix}.w2"), P(f"{prefix}.b2"))
    return nn.dropout(out, rate, rng)


def _leaf_getter(params: nn.ParamStore, track: bool):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = params.leaf(name) if track else nn.Tensor(params[name])
        return cache[name]

    return get


def relative_bias(P, config: ModelConfig, bias_index: np.ndarray) -> nn.Tensor:
    """Per-head bias ``(B, H, n, n)`` looked up from the two distance tables."""
    half = config.n_heads // 2
    parts = []
    for group, name, delta in ((0, "rel_bias.anc", config.delta_anc), (1, "rel_bias.sib", config.delta_sib)):
        idx = bias_index[:, group * half : (group + 1) * half]
        # indices past the table only occur at masked-out pairs
        idx = np.minimum(idx, 2 * delta + 1)
        rows = np.arange(half).reshape(1, half, 1, 1)
        parts.append(nn.gather2d(P(name), rows, idx))
    return nn.concat(parts, axis=1)


def encoder_forward(P, config: ModelConfig, src_ids, allow, bias_index, rng=None) -> nn.Tensor:
    src_ids = np.asarray(src_ids)
    if src_ids.size and (src_ids.min() < 0 or src_ids.max() >= config.src_vocab):
        raise VocabError("source id outside the source vocabulary")
    B, n = src_ids.shape
    if allow.shape != (B, config.n_heads, n, n) or bias_index.shape != allow.shape:
        raise ShapeError(f"pattern shape {allow.shape} does not match ({B}, {config.n_heads}, {n}, {n})")
    x = nn.dropout(nn.embedding(P("src_embed"), src_ids), config.dropout, rng)
    bias = relative_bias(P, config, bias_index)
    for layer in range(config.enc_layers):
        p = f"enc.{layer}"
        x = _add_norm(P, f"{p}.ln1", x, _attention_block(P, f"{p}.self", x, x, allow, bias,
                                                         config.n_heads, config.dropout, rng))
        x = _add_norm(P, f"{p}.ln2", x, _ffn_block(P, f"{p}.ff", x, config.dropout, rng))
    return x


def decoder_forward(P, config: ModelConfig, memory: nn.Tensor, src_mask, tgt_in, rng=None) -> nn.Tensor:
    tgt_in = np.asarray(tgt_in)
    B, m = tgt_in.shape
    if m > config.max_len:
        raise LengthError(f"decoder input length {m} exceeds max_len {config.max_len}")
    if tgt_in.size and (tgt_in.min() < 0 or tgt_in.max() >= config.tgt_vocab):
        raise VocabError("target id outside the target vocabulary")
    causal = np.tril(np.ones((m, m), dtype=bool))[None, None]
    cross = np.asarray(src_mask, dtype=bool)[:, None, None, :]
    pos = nn.embedding(P("tgt_pos"), np.arange(m))
    y = nn.dropout(nn.add(nn.embedding(P("tgt_embed"), tgt_in), pos), config.dropout, rng)
    H = config.n_heads
    for layer in range(config.dec_layers):
        p = f"dec.{layer}"
        y = _add_norm(P, f"{p}.ln1", y, _attention_block(P, f"{p}.self", y, y, causal, None, H, config.dropout, rng))
        y = _add_norm(P, f"{p}.ln2", y, _attention_block(P, f"{p}.cross", y, memory, cross, None, H,
                                                         config.dropout, rng))
        y = _add_norm(P, f"{p}.ln3", y, _ffn_block(P, f"{p}.ff", y, config.dropout, rng))
    return nn.add(nn.matmul(y, P("out.w")), P("out.b"))


# --------------------------------------------------------------------------
# single-sample API


@dataclass(frozen=True)
class EncoderOutput:
    states: np.ndarray  # (n, d_model)
    patterns: tuple[AttentionPattern, ...]


def encode(seq: LinearSeq, ast: Ast, params: nn.ParamStore, config: ModelConfig,
           vocab: Vocabulary) -> EncoderOutput:
    if seq.kind != POT:
        raise ShapeError("the encoder consumes the POT sequence")
    if seq.n < 1:
        raise ShapeError("empty input sequence")
    if seq.tokens != preorder(ast).tokens:
        raise ShapeError("sequence is not the preorder traversal of the given tree")
    src_ids, allow, bias_index, patterns = encode_source(ast, vocab, config)
    P = _leaf_getter(params, track=False)
    states = encoder_forward(P, config, src_ids[None], allow[None], bias_index[None])
    return EncoderOutput(states.data[0], tuple(patterns))


def _decoder_logits(enc_states: np.ndarray, prefixes: np.ndarray, params, config) -> np.ndarray:
    P = _leaf_getter(params, track=False)
    B = prefixes.shape[0]
    memory = nn.Tensor(np.broadcast_to(enc_states, (B,) + enc_states.shape))
    mask = np.ones((B, enc_states.shape[0]), dtype=bool)
    return decoder_forward(P, config, memory, mask, prefixes).data


def decode_train(enc: EncoderOutput, target_ids, params: nn.ParamStore, config: ModelConfig) -> np.ndarray:
    """Teacher-forced next-token logits ``(m, V_tgt)`` for a BOS-prefixed target."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.ndim != 1 or target_ids.size == 0 or target_ids[0] != BOS:
        raise LengthError("decoder input must be a nonempty id list starting with BOS")
    return _decoder_logits(enc.states, target_ids[None], params, config)[0]


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _greedy(enc, params, config):
    tokens, score, terms = [], 0.0, 0
    for _ in range(config.max_len):
        logp = _log_softmax(_decoder_logits(enc.states, np.array([[BOS] + tokens]), params, config)[0, -1])
        # cumulative scores so a width-1 beam makes the same choice bit for bit
        cand = score + logp
        tok = int(np.argmax(cand))
        score = float(cand[tok])
        terms += 1
        if tok == EOS:
            break
        tokens.append(tok)
    return tokens, score, terms


def decode_greedy(enc: EncoderOutput, params: nn.ParamStore, config: ModelConfig) -> list[int]:
    """Argmax decoding from BOS until EOS or ``max_len`` steps; ties go to the lowest id."""
    return _greedy(enc, params, config)[0]


def sequence_score(enc: EncoderOutput, tokens, params, config) -> float:
    """Beam objective: summed log-probability over emitted steps divided by their count.

    EOS counts as a step unless the sequence stopped at ``max_len``.
    """
    tokens = [int(t) for t in tokens]
    steps = tokens + ([EOS] if len(tokens) < config.max_len else [])
    logits = _decoder_logits(enc.states, np.array([[BOS] + steps[:-1]]), params, config)[0]
    logp = _log_softmax(logits)
    total = 0.0
    for t, tok in enumerate(steps):
        total += logp[t, tok]
    return total / len(steps)


def decode_beam(enc: EncoderOutput, params: nn.ParamStore, config: ModelConfig, beam_width: int) -> list[int]:
    """Beam search on summed log-probability, finished hypotheses ranked by score/length.

    The greedy hypothesis is always among the finalists, so the returned
    sequence never scores below greedy under the same objective.
    """
    if beam_width < 1:
        raise ConfigError(f"beam_width must be >= 1, got {beam_width}")
    alive: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int], int]] = []
    for _ in range(config.max_len):
        prefixes = np.array([[BOS] + toks for _, toks in alive])
        logp = _log_softmax(_decoder_logits(enc.states, prefixes, params, config)[:, -1])
        totals = np.array([s for s, _ in alive])[:, None] + logp
        flat = totals.reshape(-1)
        # stable sort: equal scores resolve to the lower beam, then the lower token id
        order = np.argsort(-flat, kind="stable")[:beam_width]
        V = logp.shape[1]
        nxt = []
        for k in order:
            b, tok = divmod(int(k), V)
            score, toks = float(flat[k]), alive[b][1]
            if tok == EOS:
                finished.append((score, toks, len(toks) + 1))
            else:
                nxt.append((score, toks + [tok]))
        alive = nxt
        if not alive or len(finished) >= beam_width:
            break
    finished.extend((s, toks, len(toks)) for s, toks in alive if len(toks) == config.max_len)
    g_tokens, g_score, g_terms = _greedy(enc, params, config)
    finished.append((g_score, g_tokens, g_terms))
    best = max(range(len(finished)), key=lambda i: (finished[i][0] / finished[i][2], -i))
    return list(finished[best][1])


# --------------------------------------------------------------------------
# training loss


def batch_loss(batch: Batch, params: nn.ParamStore, config: ModelConfig, rng=None,
               track: bool = True, reduction: str = "mean"):
    """Loss graph for one padded batch; returns ``(loss tensor, target count)``."""
    P = _leaf_getter(params, track)
    memory = encoder_forward(P, config, batch.src_ids, batch.allow, batch.bias_index, rng)
    logits = decoder_forward(P, config, memory, batch.src_mask, batch.tgt_in, rng)
    return nn.cross_entropy(logits, batch.tgt_out, pad_id=PAD, reduction=reduction)


def forward_loss(batch: Batch, params: nn.ParamStore, config: ModelConfig, rng=None) -> tuple[float, int]:
    """Mean token cross-entropy over non-pad targets; fills ``params.grads``."""
    params.zero_grad()
    loss, count = batch_loss(batch, params, config, rng)
    loss.backward()
    return loss.item(), count


def per_sample_loss(batch: Batch, params: nn.ParamStore, config: ModelConfig) -> np.ndarray:
    terms, _ = batch_loss(batch, params, config, track=False, reduction="none")
    counts = (batch.tgt_out != PAD).sum(axis=1)
    return terms.data.sum(axis=1) / counts


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    params: nn.ParamStore
    vocab_src: Vocabulary
    vocab_tgt: Vocabulary
    step: int = 0

    def to_json(self) -> str:
        doc = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocab_src": self.vocab_src.itos,
            "vocab_tgt": self.vocab_tgt.itos,
            "step": self.step,
            "params": {
                name: {"shape": list(self.params[name].shape), "data": self.params[name].reshape(-1).tolist()}
                for name in sorted(self.params.names())
            },
        }
        return json.dumps(doc, allow_nan=False, ensure_ascii=False)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(checkpoint.to_json(), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from None


def checkpoint_from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        vocab_src = Vocabulary(doc["vocab_src"])
        vocab_tgt = Vocabulary(doc["vocab_tgt"])
        raw = doc["params"]
        step = int(doc.get("step", 0))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing field {exc}") from None
    except Exception as exc:
        raise CheckpointError(f"invalid checkpoint: {exc}") from None
    if len(vocab_src) != config.src_vocab or len(vocab_tgt) != config.tgt_vocab:
        raise ShapeMismatch("vocabulary sizes do not match the stored config")
    store = nn.ParamStore()
    for name, shape in param_shapes(config).items():
        if name not in raw:
            raise ShapeMismatch(f"parameter {name!r} missing from checkpoint")
        entry = raw[name]
        if tuple(entry.get("shape", ())) != shape:
            raise ShapeMismatch(f"parameter {name!r} has shape {entry.get('shape')}, expected {list(shape)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != math.prod(shape) or not np.all(np.isfinite(data)):
            raise ShapeMismatch(f"parameter {name!r} data does not fill shape {list(shape)}")
        store.add(name, data.reshape(shape))
    extra = sorted(set(raw) - set(param_shapes(config)))
    if extra:
        raise ShapeMismatch(f"unexpected parameters in checkpoint: {extra}")
    store.step = step
    return Checkpoint(config, store, vocab_src, vocab_tgt, step)


def load_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from None
    return checkpoint_from_json(text)
