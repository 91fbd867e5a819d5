"""Training loop: Adam over padded batches with best-checkpoint tracking and early stopping."""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable, Optional

import numpy as np

from .config import ModelConfig
from .data import Corpus, batchify, build_vocab, make_example
from .errors import EmptyCorpus, LengthError
from .model import Checkpoint, batch_loss, forward_loss, init_params
from .nn_core import adam_step

log = logging.getLogger(__name__)


def corpus_loss(examples, params, config: ModelConfig, batch_size: int) -> float:
    """Token-weighted mean loss over ``examples`` in their given order, no gradients."""
    total, count = 0.0, 0
    for batch in batchify(examples, None, config, batch_size):
        loss, n = batch_loss(batch, params, config, track=False)
        total += loss.item() * n
        count += n
    return total / count


def train(
    config: ModelConfig,
    corpus: Corpus,
    *,
    batch_size: int = 8,
    epochs: int = 300,
    patience: int = 10,
    min_freq: int = 1,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> tuple[Checkpoint, list[dict]]:
    """Fit a model on the train split.

    Returns the checkpoint with the lowest monitored loss and the per-epoch
    log. The monitored loss is the valid-split loss when a valid split
    exists, else the epoch's mean training loss.
    """
    train_units = corpus.split("train")
    if not len(train_units):
        raise EmptyCorpus("corpus has no training samples")
    src_vocab, tgt_vocab = build_vocab(corpus, min_freq)
    config = dataclasses.replace(config, src_vocab=len(src_vocab), tgt_vocab=len(tgt_vocab))
    longest = max(len(u.summary) for u in train_units) + 1
    if longest > config.max_len:
        raise LengthError(f"longest summary needs {longest} decoder steps but max_len is {config.max_len}")

    train_ex = [make_example(u, src_vocab, tgt_vocab, config) for u in train_units]
    valid_ex = [make_example(u, src_vocab, tgt_vocab, config) for u in corpus.split("valid")]

    params = init_params(config)
    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq) if config.dropout > 0 else None

    history: list[dict] = []
    best = (np.inf, params.copy(), 0)
    stale = 0
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for batch in batchify(train_ex, None, config, batch_size, shuffle_rng):
            loss, n = forward_loss(batch, params, config, dropout_rng)
            adam_step(params, config.lr)
            total += loss * n
            count += n
        entry = {
            "epoch": epoch,
            "train_loss": total / count,
            "valid_loss": corpus_loss(valid_ex, params, config, batch_size) if valid_ex else None,
        }
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.debug("epoch %d train %.6f valid %s", epoch, entry["train_loss"], entry["valid_loss"])

        monitored = entry["valid_loss"] if valid_ex else entry["train_loss"]
        if monitored < best[0]:
            best = (monitored, params.copy(), params.step)
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                log.info("early stop at epoch %d (no improvement for %d epochs)", epoch, patience)
                break

    _, best_params, best_step = best
    return Checkpoint(config, best_params, src_vocab, tgt_vocab, best_step), history
