"""Report figures written to files (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_metrics(report, reference_rows, path):
    """Grouped bars: this run against the reference rows, in percent."""
    labels = ["BLEU", "METEOR", "ROUGE-L"]
    keys = ["bleu", "meteor", "rouge_l"]
    series = [("this run", [100 * getattr(report, k) for k in keys])]
    series += [(f"{r['method']} {r['language']} (paper)", [r[k] for k in keys]) for r in reference_rows]
    x = np.arange(len(labels))
    width = 0.8 / len(series)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        for i, (name, values) in enumerate(series):
            ax.bar(x + (i - (len(series) - 1) / 2) * width, values, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylabel("score (%)")
        ax.set_ylim(0, 105)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_sparsity(rows, path):
    """Allowed-pair fraction per head type against sequence length."""
    n = [r["n"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(n, [r["ancestor"] / r["n_squared"] for r in rows], "o-", label="ancestor head")
        ax.plot(n, [r["sibling"] / r["n_squared"] for r in rows], "s-", label="sibling head")
        ax.plot(n, [1.0] * len(n), "k--", lw=0.8, label="full attention")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("sequence length n (perfect binary tree)")
        ax.set_ylabel("allowed pairs / n$^2$")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_training_log(history, path):
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(epochs, [h["train_loss"] for h in history], label="train")
        valid = [h["valid_loss"] for h in history]
        if any(v is not None for v in valid):
            ax.plot(epochs, [np.nan if v is None else v for v in valid], label="valid")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.legend(frameon=False)
        _save(fig, path)
