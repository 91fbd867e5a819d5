"""Ancestor-descendant and sibling distance matrices, and per-head attention masks.

Sign conventions: ``A[i, j] = +k`` when node j is an ancestor of node i at k
edges and ``-k`` when j is a descendant of i; ``S[i, j]`` is j's child
position minus i's child position under their shared parent. Undefined
entries hold ``NONE``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ast_core import Ast, ast_from_nested
from .errors import ConfigError, KindMismatch
from .linearize import POT, LinearSeq, preorder

NONE = np.iinfo(np.int64).min

ANCESTOR = "ANCESTOR"
SIBLING = "SIBLING"


def defined(matrix: np.ndarray) -> np.ndarray:
    return matrix != NONE


@dataclass(frozen=True)
class RelationMatrices:
    A: np.ndarray
    S: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class AttentionPattern:
    head: int
    relation: str
    delta: int
    allow: np.ndarray
    bias_index: np.ndarray

    @property
    def self_index(self) -> int:
        return 2 * self.delta + 1

    @property
    def pad_index(self) -> int:
        return 2 * self.delta + 2


def _check_pot(seq: LinearSeq, ast: Ast):
    if seq.kind != POT:
        raise KindMismatch(f"relation matrices need a POT sequence, got {seq.kind}")
    if seq.n != ast.N:
        raise KindMismatch(f"sequence length {seq.n} does not match tree size {ast.N}")


def ancestor_matrix(ast: Ast, seq: LinearSeq) -> np.ndarray:
    _check_pot(seq, ast)
    n = seq.n
    pos = {nid: p for p, nid in enumerate(seq.node_ids)}
    A = np.full((n, n), NONE, dtype=np.int64)
    np.fill_diagonal(A, 0)
    for i, nid in enumerate(seq.node_ids):
        k = 0
        parent = ast[nid].parent
        while parent is not None:
            k += 1
            j = pos[parent]
            A[i, j] = k
            A[j, i] = -k
            parent = ast[parent].parent
    return A


def sibling_matrix(ast: Ast, seq: LinearSeq) -> np.ndarray:
    _check_pot(seq, ast)
    n = seq.n
    pos = {nid: p for p, nid in enumerate(seq.node_ids)}
    S = np.full((n, n), NONE, dtype=np.int64)
    np.fill_diagonal(S, 0)
    for node in ast.nodes:
        kids = [pos[c] for c in node.children]
        for a, i in enumerate(kids):
            for b, j in enumerate(kids):
                S[i, j] = b - a
    return S


def relation_matrices(ast: Ast, seq: LinearSeq) -> RelationMatrices:
    return RelationMatrices(ancestor_matrix(ast, seq), sibling_matrix(ast, seq))


def relation_pattern(matrix: np.ndarray, delta: int, relation: str, head: int) -> AttentionPattern:
    """Hard mask ``|distance| <= delta`` plus the shifted distance index for bias lookup."""
    n = matrix.shape[0]
    ok = defined(matrix)
    allow = ok & (np.abs(np.where(ok, matrix, 0)) <= delta)
    np.fill_diagonal(allow, True)
    bias_index = np.full((n, n), 2 * delta + 2, dtype=np.int64)
    bias_index[allow] = matrix[allow] + delta
    np.fill_diagonal(bias_index, 2 * delta + 1)
    allow.setflags(write=False)
    bias_index.setflags(write=False)
    return AttentionPattern(head, relation, delta, allow, bias_index)


def build_head_masks(A: np.ndarray, S: np.ndarray, config) -> list[AttentionPattern]:
    """First half of the heads follow ancestry, second half follow siblings."""
    H = config.n_heads
    if H < 2 or H % 2:
        raise ConfigError(f"n_heads must be even and >= 2, got {H}")
    if config.delta_anc < 1 or config.delta_sib < 1:
        raise ConfigError("distance thresholds must be >= 1")
    anc = relation_pattern(A, config.delta_anc, ANCESTOR, 0)
    sib = relation_pattern(S, config.delta_sib, SIBLING, H // 2)
    patterns = []
    for h in range(H):
        base = anc if h < H // 2 else sib
        patterns.append(AttentionPattern(h, base.relation, base.delta, base.allow, base.bias_index))
    return patterns


def sparsity_report(patterns) -> dict:
    patterns = list(patterns)
    n = patterns[0].allow.shape[0]
    per_head = [int(p.allow.sum()) for p in patterns]
    total = sum(per_head)
    return {
        "n": n,
        "heads": [
            {"head": p.head, "relation": p.relation, "allowed": c} for p, c in zip(patterns, per_head)
        ],
        "total": total,
        "ratio": total / (len(patterns) * n * n),
    }


def perfect_binary_tree(depth: int) -> Ast:
    """Complete binary tree with ``depth`` levels (depth 1 is a single node)."""
    def build(level):
        if level == depth:
            return ("Node", None, [])
        return ("Node", None, [build(level + 1), build(level + 1)])

    return ast_from_nested(build(1))


def binary_tree_sparsity(depth: int, delta: Optional[int] = None) -> dict:
    """Allowed-pair counts of one ancestor head and one sibling head on a perfect binary tree.

    ``delta=None`` uses a threshold no tree distance can exceed.
    """
    ast = perfect_binary_tree(depth)
    seq = preorder(ast)
    rel = relation_matrices(ast, seq)
    d = max(1, ast.N) if delta is None else delta
    anc = int(relation_pattern(rel.A, d, ANCESTOR, 0).allow.sum())
    sib = int(relation_pattern(rel.S, d, SIBLING, 1).allow.sum())
    n = ast.N
    return {
        "depth": depth,
        "n": n,
        "n_squared": n * n,
        "ancestor": anc,
        "sibling": sib,
        "ancestor_ratio": anc / (n * n),
        "sibling_ratio": sib / (n * n),
    }
