"""Sentence-level BLEU-4, ROUGE-L and METEOR-lite over token lists.

All three scores are fractions in [0, 1]; corpus scores are the mean of
sentence scores.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache
from typing import Sequence

ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
MAX_EXACT_MATCHABLE = 16


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with clipped precisions and add-half smoothing of zero counts.

    A zero clipped count for n >= 2 becomes ``1 / (2 * total_n)``; when the
    candidate is shorter than n it has no n-grams and ``total_n`` is taken as 1.
    """
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        total = sum(cand.values())
        matched = sum(min(count, ref[g]) for g, count in cand.items())
        if matched == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (2.0 * max(total, 1))
        else:
            p = matched / total
        log_sum += math.log(p)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = ROUGE_BETA) -> float:
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def _alignment(candidate, reference):
    """Exact-match one-to-one unigram alignment with the fewest chunks.

    Returns ``(matches, chunks)``. Among maximum-size alignments, the one with
    the fewest contiguous chunks is found by dynamic programming over
    (candidate position, used reference positions). The state space grows as
    2**k in the number k of matchable reference positions, so beyond
    ``MAX_EXACT_MATCHABLE`` a greedy longest-run-first alignment is used.
    """
    cand_vocab = set(candidate)
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        if tok in cand_vocab:
            positions.setdefault(tok, []).append(j)
    if sum(map(len, positions.values())) > MAX_EXACT_MATCHABLE:
        return _greedy_alignment(candidate, reference)

    @lru_cache(maxsize=None)
    def best(i, used, last):
        # returns (matches, -chunks) maximized lexicographically
        if i == len(candidate):
            return (0, 0)
        options = [best(i + 1, used, -1)]
        for j in positions.get(candidate[i], ()):
            if not used >> j & 1:
                m, neg_chunks = best(i + 1, used | 1 << j, j)
                new_chunk = 0 if last >= 0 and j == last + 1 else 1
                options.append((m + 1, neg_chunks - new_chunk))
        return max(options)

    matches, neg_chunks = best(0, 0, -1)
    return matches, -neg_chunks


def _greedy_alignment(candidate, reference):
    used_c = [False] * len(candidate)
    used_r = [False] * len(reference)
    pairs = []
    while True:
        best_len, best_i, best_j = 0, -1, -1
        for i in range(len(candidate)):
            for j in range(len(reference)):
                k = 0
                while (i + k < len(candidate) and j + k < len(reference) and not used_c[i + k]
                       and not used_r[j + k] and candidate[i + k] == reference[j + k]):
                    k += 1
                if k > best_len:
                    best_len, best_i, best_j = k, i, j
        if best_len == 0:
            break
        for k in range(best_len):
            used_c[best_i + k] = used_r[best_j + k] = True
            pairs.append((best_i + k, best_j + k))
    pairs.sort()
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            chunks += 1
    return len(pairs), chunks


def meteor_lite(candidate: Sequence[str], reference: Sequence[str],
                alpha: float = METEOR_ALPHA, beta: float = METEOR_BETA, gamma: float = METEOR_GAMMA) -> float:
    """METEOR with exact matching only (no stemming or synonym stages)."""
    if not candidate or not reference:
        return 0.0
    m, chunks = _alignment(tuple(candidate), tuple(reference))
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


def score_all(candidate, reference) -> dict:
    return {
        "bleu": bleu(candidate, reference),
        "meteor": meteor_lite(candidate, reference),
        "rouge_l": rouge_l(candidate, reference),
    }
