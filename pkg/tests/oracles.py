"""Brute-force oracles shared by the unit and acceptance suites.

Each oracle is an independent implementation of the quantity it checks:
explicit path enumeration for chain DPs, pairwise concordance counting for
AUC, direct formula evaluation for ranking metrics.  They are deliberately
slow and simple.
"""

import itertools
import math

import numpy as np


def enumerate_paths(length: int, n_labels: int):
    return itertools.product(range(n_labels), repeat=length)


def path_score_oracle(path, emissions, transitions, start):
    total = start[path[0]] + emissions[0, path[0]]
    for t in range(1, len(path)):
        total += transitions[path[t - 1], path[t]] + emissions[t, path[t]]
    return total


def log_partition_oracle(emissions, transitions, start, allowed=None):
    """logsumexp over explicitly enumerated paths (optionally restricted)."""
    length, n_labels = emissions.shape
    scores = []
    for path in enumerate_paths(length, n_labels):
        if allowed is not None and any(p not in allowed[t] for t, p in enumerate(path)):
            continue
        scores.append(path_score_oracle(path, emissions, transitions, start))
    if not scores:
        return -math.inf
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def viterbi_oracle(emissions, transitions, start):
    """Argmax path by enumeration; ties resolved lexicographically."""
    best_path, best_score = None, -math.inf
    for path in enumerate_paths(*emissions.shape):
        s = path_score_oracle(path, emissions, transitions, start)
        if s > best_score or (s == best_score and best_path is not None
                              and list(path) < best_path):
            best_path, best_score = list(path), s
    return best_path, best_score


def token_marginals_oracle(emissions, transitions, start, allowed=None):
    """Token marginals and pairwise expectations by path enumeration."""
    length, n_labels = emissions.shape
    log_z = log_partition_oracle(emissions, transitions, start, allowed)
    marg = np.zeros((length, n_labels))
    pair = np.zeros((n_labels, n_labels))
    for path in enumerate_paths(length, n_labels):
        if allowed is not None and any(p not in allowed[t] for t, p in enumerate(path)):
            continue
        w = math.exp(path_score_oracle(path, emissions, transitions, start) - log_z)
        for t, p in enumerate(path):
            marg[t, p] += w
        for t in range(1, length):
            pair[path[t - 1], path[t]] += w
    return marg, pair, log_z


def average_precision_oracle(ranked_ids, gold_ids):
    gold = set(gold_ids)
    hits, total = 0, 0.0
    for rank, cand in enumerate(ranked_ids, start=1):
        if cand in gold:
            hits += 1
            total += hits / rank
    return total / len(gold) if gold else 0.0


def auc_oracle(labels, scores):
    """Pairwise concordance with half credit for ties."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("AUC oracle needs both classes")
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))
