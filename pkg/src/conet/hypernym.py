"""Hypernym discovery over primitive concepts.

Three routes: Hearst-style textual patterns ("Y such as X"), the head-word
rule for category surfaces ("cargo pants" is a "pants"), and a trainable
K-slice bilinear projection scorer producing P(isA) for a (hyponym,
hypernym) pair.  Ranking quality is measured with MAP / MRR / P@1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tensor import CompGraph, glorot, grad_check, sgd_step


class UnknownConceptError(KeyError):
    pass


class PatternError(ValueError):
    pass


# ------------------------------------------------------------------- patterns


@dataclass(frozen=True)
class HearstPattern:
    """Token template with exactly one X (hyponym) and one Y (hypernym) slot."""

    elements: tuple[str, ...]

    def __post_init__(self):
        if self.elements.count("X") != 1 or self.elements.count("Y") != 1:
            raise PatternError(f"pattern {' '.join(self.elements)!r} needs exactly "
                               "one X and one Y slot")

    @classmethod
    def parse(cls, template: str) -> "HearstPattern":
        return cls(tuple(template.split()))

    def __str__(self) -> str:
        return " ".join(self.elements)


def load_patterns(path) -> list[HearstPattern]:
    """Pattern file: one template per line; blank lines and # comments skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(HearstPattern.parse(line))
    return out


def fold_surface(tokens: Sequence[str], surfaces: set[str]) -> str | None:
    """Map a token span onto a known surface, folding a trailing plural."""
    joined = " ".join(tokens)
    if joined in surfaces:
        return joined
    last = tokens[-1]
    for suffix in ("es", "s"):
        if last.endswith(suffix) and len(last) > len(suffix):
            candidate = " ".join((*tokens[:-1], last[: -len(suffix)]))
            if candidate in surfaces:
                return candidate
    return None


def hearst_extract(corpus: Iterable[Sequence[str]],
                   patterns: Sequence[HearstPattern], surfaces: set[str],
                   max_span: int = 3) -> list[tuple[str, str, int]]:
    """Count (hyponym, hypernym) surface pairs matched by the patterns.

    Slot fillers are restricted to known primitive surfaces (with plural
    folding); output is aggregated and ordered by support, then surface.
    """
    counts: dict[tuple[str, str], int] = {}
    for tokens in corpus:
        tokens = list(tokens)
        for pattern in patterns:
            for hyponym, hypernym in _iter_matches(tokens, pattern, surfaces,
                                                   max_span):
                counts[(hyponym, hypernym)] = counts.get((hyponym, hypernym), 0) + 1
    return sorted(((x, y, n) for (x, y), n in counts.items()),
                  key=lambda rec: (-rec[2], rec[0], rec[1]))


def _iter_matches(tokens: Sequence[str], pattern: HearstPattern,
                  surfaces: set[str], max_span: int) -> list[tuple[str, str]]:
    matches: list[tuple[str, str]] = []

    def walk(elem_idx: int, pos: int, bound: dict[str, str]):
        if elem_idx == len(pattern.elements):
            matches.append((bound["X"], bound["Y"]))
            return
        elem = pattern.elements[elem_idx]
        if elem in ("X", "Y"):
            for span in range(min(max_span, len(tokens) - pos), 0, -1):
                surface = fold_surface(tokens[pos:pos + span], surfaces)
                if surface is not None:
                    walk(elem_idx + 1, pos + span, {**bound, elem: surface})
                    return  # leftmost-longest filler only
        elif pos < len(tokens) and tokens[pos] == elem:
            walk(elem_idx + 1, pos + 1, bound)

    for start in range(len(tokens)):
        walk(0, start, {})
    return matches


def head_rule_extract(vocabulary: Iterable[str]) -> list[tuple[str, str]]:
    """(full surface, head) pairs for multi-token surfaces whose final token
    is itself a known surface; the default tokenizer is head-final."""
    vocab = set(vocabulary)
    out = []
    for surface in sorted(vocab):
        tokens = surface.split()
        if len(tokens) >= 2 and tokens[-1] in vocab:
            out.append((surface, tokens[-1]))
    return out


# ------------------------------------------------------------------ projection


@dataclass
class ProjectionConfig:
    dim: int = 32
    slices: int = 4
    epochs: int = 30
    lr: float = 0.5
    batch_size: int = 64
    clip_norm: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class RankedHypernyms:
    hyponym: str
    ranked: tuple[tuple[str, float], ...]  # (candidate, score), non-increasing
    self_candidate: bool = False           # hyponym appeared among candidates


class ProjectionModel:
    """score(p, h) = sigmoid(W s + b), s_k = p^T T_k h."""

    def __init__(self, embeddings: Mapping[str, np.ndarray],
                 config: ProjectionConfig, params: dict[str, np.ndarray]):
        self.embeddings = embeddings
        self.config = config
        self.params = params
        self.loss_history: list[float] = []

    @classmethod
    def create(cls, embeddings: Mapping[str, np.ndarray],
               config: ProjectionConfig | None = None) -> "ProjectionModel":
        config = config or ProjectionConfig()
        rng = np.random.default_rng(config.seed)
        params = {"proj.W": glorot(rng, (1, config.slices)),
                  "proj.b": np.zeros((1, 1))}
        for k in range(config.slices):
            params[f"proj.T.{k}"] = glorot(rng, (config.dim, config.dim))
        return cls(embeddings, config, params)

    def embedding(self, concept_id: str) -> np.ndarray:
        try:
            return self.embeddings[concept_id]
        except KeyError:
            raise UnknownConceptError(concept_id) from None

    def _logits(self, p: np.ndarray, h: np.ndarray,
                params: dict[str, np.ndarray] | None = None) -> np.ndarray:
        params = params or self.params
        slices = [(p @ params[f"proj.T.{k}"] * h).sum(axis=1)
                  for k in range(self.config.slices)]
        s = np.stack(slices, axis=1)                     # [B, K]
        return (s @ params["proj.W"].T + params["proj.b"])[:, 0]

    def score_pair(self, hyponym: str, hypernym: str) -> float:
        p = self.embedding(hyponym)[None, :]
        h = self.embedding(hypernym)[None, :]
        z = float(self._logits(p, h)[0])
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else \
            math.exp(z) / (1.0 + math.exp(z))

    # --------------------------------------------------------------- training

    def _batch_loss(self, g: CompGraph, leaves, p_arr, h_arr, y_arr):
        batch = p_arr.shape[0]
        p_const = g.constant(p_arr)
        h_const = g.constant(h_arr)
        ones_col = g.constant(np.ones((self.config.dim, 1)))
        slices = []
        for k in range(self.config.slices):
            mk = g.mul(g.matmul(p_const, leaves[f"proj.T.{k}"]), h_const)
            slices.append(g.matmul(mk, ones_col))        # [B, 1]
        s = g.concat(slices, axis=1)                     # [B, K]
        z = g.add(g.matmul(s, g.transpose(leaves["proj.W"])),
                  g.matmul(g.constant(np.ones((batch, 1))), leaves["proj.b"]))
        signs = g.constant((1.0 - 2.0 * y_arr)[:, None])
        sz = g.mul(z, signs)
        # per-row softplus(sign * z) = logsumexp([0, sign * z])
        rows = g.logsumexp(g.concat([g.constant(np.zeros((batch, 1))), sz],
                                    axis=1), axis=1)
        return g.mean_pool_over_time(g.reshape(rows, (batch, 1)))

    def train(self, positives: Sequence[tuple[str, str]],
              negatives: Sequence[tuple[str, str]]) -> list[float]:
        """Minimise the mean NLL over labelled pairs; returns epoch losses."""
        if not positives or not negatives:
            raise ValueError("training needs both positive and negative pairs")
        pairs = [(p, h, 1.0) for p, h in positives]
        pairs += [(p, h, 0.0) for p, h in negatives]
        p_all = np.stack([self.embedding(p) for p, _, _ in pairs])
        h_all = np.stack([self.embedding(h) for _, h, _ in pairs])
        y_all = np.array([y for _, _, y in pairs])
        rng = np.random.default_rng(self.config.seed)
        n = len(pairs)
        for _ in range(self.config.epochs):
            order = rng.permutation(n)
            total = 0.0
            for at in range(0, n, self.config.batch_size):
                idx = order[at:at + self.config.batch_size]
                g = CompGraph()
                leaves = g.bind(self.params)
                loss = self._batch_loss(g, leaves, p_all[idx], h_all[idx],
                                        y_all[idx])
                total += loss.item() * len(idx)
                grads = g.backward(loss)
                norm = math.sqrt(sum(float((gv * gv).sum())
                                     for gv in grads.values()))
                if norm > self.config.clip_norm:
                    grads = {k: v * (self.config.clip_norm / norm)
                             for k, v in grads.items()}
                self.params = sgd_step(self.params, grads, self.config.lr)
            self.loss_history.append(total / n)
        return self.loss_history

    def check_gradients(self, positives, negatives, eps: float = 1e-4) -> float:
        pairs = [(p, h, 1.0) for p, h in positives]
        pairs += [(p, h, 0.0) for p, h in negatives]
        p_arr = np.stack([self.embedding(p) for p, _, _ in pairs])
        h_arr = np.stack([self.embedding(h) for _, h, _ in pairs])
        y_arr = np.array([y for _, _, y in pairs])

        def build(g, leaves):
            return self._batch_loss(g, leaves, p_arr, h_arr, y_arr)

        return grad_check(build, self.params, eps=eps)

    # ---------------------------------------------------------------- ranking

    def rank(self, hyponym: str, candidates: Sequence[str]) -> RankedHypernyms:
        if not candidates:
            raise ValueError(f"no candidate hypernyms for {hyponym!r}")
        p = np.tile(self.embedding(hyponym), (len(candidates), 1))
        h = np.stack([self.embedding(c) for c in candidates])
        z = self._logits(p, h)
        scores = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                          np.exp(z) / (1.0 + np.exp(z)))
        order = sorted(range(len(candidates)),
                       key=lambda i: (-scores[i], candidates[i]))
        return RankedHypernyms(
            hyponym=hyponym,
            ranked=tuple((candidates[i], float(scores[i])) for i in order),
            self_candidate=hyponym in set(candidates),
        )


def negative_sample(positives: Sequence[tuple[str, str]], ratio: int,
                    vocabulary: Sequence[str], seed: int = 0
                    ) -> list[tuple[str, str]]:
    """ratio negatives per positive, replacing the hypernym with a random
    concept; collisions with known positives are resampled."""
    if ratio < 1:
        raise ValueError("negative ratio must be >= 1")
    positive_set = set(positives)
    by_hyponym: dict[str, set[str]] = {}
    for p, h in positives:
        by_hyponym.setdefault(p, set()).add(h)
    rng = np.random.default_rng(seed)
    vocab = list(vocabulary)
    out: list[tuple[str, str]] = []
    for p, _ in positives:
        if len(vocab) - len(by_hyponym[p]) < ratio:
            raise ValueError(f"vocabulary too small to draw {ratio} negatives "
                             f"for {p!r} without positive collisions")
        chosen: set[str] = set()
        while len(chosen) < ratio:
            h = vocab[int(rng.integers(len(vocab)))]
            if (p, h) in positive_set or h in chosen:
                continue
            chosen.add(h)
            out.append((p, h))
    return out


# -------------------------------------------------------- active-learning glue


def pair_id(hyponym: str, hypernym: str) -> str:
    return f"{hyponym}::{hypernym}"


def split_pair_id(sample_id: str) -> tuple[str, str]:
    hyponym, _, hypernym = sample_id.partition("::")
    return hyponym, hypernym


class ProjectionALTrainer:
    """Adapter exposing the projection model to the active-learning loop.

    Sample ids are ``hyponym::hypernym`` pair ids; the evaluation metric is
    MAP over held-out hyponym rankings.  Each fit retrains from scratch with
    the same seed so loops are reproducible.
    """

    def __init__(self, embeddings: Mapping[str, np.ndarray],
                 config: ProjectionConfig,
                 candidates: Mapping[str, Sequence[str]],
                 gold: Mapping[str, set[str]]):
        self.embeddings = embeddings
        self.config = config
        self.candidates = candidates
        self.gold = gold

    def fit(self, labeled: Mapping[str, int]) -> ProjectionModel:
        model = ProjectionModel.create(self.embeddings, self.config)
        positives = [split_pair_id(s) for s, y in labeled.items() if y == 1]
        negatives = [split_pair_id(s) for s, y in labeled.items() if y == 0]
        if positives and negatives:
            model.train(sorted(positives), sorted(negatives))
        return model

    def evaluate(self, model: ProjectionModel, test_set: Sequence[str]) -> float:
        rankings = [model.rank(q, list(self.candidates[q])) for q in test_set]
        return evaluate_rankings(rankings, self.gold).map

    def score(self, model: ProjectionModel, ids: Sequence[str]) -> np.ndarray:
        if not ids:
            return np.zeros(0)
        pairs = [split_pair_id(s) for s in ids]
        p = np.stack([model.embedding(a) for a, _ in pairs])
        h = np.stack([model.embedding(b) for _, b in pairs])
        z = model._logits(p, h)
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                        np.exp(z) / (1.0 + np.exp(z)))


# ------------------------------------------------------------------ evaluation


@dataclass(frozen=True)
class RankingMetrics:
    map: float
    mrr: float
    p_at_1: float


def evaluate_rankings(rankings: Iterable[RankedHypernyms],
                      gold: Mapping[str, set[str]]) -> RankingMetrics:
    """Standard MAP / MRR / P@1 over per-hyponym candidate rankings."""
    ap_values, rr_values, hits = [], [], []
    n = 0
    for ranking in rankings:
        relevant = gold.get(ranking.hyponym)
        if not relevant:
            raise ValueError(f"query {ranking.hyponym!r} has no gold hypernyms")
        n += 1
        found = 0
        ap = 0.0
        rr = 0.0
        for rank, (candidate, _) in enumerate(ranking.ranked, start=1):
            if candidate in relevant:
                found += 1
                ap += found / rank
                if rr == 0.0:
                    rr = 1.0 / rank
        ap_values.append(ap / len(relevant))
        rr_values.append(rr)
        hits.append(1.0 if ranking.ranked and ranking.ranked[0][0] in relevant
                    else 0.0)
    if n == 0:
        raise ValueError("no rankings to evaluate")
    return RankingMetrics(map=sum(ap_values) / n, mrr=sum(rr_values) / n,
                          p_at_1=sum(hits) / n)
