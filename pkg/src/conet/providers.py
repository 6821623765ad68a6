"""Pluggable feature providers with deterministic desk-scale defaults.

Pretrained resources (corpus embeddings, gloss encoders, language models,
POS taggers) are replaced by interfaces whose default implementations are
deterministic: hash-keyed pseudo-random vectors, a bigram language model
fitted on the supplied corpus, and a lexicon POS tagger.  Runs are fully
reproducible without any external model files.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np


def hash_vector(key: str, dim: int, salt: str = "", scale: float = 1.0) -> np.ndarray:
    """Deterministic pseudo-random unit vector for a string key."""
    digest = hashlib.sha256(f"{salt}|{key}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    vec = np.random.default_rng(seed).normal(size=dim)
    norm = np.linalg.norm(vec)
    return scale * vec / (norm if norm > 0 else 1.0)


class HashEmbeddings:
    """Embedding provider keyed purely by token hash."""

    def __init__(self, dim: int, salt: str = "", scale: float = 1.0):
        self.dim = dim
        self.salt = salt
        self.scale = scale

    def vector(self, key: str) -> np.ndarray:
        return hash_vector(key, self.dim, salt=self.salt, scale=self.scale)

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(k) for k in keys])


class FileEmbeddings:
    """Embeddings loaded from a JSON file, hash fallback for unseen keys."""

    def __init__(self, path, dim: int, salt: str = ""):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        self.table = {k: np.array(v, dtype=np.float64) for k, v in raw.items()}
        self.dim = dim
        self._fallback = HashEmbeddings(dim, salt=salt)
        for key, vec in self.table.items():
            if vec.shape != (dim,):
                raise ValueError(f"embedding for {key!r} has shape {vec.shape}, "
                                 f"expected ({dim},)")

    def vector(self, key: str) -> np.ndarray:
        hit = self.table.get(key)
        return hit if hit is not None else self._fallback.vector(key)

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(k) for k in keys])


class OverlayEmbeddings:
    """In-memory overrides on top of another provider (used by benchmarks)."""

    def __init__(self, base, table: Mapping[str, np.ndarray]):
        self.base = base
        self.dim = base.dim
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def vector(self, key: str) -> np.ndarray:
        hit = self.table.get(key)
        return hit if hit is not None else self.base.vector(key)

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        if not keys:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(k) for k in keys])


class NgramLm:
    """Add-one-smoothed n-gram language model; the perplexity stub.

    ``perplexity(tokens)`` is exp of the mean negative log probability of
    each token given its (order-1)-token context (padded with a start
    symbol), so it is a closed-form function of the fitted counts.
    """

    START = "<s>"

    def __init__(self, order: int = 2, smoothing: float = 1.0):
        if order < 1:
            raise ValueError("order must be >= 1")
        if smoothing <= 0:
            raise ValueError("smoothing mass must be positive")
        self.order = order
        self.smoothing = smoothing
        self.contexts: Counter = Counter()
        self.grams: Counter = Counter()
        self.vocab: set[str] = set()

    def fit(self, corpus: Iterable[Sequence[str]]) -> "NgramLm":
        pad = (self.START,) * (self.order - 1)
        for tokens in corpus:
            seq = (*pad, *tokens)
            self.vocab.update(tokens)
            for at in range(len(tokens)):
                context = seq[at:at + self.order - 1]
                self.contexts[context] += 1
                self.grams[(context, seq[at + self.order - 1])] += 1
        return self

    def log_prob(self, context: tuple[str, ...], tok: str) -> float:
        k = self.smoothing
        num = self.grams.get((context, tok), 0) + k
        den = self.contexts.get(context, 0) + k * (len(self.vocab) + 1)
        return math.log(num / den)

    def perplexity(self, tokens: Sequence[str]) -> float:
        if not tokens:
            raise ValueError("perplexity of an empty sequence is undefined")
        pad = (self.START,) * (self.order - 1)
        seq = (*pad, *tokens)
        total = 0.0
        for at in range(len(tokens)):
            total += self.log_prob(seq[at:at + self.order - 1],
                                   seq[at + self.order - 1])
        return math.exp(-total / len(tokens))


class BigramLm(NgramLm):
    """The default perplexity scorer."""

    def __init__(self):
        super().__init__(order=2)


DEFAULT_POS_LEXICON = {
    "for": "PREP", "in": "PREP", "on": "PREP", "with": "PREP", "from": "PREP",
    "of": "PREP", "to": "PREP", "at": "PREP",
    "the": "DET", "a": "DET", "an": "DET",
    "and": "CONJ", "or": "CONJ",
    "is": "VERB", "are": "VERB", "keep": "VERB", "get": "VERB", "buy": "VERB",
    "need": "VERB", "wear": "VERB",
}

POS_TAGS = ("X", "PREP", "DET", "CONJ", "VERB", "NOUN")


class LexiconPosTagger:
    """POS annotation from a small lexicon; everything else is 'X'."""

    def __init__(self, lexicon: Mapping[str, str] | None = None):
        self.lexicon = dict(DEFAULT_POS_LEXICON if lexicon is None else lexicon)
        self.tags = tuple(sorted(set(self.lexicon.values()) | {"X"}))

    @classmethod
    def from_file(cls, path) -> "LexiconPosTagger":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [self.lexicon.get(tok, "X") for tok in tokens]


def tokenize(text: str, vocabulary: set[str] | None = None) -> list[str]:
    """Whitespace tokenization; unspaced text falls back to greedy
    leftmost-longest max-matching against the vocabulary (single characters
    when nothing matches)."""
    text = text.strip()
    if not text:
        return []
    if " " in text or vocabulary is None:
        return text.split()
    tokens = []
    pos = 0
    max_len = max((len(v) for v in vocabulary), default=1)
    while pos < len(text):
        match = None
        for end in range(min(len(text), pos + max_len), pos, -1):
            if text[pos:end] in vocabulary:
                match = text[pos:end]
                break
        if match is None:
            match = text[pos]
        tokens.append(match)
        pos += len(match)
    return tokens
