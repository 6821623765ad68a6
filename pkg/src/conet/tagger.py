"""Sequence-tagging pipelines over the linear-chain CRF.

Covers primitive-concept mining from corpora, e-commerce concept tagging
(linking short phrases to primitive concepts), and distant-supervision
training-data generation by maximum-matching against the store vocabulary.

The default emission scorer is a windowed-convolution encoder over
word/char/POS embeddings followed by single-head scaled-dot-product
self-attention, optionally augmented with a per-token textual-context
vector; recurrent encoders are deliberately out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .crf import CrfModel, LabelInventory, PartialLabeling
from .providers import HashEmbeddings, LexiconPosTagger
from .store import ConceptNet
from .tensor import CompGraph, Tensor, glorot, load_params, save_params, sgd_step

DEFAULT_STOPWORDS = frozenset({
    "for", "in", "on", "with", "from", "of", "to", "at", "the", "a", "an",
    "and", "or", "is", "are",
})


@dataclass(frozen=True)
class EmissionInput:
    """Per-token features for the emission scorer; all sequences aligned."""

    tokens: tuple[str, ...]
    word_ids: tuple[int, ...] = ()
    char_ids: tuple[tuple[int, ...], ...] = ()
    pos_ids: tuple[int, ...] = ()
    positions: tuple[int, ...] = ()
    text_context: np.ndarray | None = None
    features: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    labels: tuple[str, ...]


@dataclass
class TaggerConfig:
    domains: tuple[str, ...]
    word_dim: int = 16
    char_dim: int = 8
    char_out_dim: int = 8
    pos_dim: int = 4
    hidden_dim: int = 24
    attention_dim: int = 16
    window: int = 3
    use_chars: bool = True
    use_text_context: bool = False
    text_context_dim: int = 8
    epochs: int = 4
    lr: float = 0.2
    seed: int = 0


class Featurizer:
    """Token/char/POS vocabularies plus the optional context provider."""

    def __init__(self, words: Sequence[str], pos_tagger: LexiconPosTagger,
                 config: TaggerConfig):
        self.word_to_id = {w: i + 1 for i, w in enumerate(sorted(set(words)))}
        chars = sorted({c for w in self.word_to_id for c in w})
        self.char_to_id = {c: i + 1 for i, c in enumerate(chars)}
        self.pos_tagger = pos_tagger
        self.pos_to_id = {t: i + 1 for i, t in enumerate(pos_tagger.tags)}
        self.config = config
        self._tm = (HashEmbeddings(config.text_context_dim, salt="text-context")
                    if config.use_text_context else None)

    @property
    def n_words(self) -> int:
        return len(self.word_to_id) + 1

    @property
    def n_chars(self) -> int:
        return len(self.char_to_id) + 1

    @property
    def n_pos(self) -> int:
        return len(self.pos_to_id) + 1

    def encode(self, tokens: Sequence[str]) -> EmissionInput:
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        tokens = tuple(tokens)
        pos_tags = self.pos_tagger.tag(tokens)
        tm = self._tm.matrix(tokens) if self._tm is not None else None
        return EmissionInput(
            tokens=tokens,
            word_ids=tuple(self.word_to_id.get(t, 0) for t in tokens),
            char_ids=tuple(tuple(self.char_to_id.get(c, 0) for c in t)
                           for t in tokens),
            pos_ids=tuple(self.pos_to_id.get(p, 0) for p in pos_tags),
            positions=tuple(range(len(tokens))),
            text_context=tm,
        )

    def vocab_header(self) -> dict:
        return {
            "words": sorted(self.word_to_id, key=self.word_to_id.get),
            "pos_lexicon": self.pos_tagger.lexicon,
        }


def _one_hot(ids: Sequence[int], size: int) -> np.ndarray:
    out = np.zeros((len(ids), size))
    out[np.arange(len(ids)), list(ids)] = 1.0
    return out


def _position_features(length: int, dim: int = 4) -> np.ndarray:
    idx = np.arange(length)[:, None]
    rates = np.array([1.0, 0.5, 0.1, 0.05])[None, :dim]
    feats = np.concatenate([np.sin(idx * rates), np.cos(idx * rates)], axis=1)
    return feats[:, :dim]


class LinearEmissions:
    """Affine map from caller-supplied per-token feature vectors."""

    W, B = "emis.W", "emis.b"

    def __init__(self, dim: int):
        self.dim = dim

    def init_params(self, rng, n_labels: int) -> dict[str, np.ndarray]:
        return {self.W: glorot(rng, (self.dim, n_labels)),
                self.B: np.zeros((1, n_labels))}

    def emissions(self, g: CompGraph, x: EmissionInput, leaves) -> Tensor:
        feats = g.constant(x.features)
        scores = g.matmul(feats, leaves[self.W])
        tile = g.constant(np.ones((len(x), 1)))
        return g.add(scores, g.matmul(tile, leaves[self.B]))


class ConvAttentionEmissions:
    """Char-conv + word + POS embeddings -> windowed conv -> self-attention
    (over [hidden; text-context] when context is enabled) -> label scores."""

    def __init__(self, featurizer: Featurizer):
        self.f = featurizer
        cfg = featurizer.config
        self.in_dim = cfg.word_dim + cfg.pos_dim + 4
        if cfg.use_chars:
            self.in_dim += cfg.char_out_dim
        self.att_in = cfg.hidden_dim + (cfg.text_context_dim
                                        if cfg.use_text_context else 0)

    def init_params(self, rng, n_labels: int) -> dict[str, np.ndarray]:
        cfg = self.f.config
        params = {
            "enc.word": glorot(rng, (self.f.n_words, cfg.word_dim)),
            "enc.pos": glorot(rng, (self.f.n_pos, cfg.pos_dim)),
            "enc.seq_kernel": glorot(rng, (cfg.window, self.in_dim, cfg.hidden_dim),
                                     fan_in=cfg.window * self.in_dim),
            "enc.Wq": glorot(rng, (self.att_in, cfg.attention_dim)),
            "enc.Wk": glorot(rng, (self.att_in, cfg.attention_dim)),
            "enc.Wv": glorot(rng, (self.att_in, cfg.attention_dim)),
            "enc.out_W": glorot(rng, (cfg.attention_dim, n_labels)),
            "enc.out_b": np.zeros((1, n_labels)),
        }
        if cfg.use_chars:
            params["enc.char"] = glorot(rng, (self.f.n_chars, cfg.char_dim))
            params["enc.char_kernel"] = glorot(
                rng, (3, cfg.char_dim, cfg.char_out_dim), fan_in=3 * cfg.char_dim)
        return params

    def emissions(self, g: CompGraph, x: EmissionInput, leaves) -> Tensor:
        cfg = self.f.config
        length = len(x)
        words = g.matmul(g.constant(_one_hot(x.word_ids, self.f.n_words)),
                         leaves["enc.word"])
        pos = g.matmul(g.constant(_one_hot(x.pos_ids, self.f.n_pos)),
                       leaves["enc.pos"])
        parts = [words, pos, g.constant(_position_features(length))]
        if cfg.use_chars:
            rows = []
            for chars in x.char_ids:
                ch = g.matmul(g.constant(_one_hot(chars, self.f.n_chars)),
                              leaves["enc.char"])
                conv = g.relu(g.conv1d(ch, leaves["enc.char_kernel"], window=3))
                rows.append(g.reshape(g.max_pool_over_time(conv),
                                      (1, cfg.char_out_dim)))
            parts.append(g.concat(rows, axis=0))
        seq = g.concat(parts, axis=1)
        hidden = g.tanh(g.conv1d(seq, leaves["enc.seq_kernel"], window=cfg.window))
        if cfg.use_text_context:
            hidden = g.concat([hidden, g.constant(x.text_context)], axis=1)
        q = g.matmul(hidden, leaves["enc.Wq"])
        k = g.matmul(hidden, leaves["enc.Wk"])
        v = g.matmul(hidden, leaves["enc.Wv"])
        att = g.softmax(g.scale(g.matmul(q, g.transpose(k)),
                                1.0 / math.sqrt(cfg.attention_dim)), axis=1)
        encoded = g.matmul(att, v)
        scores = g.matmul(encoded, leaves["enc.out_W"])
        tile = g.constant(np.ones((length, 1)))
        return g.add(scores, g.matmul(tile, leaves["enc.out_b"]))


# -------------------------------------------------------------------- training


def clip_gradients(grads: dict[str, np.ndarray],
                   max_norm: float) -> dict[str, np.ndarray]:
    """Scale the whole gradient set so its global L2 norm is <= max_norm."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return {k: v * factor for k, v in grads.items()}


def train_crf(dataset: Sequence[tuple[EmissionInput, PartialLabeling]],
              inventory: LabelInventory, scorer, epochs: int, lr: float,
              seed: int = 0, clip_norm: float = 5.0) -> tuple[CrfModel, list[float]]:
    """SGD over the fuzzy NLL; returns the model and smoothed epoch losses."""
    if not dataset:
        raise ValueError("training dataset is empty")
    model = CrfModel.create(inventory, scorer, seed=seed)
    rng = np.random.default_rng(seed)
    smoothed: list[float] = []
    ema = None
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for idx in order:
            x, labeling = dataset[idx]
            g = CompGraph()
            leaves = g.bind(model.params)
            loss = model.loss_on_graph(g, leaves, x, labeling)
            total += loss.item()
            grads = clip_gradients(g.backward(loss), clip_norm)
            model.params = sgd_step(model.params, grads, lr)
        mean = total / len(dataset)
        ema = mean if ema is None else 0.5 * ema + 0.5 * mean
        smoothed.append(ema)
    return model, smoothed


class Tagger:
    """Featurizer + CRF bundle with the end-to-end pipeline operations."""

    def __init__(self, config: TaggerConfig, featurizer: Featurizer,
                 model: CrfModel, loss_history: list[float] | None = None):
        self.config = config
        self.featurizer = featurizer
        self.model = model
        self.loss_history = loss_history or []

    @classmethod
    def train(cls, sentences: Sequence[LabeledSentence], config: TaggerConfig,
              pos_tagger: LexiconPosTagger | None = None) -> "Tagger":
        if not sentences:
            raise ValueError("no training sentences")
        inventory = LabelInventory.from_domains(config.domains)
        featurizer = Featurizer([t for s in sentences for t in s.tokens],
                                pos_tagger or LexiconPosTagger(), config)
        scorer = ConvAttentionEmissions(featurizer)
        dataset = [(featurizer.encode(s.tokens),
                    PartialLabeling.singletons(inventory, s.labels))
                   for s in sentences]
        model, history = train_crf(dataset, inventory, scorer,
                                   epochs=config.epochs, lr=config.lr,
                                   seed=config.seed)
        return cls(config, featurizer, model, history)

    def decode(self, tokens: Sequence[str]) -> list[str]:
        labels, _ = self.model.viterbi(self.featurizer.encode(tokens))
        return labels

    def decode_spans(self, tokens: Sequence[str]) -> list[tuple[int, int, str]]:
        return self.model.inventory.spans(self.decode(tokens))

    # ------------------------------------------------------------- checkpoint

    def save(self, path) -> None:
        header = {
            "kind": "tagger",
            "domains": list(self.config.domains),
            "config": {k: v for k, v in vars(self.config).items()
                       if k != "domains"},
            "featurizer": self.featurizer.vocab_header(),
        }
        save_params(path, self.model.params, header=header)

    @classmethod
    def load(cls, path) -> "Tagger":
        params, header = load_params(path)
        config = TaggerConfig(domains=tuple(header["domains"]),
                              **header["config"])
        featurizer = Featurizer(header["featurizer"]["words"],
                                LexiconPosTagger(header["featurizer"]["pos_lexicon"]),
                                config)
        inventory = LabelInventory.from_domains(config.domains)
        model = CrfModel(inventory, ConvAttentionEmissions(featurizer), params)
        return cls(config, featurizer, model)


# ----------------------------------------------------------------- operations


def mine_concepts(corpus: Iterable[Sequence[str]],
                  tagger: Tagger) -> list[tuple[str, str, int]]:
    """Decode each sentence and aggregate maximal spans by (surface, domain).

    Output candidates await review; nothing is written to a store here.
    """
    counts: dict[tuple[str, str], int] = {}
    for tokens in corpus:
        if not tokens:
            continue
        for start, end, domain in tagger.decode_spans(tokens):
            surface = " ".join(tokens[start:end])
            counts[(surface, domain)] = counts.get((surface, domain), 0) + 1
    return sorted(((surface, domain, n) for (surface, domain), n in counts.items()),
                  key=lambda rec: (-rec[2], rec[0], rec[1]))


@dataclass(frozen=True)
class TaggedConcept:
    tokens: tuple[str, ...]
    links: tuple[tuple[tuple[int, int], str], ...]
    unlinked: tuple[tuple[tuple[int, int], str], ...]  # (span, domain)


def tag_concept(phrase: str | Sequence[str], tagger: Tagger,
                store: ConceptNet) -> TaggedConcept:
    """Decode a short phrase and resolve spans to primitive-concept ids by
    (surface, domain) lookup; unresolved spans keep their decoded domain."""
    tokens = tuple(phrase.split() if isinstance(phrase, str) else phrase)
    if not tokens:
        raise ValueError("cannot tag an empty phrase")
    index = store.surface_index()
    links, unlinked = [], []
    for start, end, domain in tagger.decode_spans(tokens):
        surface = " ".join(tokens[start:end])
        ids = index.get((surface, domain))
        if ids:
            links.append(((start, end), ids[0]))
        else:
            unlinked.append(((start, end), domain))
    return TaggedConcept(tokens=tokens, links=tuple(links), unlinked=tuple(unlinked))


def store_vocabulary(store: ConceptNet) -> dict[tuple[str, ...], set[str]]:
    """Primitive surfaces as token tuples mapped to their domain sets."""
    vocab: dict[tuple[str, ...], set[str]] = {}
    for node in store.primitives.values():
        key = tuple(node.surface.split())
        if key:
            vocab.setdefault(key, set()).update(store.primitive_domains(node))
    return vocab


def distant_supervision(corpus: Iterable[Sequence[str]], store: ConceptNet,
                        stopwords: frozenset[str] = DEFAULT_STOPWORDS
                        ) -> list[LabeledSentence]:
    """Auto-label sentences by maximum-matching against the store vocabulary.

    The DP maximises matched-token count, breaking ties toward fewer
    segments.  A sentence is kept only when exactly one optimal labeling
    exists (counting surface-domain ambiguity), every unmatched token is a
    stopword, and at least one segment matched.
    """
    vocab = store_vocabulary(store)
    max_len = max((len(k) for k in vocab), default=0)
    kept: list[LabeledSentence] = []
    for tokens in corpus:
        tokens = tuple(tokens)
        if not tokens or not vocab:
            continue
        n = len(tokens)
        # best[i]: (matched_tokens, -segments) achievable from position i
        best: list[tuple[int, int]] = [(0, 0)] * (n + 1)
        ways: list[int] = [1] * (n + 1)
        moves: list[list[tuple[int, tuple[str, ...] | None]]] = [[] for _ in range(n + 1)]
        for i in range(n - 1, -1, -1):
            options: list[tuple[tuple[int, int], int, tuple[str, ...] | None]] = []
            skip = (best[i + 1][0], best[i + 1][1] - 1)
            options.append((skip, i + 1, None))
            for length in range(1, min(max_len, n - i) + 1):
                key = tokens[i:i + length]
                if key in vocab:
                    nxt = best[i + length]
                    options.append(((nxt[0] + length, nxt[1] - 1), i + length, key))
            top = max(score for score, _, _ in options)
            best[i] = top
            count = 0
            for score, nxt, key in options:
                if score == top:
                    mult = len(vocab[key]) if key is not None else 1
                    count += mult * ways[nxt]
                    moves[i].append((nxt, key))
            ways[i] = min(count, 2)
        if ways[0] != 1 or best[0][0] == 0:
            continue
        labels: list[str] = []
        ok = True
        pos = 0
        while pos < n:
            # ways[0] == 1 guarantees a single optimal move along the path
            nxt, key = moves[pos][0]
            if key is None:
                if tokens[pos] not in stopwords:
                    ok = False
                    break
                labels.append("O")
            else:
                domain = next(iter(vocab[key]))
                labels.append(f"B-{domain}")
                labels.extend(f"I-{domain}" for _ in range(len(key) - 1))
            pos = nxt
        if ok:
            kept.append(LabeledSentence(tokens=tokens, labels=tuple(labels)))
    return kept


@dataclass(frozen=True)
class SpanScores:
    precision: float
    recall: float
    f1: float


def score_spans(predicted: Sequence[Sequence[tuple[int, int, str]]],
                gold: Sequence[Sequence[tuple[int, int, str]]]) -> SpanScores:
    n_pred = n_gold = n_hit = 0
    for pred, ref in zip(predicted, gold):
        pred_set, ref_set = set(pred), set(ref)
        n_pred += len(pred_set)
        n_gold += len(ref_set)
        n_hit += len(pred_set & ref_set)
    precision = n_hit / n_pred if n_pred else 0.0
    recall = n_hit / n_gold if n_gold else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return SpanScores(precision, recall, f1)


def evaluate(tagger: Tagger, gold: Sequence[LabeledSentence]) -> SpanScores:
    """Exact span-and-domain match scoring against gold labels."""
    inventory = tagger.model.inventory
    predicted = [tagger.decode_spans(s.tokens) for s in gold]
    reference = [inventory.spans(list(s.labels)) for s in gold]
    return score_spans(predicted, reference)
