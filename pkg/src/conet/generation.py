"""E-commerce concept generation: slot-pattern combination, n-gram mining,
a wide+deep candidate classifier, and the batch QA gate.

Candidates come from two routes: Cartesian fills of class-slot patterns over
the primitive-concept store, and frequent n-grams mined from corpora (a
deliberate stand-in for a phrase-mining system).  A binary classifier scores
each candidate against the quality criteria (e-commerce meaning, coherence,
plausibility, clarity, correctness) learned jointly from labels; hand-built
scalar features (the wide side) back the learned encoders (the deep side).
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .providers import BigramLm, HashEmbeddings, LexiconPosTagger
from .store import ConceptNet, ECommerceConcept, StoreError
from .tensor import CompGraph, Tensor, glorot, grad_check, sgd_step


class GenerationError(ValueError):
    pass


# -------------------------------------------------------------------- patterns


@dataclass(frozen=True)
class Slot:
    kind: str            # "class" or "literal"
    value: str           # taxonomy class id, or the literal token

    def __post_init__(self):
        if self.kind not in ("class", "literal"):
            raise GenerationError(f"unknown slot kind {self.kind!r}")


@dataclass(frozen=True)
class GenerationPattern:
    id: str
    slots: tuple[Slot, ...]

    def __post_init__(self):
        if not any(s.kind == "class" for s in self.slots):
            raise GenerationError(f"pattern {self.id!r} needs at least one "
                                  "class slot")

    def class_slots(self) -> list[Slot]:
        return [s for s in self.slots if s.kind == "class"]


def load_generation_patterns(path) -> list[GenerationPattern]:
    """Pattern file: JSON list of {id, slots: [{class: id} | {literal: tok}]}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    patterns = []
    for record in raw:
        slots = []
        for spec in record["slots"]:
            if "class" in spec:
                slots.append(Slot("class", spec["class"]))
            elif "literal" in spec:
                slots.append(Slot("literal", spec["literal"]))
            else:
                raise GenerationError(f"slot {spec!r} needs 'class' or 'literal'")
        patterns.append(GenerationPattern(id=record["id"], slots=tuple(slots)))
    return patterns


@dataclass(frozen=True)
class CandidateConcept:
    phrase: str
    tokens: tuple[str, ...]
    source: str                    # "mined" | "generated:<pattern>" | "primitive-promoted"
    score: float | None = None
    links: tuple[tuple[tuple[int, int], str], ...] = ()

    def __post_init__(self):
        if not self.tokens:
            raise GenerationError("candidate concepts need at least one token")


def _slot_fillers(store: ConceptNet, class_id: str) -> list[tuple[str, str]]:
    """(primitive id, surface) pairs typed by the class or its descendants."""
    if class_id not in store.classes:
        raise GenerationError(f"pattern references unknown class {class_id!r}")
    allowed = {class_id} | store.descendants(class_id)
    out = [(node.id, node.surface)
           for node in store.primitives.values() if node.classes & allowed]
    return sorted(out)


def generate_from_patterns(patterns: Sequence[GenerationPattern],
                           store: ConceptNet,
                           limit_per_pattern: int = 1000
                           ) -> list[CandidateConcept]:
    """Cartesian fill of class slots with matching primitives, in pattern
    order then concept-id order, de-duplicated by phrase."""
    out: list[CandidateConcept] = []
    seen_phrases: set[str] = set()
    for pattern in patterns:
        fillers = [_slot_fillers(store, s.value) if s.kind == "class" else None
                   for s in pattern.slots]
        pools = [f for f in fillers if f is not None]
        emitted = 0
        for combo in itertools.product(*pools):
            if emitted >= limit_per_pattern:
                break
            tokens: list[str] = []
            links: list[tuple[tuple[int, int], str]] = []
            it = iter(combo)
            for slot, filler in zip(pattern.slots, fillers):
                if filler is None:
                    tokens.append(slot.value)
                else:
                    pid, surface = next(it)
                    start = len(tokens)
                    tokens.extend(surface.split())
                    links.append(((start, len(tokens)), pid))
            phrase = " ".join(tokens)
            if phrase in seen_phrases:
                continue
            seen_phrases.add(phrase)
            out.append(CandidateConcept(phrase=phrase, tokens=tuple(tokens),
                                        source=f"generated:{pattern.id}",
                                        links=tuple(links)))
            emitted += 1
    return out


def matches_any_pattern(tokens: Sequence[str],
                        patterns: Sequence[GenerationPattern],
                        store: ConceptNet) -> bool:
    """True when the token sequence can be segmented to fit some pattern."""
    index = store.surface_index()
    surface_classes: dict[str, set[str]] = {}
    for node in store.primitives.values():
        surface_classes.setdefault(node.surface, set()).update(node.classes)

    def class_ok(surface: str, class_id: str) -> bool:
        classes = surface_classes.get(surface)
        if not classes:
            return False
        allowed = {class_id} | store.descendants(class_id)
        return bool(classes & allowed)

    def walk(slots: tuple[Slot, ...], pos: int) -> bool:
        if not slots:
            return pos == len(tokens)
        slot, rest = slots[0], slots[1:]
        if slot.kind == "literal":
            return (pos < len(tokens) and tokens[pos] == slot.value
                    and walk(rest, pos + 1))
        for span in range(1, len(tokens) - pos + 1):
            surface = " ".join(tokens[pos:pos + span])
            if class_ok(surface, slot.value) and walk(rest, pos + span):
                return True
        return False

    return any(walk(p.slots, 0) for p in patterns)


# ---------------------------------------------------------------------- mining


@dataclass
class MiningConfig:
    max_n: int = 5
    min_count: int = 3
    min_npmi: float = 0.2
    min_chars: int = 4


def mine_candidates(corpus: Iterable[Sequence[str]],
                    config: MiningConfig | None = None) -> list[CandidateConcept]:
    """Frequent n-grams scored by count and normalized PMI.

    A stand-in for a full phrase-mining system: n-grams up to ``max_n``
    that occur at least ``min_count`` times and, for n >= 2, whose NPMI
    clears the threshold, become candidates.
    """
    config = config or MiningConfig()
    gram_counts: Counter = Counter()
    unigram_counts: Counter = Counter()
    total_tokens = 0
    for tokens in corpus:
        tokens = list(tokens)
        total_tokens += len(tokens)
        for tok in tokens:
            unigram_counts[tok] += 1
        for n in range(2, config.max_n + 1):
            for at in range(len(tokens) - n + 1):
                gram_counts[tuple(tokens[at:at + n])] += 1
    if total_tokens == 0:
        return []
    out = []
    for tok, count in unigram_counts.items():
        if count >= config.min_count and len(tok) >= config.min_chars:
            out.append(CandidateConcept(phrase=tok, tokens=(tok,),
                                        source="mined"))
    for gram, count in gram_counts.items():
        if count < config.min_count:
            continue
        p_gram = count / total_tokens
        p_parts = 1.0
        for tok in gram:
            p_parts *= unigram_counts[tok] / total_tokens
        pmi = math.log(p_gram / p_parts)
        npmi = pmi / (-math.log(p_gram))
        if npmi >= config.min_npmi:
            out.append(CandidateConcept(phrase=" ".join(gram), tokens=gram,
                                        source="mined"))
    counts = {**{(t,): c for t, c in unigram_counts.items()}, **gram_counts}
    return sorted(out, key=lambda c: (-counts[c.tokens], c.phrase))


# --------------------------------------------------------------- wide features


@dataclass(frozen=True)
class WideFeatures:
    char_count: int
    word_count: int
    lm_perplexity: float
    mean_popularity: float
    min_popularity: float
    pattern_match: float

    def as_vector(self) -> np.ndarray:
        # squash the unbounded counts/perplexity into comparable ranges
        return np.array([
            math.tanh(self.char_count / 20.0),
            math.tanh(self.word_count / 5.0),
            math.tanh(math.log(max(self.lm_perplexity, 1.0)) / 5.0),
            self.mean_popularity,
            self.min_popularity,
            self.pattern_match,
        ])


class CorpusStats:
    """Word popularity as the empirical CDF rank of corpus frequency."""

    def __init__(self):
        self.counts: Counter = Counter()
        self._rank: dict[str, float] = {}

    def fit(self, corpus: Iterable[Sequence[str]]) -> "CorpusStats":
        for tokens in corpus:
            self.counts.update(tokens)
        freqs = sorted(self.counts.values())
        n = len(freqs)
        self._rank = {}
        for word, freq in self.counts.items():
            below = _bisect_right(freqs, freq)
            self._rank[word] = below / n
        return self

    def popularity(self, word: str) -> float:
        return self._rank.get(word, 0.0)


def _bisect_right(sorted_list, value):
    import bisect

    return bisect.bisect_right(sorted_list, value)


def wide_features(candidate: CandidateConcept, stats: CorpusStats,
                  lm: BigramLm,
                  pattern_matcher: Callable[[Sequence[str]], bool] | None = None
                  ) -> WideFeatures:
    pops = [stats.popularity(t) for t in candidate.tokens]
    if pattern_matcher is not None:
        matched = 1.0 if pattern_matcher(candidate.tokens) else 0.0
    else:
        matched = 1.0 if candidate.source.startswith("generated:") else 0.0
    return WideFeatures(
        char_count=sum(len(t) for t in candidate.tokens),
        word_count=len(candidate.tokens),
        lm_perplexity=lm.perplexity(candidate.tokens),
        mean_popularity=float(np.mean(pops)),
        min_popularity=float(min(pops)),
        pattern_match=matched,
    )


# ------------------------------------------------------------------ classifier


@dataclass
class ClassifierConfig:
    char_dim: int = 8
    char_out_dim: int = 8
    word_dim: int = 12
    pos_dim: int = 4
    hidden_dim: int = 16
    attention_dim: int = 12
    knowledge_dim: int = 12
    wide_hidden: int = 8
    final_hidden: int = 12
    use_wide: bool = True
    use_knowledge: bool = True
    epochs: int = 8
    lr: float = 0.15
    clip_norm: float = 5.0
    seed: int = 0


class ConceptClassifier:
    """Wide+deep scorer for candidate concepts.

    Deep side: a char-level conv encoder (mean-pooled) and a word-level
    conv + self-attention encoder, optionally augmented with per-word
    knowledge vectors from the gloss provider.  Wide side: a two-layer
    feed-forward over the scalar features.  Output in (0, 1).
    """

    def __init__(self, config: ClassifierConfig, featurizer, params):
        self.config = config
        self.featurizer = featurizer
        self.params = params
        self.loss_history: list[float] = []

    @classmethod
    def create(cls, config: ClassifierConfig | None = None,
               featurizer: "CandidateFeaturizer | None" = None
               ) -> "ConceptClassifier":
        config = config or ClassifierConfig()
        featurizer = featurizer or CandidateFeaturizer(config)
        rng = np.random.default_rng(config.seed)
        c = config
        att_w = c.word_dim + c.pos_dim
        params = {
            "cls.char": glorot(rng, (featurizer.n_chars, c.char_dim)),
            "cls.char_kernel": glorot(rng, (3, c.char_dim, c.char_out_dim),
                                      fan_in=3 * c.char_dim),
            "cls.word": glorot(rng, (featurizer.n_words, c.word_dim)),
            "cls.pos": glorot(rng, (featurizer.n_pos, c.pos_dim)),
            "cls.word_kernel": glorot(rng, (3, att_w, c.hidden_dim),
                                      fan_in=3 * att_w),
            "cls.Wq": glorot(rng, (c.hidden_dim, c.attention_dim)),
            "cls.Wk": glorot(rng, (c.hidden_dim, c.attention_dim)),
            "cls.Wv": glorot(rng, (c.hidden_dim, c.attention_dim)),
            "cls.kWq": glorot(rng, (c.knowledge_dim, c.attention_dim)),
            "cls.kWk": glorot(rng, (c.knowledge_dim, c.attention_dim)),
            "cls.kWv": glorot(rng, (c.knowledge_dim, c.attention_dim)),
            "cls.wide_W1": glorot(rng, (6, c.wide_hidden)),
            "cls.wide_b1": np.zeros((1, c.wide_hidden)),
            "cls.wide_W2": glorot(rng, (c.wide_hidden, c.wide_hidden)),
            "cls.wide_b2": np.zeros((1, c.wide_hidden)),
            "cls.final_W1": glorot(rng, (cls._concat_dim(c), c.final_hidden)),
            "cls.final_b1": np.zeros((1, c.final_hidden)),
            "cls.final_W2": glorot(rng, (c.final_hidden, 1)),
            "cls.final_b2": np.zeros((1, 1)),
        }
        return cls(config, featurizer, params)

    @staticmethod
    def _concat_dim(c: ClassifierConfig) -> int:
        dim = c.char_out_dim + c.attention_dim          # c1 + word encoder
        if c.use_knowledge:
            dim += c.attention_dim
        if c.use_wide:
            dim += c.wide_hidden
        return dim

    def _self_attention(self, g, seq: Tensor, wq, wk, wv) -> Tensor:
        q, k_, v = g.matmul(seq, wq), g.matmul(seq, wk), g.matmul(seq, wv)
        att = g.softmax(g.scale(g.matmul(q, g.transpose(k_)),
                                1.0 / math.sqrt(self.config.attention_dim)),
                        axis=1)
        return g.matmul(att, v)

    def logit_on_graph(self, g: CompGraph, leaves, candidate: CandidateConcept,
                       wide: WideFeatures | None) -> Tensor:
        c = self.config
        f = self.featurizer
        # char path: encode the whole phrase as one character sequence
        chars = f.char_ids(candidate.phrase)
        char_emb = g.matmul(g.constant(_one_hot(chars, f.n_chars)),
                            leaves["cls.char"])
        conv = g.relu(g.conv1d(char_emb, leaves["cls.char_kernel"], window=3))
        c1 = g.reshape(g.mean_pool_over_time(conv), (1, c.char_out_dim))
        # word path
        words = g.matmul(g.constant(_one_hot(f.word_ids(candidate.tokens),
                                             f.n_words)), leaves["cls.word"])
        pos = g.matmul(g.constant(_one_hot(f.pos_ids(candidate.tokens), f.n_pos)),
                       leaves["cls.pos"])
        seq = g.tanh(g.conv1d(g.concat([words, pos], axis=1),
                              leaves["cls.word_kernel"], window=3))
        encoded = self._self_attention(g, seq, leaves["cls.Wq"], leaves["cls.Wk"],
                                       leaves["cls.Wv"])
        parts = [c1, g.reshape(g.max_pool_over_time(encoded),
                               (1, c.attention_dim))]
        if c.use_knowledge:
            know = g.constant(f.knowledge_vectors(candidate.tokens))
            k_enc = self._self_attention(g, know, leaves["cls.kWq"],
                                         leaves["cls.kWk"], leaves["cls.kWv"])
            parts.append(g.reshape(g.max_pool_over_time(k_enc),
                                   (1, c.attention_dim)))
        if c.use_wide:
            if wide is None:
                raise GenerationError("wide features enabled but not supplied")
            w = g.constant(wide.as_vector()[None, :])
            h1 = g.tanh(g.add(g.matmul(w, leaves["cls.wide_W1"]),
                              leaves["cls.wide_b1"]))
            h2 = g.tanh(g.add(g.matmul(h1, leaves["cls.wide_W2"]),
                              leaves["cls.wide_b2"]))
            parts.append(h2)
        joined = g.concat(parts, axis=1)
        hidden = g.tanh(g.add(g.matmul(joined, leaves["cls.final_W1"]),
                              leaves["cls.final_b1"]))
        return g.add(g.matmul(hidden, leaves["cls.final_W2"]),
                     leaves["cls.final_b2"])

    def classify(self, candidate: CandidateConcept,
                 wide: WideFeatures | None = None) -> float:
        if not candidate.tokens:
            raise GenerationError("cannot classify an empty candidate")
        g = CompGraph()
        leaves = g.bind(self.params)
        z = self.logit_on_graph(g, leaves, candidate, wide).item()
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else \
            math.exp(z) / (1.0 + math.exp(z))


def _one_hot(ids: Sequence[int], size: int) -> np.ndarray:
    out = np.zeros((len(ids), size))
    out[np.arange(len(ids)), list(ids)] = 1.0
    return out


class CandidateFeaturizer:
    """Vocabulary and provider features for candidate phrases.

    Word embeddings are a trainable table over the vocabulary seen in
    training (index 0 for unseen words, whose identity then only reaches the
    model through chars, POS, knowledge, and the wide features).  Knowledge
    vectors are the pluggable gloss-provider stand-in."""

    def __init__(self, config: ClassifierConfig,
                 vocabulary: Sequence[str] = (),
                 knowledge: HashEmbeddings | None = None,
                 pos_tagger: LexiconPosTagger | None = None):
        self.word_to_id = {w: i + 1 for i, w in enumerate(sorted(set(vocabulary)))}
        self.knowledge = knowledge or HashEmbeddings(config.knowledge_dim,
                                                     salt="gloss")
        self.pos_tagger = pos_tagger or LexiconPosTagger()
        self.pos_to_id = {t: i + 1 for i, t in enumerate(self.pos_tagger.tags)}
        self.n_chars = 64
        self.n_pos = len(self.pos_to_id) + 1

    @property
    def n_words(self) -> int:
        return len(self.word_to_id) + 1

    def char_ids(self, phrase: str) -> list[int]:
        # stable hash-bucketed characters keep the table small and open
        return [1 + (ord(ch) % (self.n_chars - 1)) for ch in phrase]

    def word_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.word_to_id.get(t, 0) for t in tokens]

    def knowledge_vectors(self, tokens: Sequence[str]) -> np.ndarray:
        return self.knowledge.matrix(tokens)

    def pos_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.pos_to_id.get(t, 0) for t in self.pos_tagger.tag(tokens)]


def train_classifier(labeled: Sequence[tuple[CandidateConcept, int]],
                     config: ClassifierConfig | None = None,
                     featurizer: CandidateFeaturizer | None = None,
                     wide_fn: Callable[[CandidateConcept], WideFeatures] | None = None
                     ) -> ConceptClassifier:
    """Pointwise NLL training; both classes must be present."""
    config = config or ClassifierConfig()
    labels = {y for _, y in labeled}
    if labels != {0, 1}:
        raise GenerationError("training data must contain both classes")
    if featurizer is None:
        featurizer = CandidateFeaturizer(
            config, vocabulary=[t for c, _ in labeled for t in c.tokens])
    model = ConceptClassifier.create(config, featurizer)
    wides = [wide_fn(c) if (config.use_wide and wide_fn) else None
             for c, _ in labeled]
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(labeled))
        total = 0.0
        for idx in order:
            candidate, y = labeled[idx]
            g = CompGraph()
            leaves = g.bind(model.params)
            z = model.logit_on_graph(g, leaves, candidate, wides[idx])
            sign = g.constant(np.full((1, 1), 1.0 - 2.0 * y))
            loss = g.logsumexp(g.concat([g.constant(np.zeros((1, 1))),
                                         g.mul(z, sign)], axis=1))
            total += loss.item()
            grads = g.backward(loss)
            norm = math.sqrt(sum(float((gv * gv).sum()) for gv in grads.values()))
            if norm > config.clip_norm:
                grads = {k: v * (config.clip_norm / norm) for k, v in grads.items()}
            model.params = sgd_step(model.params, grads, config.lr)
        model.loss_history.append(total / len(labeled))
    return model


def check_classifier_gradients(labeled, config=None, eps=1e-4) -> float:
    config = config or ClassifierConfig()
    model = ConceptClassifier.create(config)

    def build(g, leaves):
        losses = []
        for candidate, y in labeled:
            wide = WideFeatures(5, 2, 20.0, 0.5, 0.2, 1.0) if config.use_wide \
                else None
            z = model.logit_on_graph(g, leaves, candidate, wide)
            sign = g.constant(np.full((1, 1), 1.0 - 2.0 * y))
            losses.append(g.logsumexp(g.concat(
                [g.constant(np.zeros((1, 1))), g.mul(z, sign)], axis=1)))
        stack = g.concat([g.reshape(l, (1, 1)) for l in losses], axis=0)
        return g.mean_pool_over_time(stack)

    return grad_check(build, model.params, eps=eps)


# --------------------------------------------------------------------- QA gate


@dataclass(frozen=True)
class QaDecision:
    accepted: bool
    accuracy: float
    sampled: tuple[tuple[CandidateConcept, int], ...]
    written_ids: tuple[str, ...]


class QaOracleError(RuntimeError):
    """The annotation oracle failed; the batch stays pending."""


def qa_gate(batch: Sequence[CandidateConcept], sample_rate: float,
            accuracy_threshold: float,
            oracle: Callable[[Sequence[CandidateConcept]], Sequence[int]],
            store: ConceptNet, seed: int = 0) -> QaDecision:
    """Sample part of the batch for human judgement; accept all or nothing.

    Accepted batches are written as validated e-commerce concepts, so every
    candidate must already carry primitive links (pattern-generated output
    does; mined candidates go through concept tagging first).  Sampled
    labels are returned for retraining either way.
    """
    if not batch:
        raise GenerationError("empty batch")
    if not 0.0 < sample_rate <= 1.0:
        raise GenerationError(f"sample rate {sample_rate} outside (0, 1]")
    missing = [c.phrase for c in batch if not c.links]
    if missing:
        raise GenerationError(f"candidates lack primitive links: {missing[:3]}")
    rng = np.random.default_rng(seed)
    n_sample = max(1, int(sample_rate * len(batch)))
    picked = sorted(rng.choice(len(batch), size=n_sample, replace=False).tolist())
    sampled = [batch[i] for i in picked]
    try:
        labels = list(oracle(sampled))
    except Exception as exc:
        raise QaOracleError(f"annotation failed, batch pending: {exc}") from exc
    if len(labels) != len(sampled):
        raise QaOracleError("oracle returned a partial labeling, batch pending")
    accuracy = sum(labels) / len(labels)
    accepted = accuracy >= accuracy_threshold
    written: list[str] = []
    if accepted:
        for candidate in batch:
            node_id = f"ec:{candidate.phrase}"
            store.upsert_node(ECommerceConcept(
                id=node_id, phrase=candidate.phrase, tokens=candidate.tokens,
                status="validated", links=candidate.links))
            written.append(node_id)
    return QaDecision(accepted=accepted, accuracy=accuracy,
                      sampled=tuple(zip(sampled, labels)),
                      written_ids=tuple(written))
