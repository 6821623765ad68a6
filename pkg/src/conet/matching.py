"""Knowledge-aware concept-item semantic matching.

Both sides are encoded with same-padded convolutions; a two-way attention
matrix pools each side into a single vector; a matching pyramid scores
word-pair interactions between the knowledge-extended concept sequence
(token embeddings, per-token gloss vectors, linked-class embeddings) and
the raw title sequence.  The final probability combines the pooled vectors
with the pyramid embedding through a small feed-forward head.

Items whose relevance comes from the compound meaning of a concept rather
than any constituent token (drift pairs, like charcoal for an outdoor
barbecue) are exactly what the gloss channel is for.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .providers import HashEmbeddings, LexiconPosTagger
from .store import ConceptNet, Edge
from .tensor import CompGraph, Tensor, glorot, grad_check, sgd_step


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class ConceptSideInput:
    tokens: tuple[str, ...]
    linked_classes: tuple[str, ...] = ()     # taxonomy class ids of links

    def __post_init__(self):
        if not self.tokens:
            raise MatchingError("concept side needs at least one token")


@dataclass(frozen=True)
class ItemSideInput:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise MatchingError("item side needs at least one token")


@dataclass
class MatchConfig:
    embed_dim: int = 10
    pos_dim: int = 3
    hidden_dim: int = 12
    attention_dim: int = 10
    pyramid_slices: int = 2
    pyramid_channels: tuple[int, int] = (6, 3)
    pyramid_grid: int = 3
    pyramid_out: int = 10
    final_hidden: int = 12
    use_knowledge: bool = True
    epochs: int = 6
    lr: float = 0.15
    clip_norm: float = 5.0
    seed: int = 0


def _one_hot(ids: Sequence[int], size: int) -> np.ndarray:
    out = np.zeros((len(ids), size))
    out[np.arange(len(ids)), list(ids)] = 1.0
    return out


class MatchFeaturizer:
    """Vocabulary, POS ids, and the pluggable gloss provider for both sides."""

    def __init__(self, config: MatchConfig, vocabulary: Sequence[str] = (),
                 class_ids: Sequence[str] = (),
                 knowledge: HashEmbeddings | None = None,
                 pos_tagger: LexiconPosTagger | None = None):
        self.word_to_id = {w: i + 1 for i, w in enumerate(sorted(set(vocabulary)))}
        self.class_to_id = {c: i + 1 for i, c in enumerate(sorted(set(class_ids)))}
        self.knowledge = knowledge or HashEmbeddings(config.embed_dim,
                                                     salt="match-gloss")
        self.pos_tagger = pos_tagger or LexiconPosTagger()
        self.pos_to_id = {t: i + 1 for i, t in enumerate(self.pos_tagger.tags)}

    @property
    def n_words(self) -> int:
        return len(self.word_to_id) + 1

    @property
    def n_classes(self) -> int:
        return len(self.class_to_id) + 1

    @property
    def n_pos(self) -> int:
        return len(self.pos_to_id) + 1

    def word_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.word_to_id.get(t, 0) for t in tokens]

    def pos_ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.pos_to_id.get(t, 0) for t in self.pos_tagger.tag(tokens)]

    def class_ids(self, classes: Sequence[str]) -> list[int]:
        return [self.class_to_id.get(c, 0) for c in classes]

    def knowledge_vectors(self, tokens: Sequence[str]) -> np.ndarray:
        return self.knowledge.matrix(tokens)


class MatchModel:
    """Conv encoders + two-way attention pooling + matching pyramid."""

    def __init__(self, config: MatchConfig, featurizer: MatchFeaturizer,
                 params: dict[str, np.ndarray]):
        self.config = config
        self.featurizer = featurizer
        self.params = params
        self.loss_history: list[float] = []

    @classmethod
    def create(cls, config: MatchConfig | None = None,
               featurizer: MatchFeaturizer | None = None) -> "MatchModel":
        config = config or MatchConfig()
        featurizer = featurizer or MatchFeaturizer(config)
        rng = np.random.default_rng(config.seed)
        c = config
        d_in = c.embed_dim + c.pos_dim
        ch1, ch2 = c.pyramid_channels
        pyr_flat = c.pyramid_grid * c.pyramid_grid * ch2
        params = {
            "match.word": glorot(rng, (featurizer.n_words, c.embed_dim)),
            "match.pos": glorot(rng, (featurizer.n_pos, c.pos_dim)),
            "match.cls": glorot(rng, (featurizer.n_classes, d_in)),
            "match.concept_kernel": glorot(rng, (3, d_in, c.hidden_dim),
                                           fan_in=3 * d_in),
            "match.item_kernel": glorot(rng, (3, d_in, c.hidden_dim),
                                        fan_in=3 * d_in),
            "match.W1": glorot(rng, (c.hidden_dim, c.attention_dim)),
            "match.W2": glorot(rng, (c.hidden_dim, c.attention_dim)),
            "match.v": glorot(rng, (c.attention_dim, 1)),
            "match.pyr_mlp_W": glorot(rng, (c.pyramid_slices * pyr_flat,
                                            c.pyramid_out)),
            "match.pyr_mlp_b": np.zeros((1, c.pyramid_out)),
            "match.final_W1": glorot(rng, (2 * c.hidden_dim + c.pyramid_out,
                                           c.final_hidden)),
            "match.final_b1": np.zeros((1, c.final_hidden)),
            "match.final_W2": glorot(rng, (c.final_hidden, 1)),
            "match.final_b2": np.zeros((1, 1)),
        }
        for k in range(c.pyramid_slices):
            # identity prior: slices start as plain dot-product similarity
            params[f"match.pyr_W.{k}"] = (np.eye(d_in)
                                          + 0.2 * glorot(rng, (d_in, d_in)))
            params[f"match.pyr_conv1.{k}"] = glorot(rng, (3, 3, 1, ch1),
                                                    fan_in=9, fan_out=ch1)
            params[f"match.pyr_conv2.{k}"] = glorot(rng, (3, 3, ch1, ch2),
                                                    fan_in=9 * ch1, fan_out=ch2)
        return cls(config, featurizer, params)

    # ----------------------------------------------------------- graph pieces

    def _embed_tokens(self, g: CompGraph, leaves, tokens: Sequence[str]) -> Tensor:
        f = self.featurizer
        words = g.matmul(g.constant(_one_hot(f.word_ids(tokens), f.n_words)),
                         leaves["match.word"])
        pos = g.matmul(g.constant(_one_hot(f.pos_ids(tokens), f.n_pos)),
                       leaves["match.pos"])
        return g.concat([words, pos], axis=1)

    def attention_pool(self, g: CompGraph, leaves, concept_seq: Tensor,
                       item_seq: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Two-way attention: att[i,j] = v . tanh(W1 w'_i + W2 t'_j); row and
        column sums are softmax-normalised into pooling weights."""
        m = concept_seq.shape[0]
        length = item_seq.shape[0]
        p = g.matmul(concept_seq, leaves["match.W1"])
        q = g.matmul(item_seq, leaves["match.W2"])
        att = g.pairwise_tanh_scores(p, q, leaves["match.v"])     # [m, l]
        row_sums = g.matmul(att, g.constant(np.ones((length, 1))))
        col_sums = g.matmul(g.transpose(att), g.constant(np.ones((m, 1))))
        alpha_w = g.softmax(row_sums, axis=0)
        alpha_t = g.softmax(col_sums, axis=0)
        pooled_c = g.matmul(g.transpose(alpha_w), concept_seq)    # [1, dh]
        pooled_i = g.matmul(g.transpose(alpha_t), item_seq)
        return pooled_c, pooled_i, att

    def pyramid_match(self, g: CompGraph, leaves, kw_seq: Tensor,
                      item_raw: Tensor) -> Tensor:
        """Per slice: match[i,j] = kw_i . W_k t_j, then two conv layers and
        adaptive max pooling onto a fixed grid, flattened through the MLP."""
        c = self.config
        grid = c.pyramid_grid
        ch1, ch2 = c.pyramid_channels
        slices = []
        for k in range(c.pyramid_slices):
            match = g.matmul(g.matmul(kw_seq, leaves[f"match.pyr_W.{k}"]),
                             g.transpose(item_raw))               # [S, l]
            img = g.reshape(match, (*match.shape, 1))
            h1 = g.relu(g.conv2d(img, leaves[f"match.pyr_conv1.{k}"]))
            h2 = g.relu(g.conv2d(h1, leaves[f"match.pyr_conv2.{k}"]))
            pooled = g.max_pool_grid(h2, grid, grid)
            slices.append(g.reshape(pooled, (1, grid * grid * ch2)))
        flat = g.concat(slices, axis=1)
        return g.tanh(g.add(g.matmul(flat, leaves["match.pyr_mlp_W"]),
                            leaves["match.pyr_mlp_b"]))

    def logit_on_graph(self, g: CompGraph, leaves, concept: ConceptSideInput,
                       item: ItemSideInput) -> Tensor:
        c = self.config
        f = self.featurizer
        concept_raw = self._embed_tokens(g, leaves, concept.tokens)
        item_raw = self._embed_tokens(g, leaves, item.tokens)
        concept_enc = g.tanh(g.conv1d(concept_raw,
                                      leaves["match.concept_kernel"], window=3))
        item_enc = g.tanh(g.conv1d(item_raw, leaves["match.item_kernel"],
                                   window=3))
        pooled_c, pooled_i, _ = self.attention_pool(g, leaves, concept_enc,
                                                    item_enc)
        kw_parts = [concept_raw]
        if c.use_knowledge:
            know = f.knowledge_vectors(concept.tokens)
            pad = np.zeros((know.shape[0], c.pos_dim))  # align with [word;pos]
            kw_parts.append(g.constant(np.concatenate([know, pad], axis=1)))
            if concept.linked_classes:
                cls = g.matmul(
                    g.constant(_one_hot(f.class_ids(concept.linked_classes),
                                        f.n_classes)), leaves["match.cls"])
                kw_parts.append(cls)
        kw_seq = g.concat(kw_parts, axis=0)                      # [2m+m', d_in]
        ci = self.pyramid_match(g, leaves, kw_seq, item_raw)
        joined = g.concat([pooled_c, pooled_i, ci], axis=1)
        hidden = g.tanh(g.add(g.matmul(joined, leaves["match.final_W1"]),
                              leaves["match.final_b1"]))
        return g.add(g.matmul(hidden, leaves["match.final_W2"]),
                     leaves["match.final_b2"])

    def score(self, concept: ConceptSideInput, item: ItemSideInput) -> float:
        g = CompGraph()
        leaves = g.bind(self.params)
        z = self.logit_on_graph(g, leaves, concept, item).item()
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else \
            math.exp(z) / (1.0 + math.exp(z))

    def checksum(self) -> str:
        blob = json.dumps(
            {k: [list(v.shape), [float(x) for x in v.reshape(-1)]]
             for k, v in sorted(self.params.items())},
            sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    # --------------------------------------------------------------- training

    def train(self, pairs: Sequence[tuple[ConceptSideInput, ItemSideInput, int]]
              ) -> list[float]:
        labels = {y for _, _, y in pairs}
        if labels != {0, 1}:
            raise MatchingError("training needs both positive and negative pairs")
        rng = np.random.default_rng(self.config.seed)
        for _ in range(self.config.epochs):
            order = rng.permutation(len(pairs))
            total = 0.0
            for idx in order:
                concept, item, y = pairs[idx]
                g = CompGraph()
                leaves = g.bind(self.params)
                z = self.logit_on_graph(g, leaves, concept, item)
                sign = g.constant(np.full((1, 1), 1.0 - 2.0 * y))
                loss = g.logsumexp(g.concat([g.constant(np.zeros((1, 1))),
                                             g.mul(z, sign)], axis=1))
                total += loss.item()
                grads = g.backward(loss)
                norm = math.sqrt(sum(float((gv * gv).sum())
                                     for gv in grads.values()))
                if norm > self.config.clip_norm:
                    grads = {k: v * (self.config.clip_norm / norm)
                             for k, v in grads.items()}
                self.params = sgd_step(self.params, grads, self.config.lr)
            self.loss_history.append(total / len(pairs))
        return self.loss_history

    def check_gradients(self, pairs, eps: float = 1e-4) -> float:
        def build(g, leaves):
            losses = []
            for concept, item, y in pairs:
                z = self.logit_on_graph(g, leaves, concept, item)
                sign = g.constant(np.full((1, 1), 1.0 - 2.0 * y))
                losses.append(g.logsumexp(g.concat(
                    [g.constant(np.zeros((1, 1))), g.mul(z, sign)], axis=1)))
            stack = g.concat([g.reshape(l, (1, 1)) for l in losses], axis=0)
            return g.mean_pool_over_time(stack)

        return grad_check(build, self.params, eps=eps)


# ------------------------------------------------------------------ evaluation


@dataclass(frozen=True)
class MatchMetrics:
    auc: float
    f1: float
    p_at_10: float


def auc_score(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Pairwise concordance AUC with half credit for ties (vectorised)."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MatchingError("AUC needs both classes")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (pos.size * neg.size))


def f1_at_threshold(labels: Sequence[int], scores: Sequence[float],
                    threshold: float = 0.5) -> float:
    tp = sum(1 for y, s in zip(labels, scores) if y == 1 and s >= threshold)
    fp = sum(1 for y, s in zip(labels, scores) if y == 0 and s >= threshold)
    fn = sum(1 for y, s in zip(labels, scores) if y == 1 and s < threshold)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def precision_at_10(by_concept: Mapping[str, Sequence[tuple[float, int]]]) -> float:
    """Mean over concepts of precision in the top min(10, n) scored items."""
    if not by_concept:
        raise MatchingError("no concepts to evaluate")
    values = []
    for scored in by_concept.values():
        ranked = sorted(scored, key=lambda t: (-t[0],))
        k = min(10, len(ranked))
        values.append(sum(y for _, y in ranked[:k]) / k)
    return float(np.mean(values))


def evaluate(model: MatchModel,
             test: Sequence[tuple[str, ConceptSideInput, ItemSideInput, int]]
             ) -> MatchMetrics:
    """test rows: (concept id, concept input, item input, label)."""
    if not test:
        raise MatchingError("empty test set")
    labels, scores = [], []
    by_concept: dict[str, list[tuple[float, int]]] = {}
    for concept_id, concept, item, y in test:
        s = model.score(concept, item)
        labels.append(y)
        scores.append(s)
        by_concept.setdefault(concept_id, []).append((s, y))
    return MatchMetrics(auc=auc_score(labels, scores),
                        f1=f1_at_threshold(labels, scores),
                        p_at_10=precision_at_10(by_concept))


# ------------------------------------------------------------------ association


def concept_input_from_store(store: ConceptNet, concept_id: str
                             ) -> ConceptSideInput:
    node = store.ecommerce[concept_id]
    linked = []
    for _, pid in node.links:
        primitive = store.primitives.get(pid)
        if primitive:
            linked.extend(sorted(primitive.classes))
    return ConceptSideInput(tokens=node.tokens, linked_classes=tuple(linked))


def associate(store: ConceptNet, model: MatchModel, threshold: float,
              batch: Sequence[tuple[str, str]],
              audit_path=None) -> list[Edge]:
    """Score concept-item pairs and write item_ecommerce edges (weight =
    score) for those at or above the threshold; re-runs update weights in
    place.  Optionally appends a JSONL audit record per scored pair."""
    if not 0.0 <= threshold <= 1.0:
        raise MatchingError(f"threshold {threshold} outside [0, 1]")
    checksum = model.checksum()
    written = []
    audit_fh = open(audit_path, "a", encoding="utf-8") if audit_path else None
    try:
        for concept_id, item_id in batch:
            concept = concept_input_from_store(store, concept_id)
            item_node = store.items[item_id]
            score = model.score(concept, ItemSideInput(tokens=item_node.tokens))
            if audit_fh:
                audit_fh.write(json.dumps(
                    {"concept": concept_id, "item": item_id,
                     "score": round(score, 6), "threshold": threshold,
                     "model": checksum}, sort_keys=True) + "\n")
            if score >= threshold:
                edge = Edge(src=item_id, dst=concept_id,
                            relation="item_ecommerce", weight=score)
                store.upsert_edge(edge)
                written.append(edge)
    finally:
        if audit_fh:
            audit_fh.close()
    return written
