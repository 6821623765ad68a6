"""Synthetic desk-scale benchmarks with known ground truth.

Production corpora and click logs are proprietary to large platforms, so
every trainable pipeline here ships with a generator that produces a small
corpus whose correct answers are known by construction.  All generators are
deterministic under their seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .providers import HashEmbeddings, OverlayEmbeddings, hash_vector
from .store import (
    ConceptNet,
    ECommerceConcept,
    Item,
    PrimitiveConcept,
    TaxonomyClass,
    domain_root_id,
)
from .tagger import LabeledSentence

FILLERS = ("for", "with", "the", "and", "a", "in")


@dataclass
class TaggingBenchmark:
    store: ConceptNet
    train: list[LabeledSentence]
    test: list[LabeledSentence]
    corpus: list[tuple[str, ...]]            # unlabeled sentences (train+test)
    ambiguous: list[tuple[str, ...]]         # sentences that must be discarded
    domains: tuple[str, ...]


def tagging_benchmark(n_vocab: int = 200, n_domains: int = 6,
                      n_sentences: int = 2000, seed: int = 0,
                      test_fraction: float = 0.2) -> TaggingBenchmark:
    """Vocabulary of single-domain primitives plus sentences built from them.

    Sentences concatenate 2-3 primitives with stopword fillers, so
    max-matching recovers the exact construction labels.  A separate batch
    of deliberately ambiguous sentences uses surfaces registered under two
    domains.
    """
    from .store import DOMAINS

    rng = random.Random(seed)
    domains = DOMAINS[:n_domains]
    store = ConceptNet()
    surfaces: list[tuple[tuple[str, ...], str]] = []
    for i in range(n_vocab):
        domain = domains[i % n_domains]
        if i % 5 == 4:  # one in five surfaces spans two tokens
            tokens = (f"w{i}a", f"w{i}b")
        else:
            tokens = (f"w{i}",)
        surface = " ".join(tokens)
        store.upsert_node(PrimitiveConcept(
            id=f"p:{i}", surface=surface,
            classes=frozenset({domain_root_id(domain)})))
        surfaces.append((tokens, domain))

    # ambiguous surfaces: same token registered under two domains
    ambiguous_surfaces = []
    for j in range(10):
        token = f"amb{j}"
        store.upsert_node(PrimitiveConcept(
            id=f"p:amb{j}a", surface=token,
            classes=frozenset({domain_root_id(domains[0])})))
        store.upsert_node(PrimitiveConcept(
            id=f"p:amb{j}b", surface=token,
            classes=frozenset({domain_root_id(domains[1])})))
        ambiguous_surfaces.append(token)

    sentences: list[LabeledSentence] = []
    for _ in range(n_sentences):
        tokens: list[str] = []
        labels: list[str] = []
        if rng.random() < 0.3:  # entities should not always sit at position 0
            tokens.append(rng.choice(FILLERS))
            labels.append("O")
        for k in range(rng.randint(2, 3)):
            if k > 0 and rng.random() < 0.5:
                tokens.append(rng.choice(FILLERS))
                labels.append("O")
            surf_tokens, domain = rng.choice(surfaces)
            tokens.extend(surf_tokens)
            labels.append(f"B-{domain}")
            labels.extend(f"I-{domain}" for _ in surf_tokens[1:])
        sentences.append(LabeledSentence(tuple(tokens), tuple(labels)))

    ambiguous = []
    for j, token in enumerate(ambiguous_surfaces):
        surf_tokens, _ = surfaces[j % len(surfaces)]
        ambiguous.append((token, *surf_tokens))

    n_test = int(len(sentences) * test_fraction)
    return TaggingBenchmark(
        store=store,
        train=sentences[n_test:],
        test=sentences[:n_test],
        corpus=[s.tokens for s in sentences],
        ambiguous=ambiguous,
        domains=domains,
    )


# --------------------------------------------------------------- hypernymy


@dataclass
class HypernymyBenchmark:
    """Linear-structure hypernymy: h ~ normalize(M p + noise)."""

    embeddings: dict[str, np.ndarray]
    positives: list[tuple[str, str]]
    vocabulary: list[str]                  # candidate hypernym space
    gold: dict[str, set[str]]              # hyponym -> true hypernyms
    queries: list[str]                     # hyponyms to rank in evaluation
    candidates: dict[str, list[str]]       # per-query candidate list
    near_misses: dict[str, list[str]] = field(default_factory=dict)


def hypernymy_benchmark(n_concepts: int = 300, n_hyponyms: int = 60,
                        dim: int = 16, noise: float = 0.08,
                        n_candidates: int = 60, seed: int = 0
                        ) -> HypernymyBenchmark:
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    embeddings: dict[str, np.ndarray] = {}
    vocabulary = [f"h{i}" for i in range(n_concepts)]
    for cid in vocabulary:
        vec = rng.normal(size=dim)
        embeddings[cid] = vec / np.linalg.norm(vec)
    positives = []
    gold: dict[str, set[str]] = {}
    near_misses: dict[str, list[str]] = {}
    queries = []
    for i in range(n_hyponyms):
        pid = f"p{i}"
        vec = rng.normal(size=dim)
        vec /= np.linalg.norm(vec)
        embeddings[pid] = vec
        target = mix @ vec
        # the true hypernyms are the two vocabulary items closest to M @ p
        sims = {cid: float(target @ embeddings[cid]) for cid in vocabulary}
        ranked = sorted(vocabulary, key=lambda c: (-sims[c], c))
        truths = ranked[:2]
        near_misses[pid] = ranked[2:8]
        for t in truths:
            jittered = embeddings[t] + noise * rng.normal(size=dim)
            embeddings[t] = jittered / np.linalg.norm(jittered)
        gold[pid] = set(truths)
        positives.extend((pid, t) for t in truths)
        queries.append(pid)
    candidates = {}
    for pid in queries:
        pool = [c for c in vocabulary if c not in gold[pid]]
        n_draw = min(n_candidates - len(gold[pid]), len(pool))
        picked = [pool[int(k)] for k in
                  rng.choice(len(pool), size=n_draw, replace=False)]
        cands = sorted(gold[pid]) + picked
        order = rng.permutation(len(cands))
        candidates[pid] = [cands[int(k)] for k in order]
    return HypernymyBenchmark(embeddings=embeddings, positives=positives,
                              vocabulary=vocabulary, gold=gold,
                              queries=queries, candidates=candidates,
                              near_misses=near_misses)


# ------------------------------------------------------ active-learning pool


@dataclass
class ActiveLearningBenchmark:
    """Labeled pair pool plus held-out ranking queries for the AL loop."""

    bench: HypernymyBenchmark
    pool_ids: list[str]
    truth: dict[str, int]
    test_queries: list[str]


def active_learning_benchmark(bench: HypernymyBenchmark | None = None,
                              test_every: int = 3, near_per_hyponym: int = 2,
                              easy_per_hyponym: int = 29,
                              seed: int = 0) -> ActiveLearningBenchmark:
    """Pool mixing gold pairs, a couple of near-miss negatives, and a large
    share of easy random negatives for the hyponyms not held out.

    Positives are deliberately rare (a few percent): uniform labeling then
    spends most of its budget on easy negatives, while score-guided
    selection harvests the informative region much sooner.
    """
    from .hypernym import pair_id

    if bench is None:
        bench = hypernymy_benchmark(n_concepts=300, n_hyponyms=120, dim=8,
                                    noise=0.10, seed=seed)
    rng = np.random.default_rng(seed)
    test_queries = [q for i, q in enumerate(bench.queries) if i % test_every == 0]
    train_queries = [q for i, q in enumerate(bench.queries) if i % test_every != 0]
    truth: dict[str, int] = {}
    pool_ids: list[str] = []
    for q in train_queries:
        for h in sorted(bench.gold[q]):
            sid = pair_id(q, h)
            truth[sid] = 1
            pool_ids.append(sid)
        near = bench.near_misses[q][:near_per_hyponym]
        exclude = bench.gold[q] | set(near)
        easy = [c for c in bench.vocabulary if c not in exclude]
        picked = [easy[int(k)] for k in
                  rng.choice(len(easy), size=easy_per_hyponym, replace=False)]
        for h in [*near, *picked]:
            sid = pair_id(q, h)
            truth[sid] = 0
            pool_ids.append(sid)
    return ActiveLearningBenchmark(bench=bench, pool_ids=pool_ids, truth=truth,
                                   test_queries=test_queries)


def projection_trainer_config(dim: int = 8) -> dict:
    """Model settings used by the AL benchmark experiments."""
    return {"dim": dim, "slices": 2, "epochs": 40, "seed": 0, "lr": 0.5}


# ------------------------------------------------------------ concept-item pairs


@dataclass
class MatchingBenchmark:
    store: ConceptNet
    vocabulary: list[str]                    # training-side token vocabulary
    class_ids: list[str]
    knowledge: OverlayEmbeddings
    train: list[tuple]                       # (ConceptSideInput, ItemSideInput, y)
    test: list[tuple]                        # (concept id, c, i, y)
    drift_test: list[tuple]                  # drift-only subset of test
    fixture: dict                            # associate() drift fixture ids


def matching_benchmark(n_topics: int = 5, n_drift: int = 4, dim: int = 10,
                       seed: int = 0) -> MatchingBenchmark:
    """Concept-item pairs with two relatedness mechanisms.

    Normal topics share tokens between concepts and item titles, so lexical
    overlap carries the signal.  Drift topics have disjoint concept/title
    vocabularies: only the gloss provider (whose vectors cluster concept
    tokens by topic) can bridge them, and the drift test pairs use concept
    tokens held out of training so word embeddings alone cannot memorise
    the bridge."""
    from .matching import ConceptSideInput, ItemSideInput

    rng = random.Random(seed)
    store = ConceptNet()
    store.upsert_node(TaxonomyClass(id="class:Category/General", name="General",
                                    domain="Category",
                                    parent=domain_root_id("Category")))

    filler = [f"fill{i}" for i in range(12)]
    train: list[tuple] = []
    test: list[tuple] = []
    drift_test: list[tuple] = []
    train_tokens: set[str] = set(filler)

    def item_of(topic_tokens, n=4):
        toks = rng.sample(topic_tokens, min(n, len(topic_tokens)))
        toks += rng.sample(filler, 2)
        rng.shuffle(toks)
        return ItemSideInput(tokens=tuple(toks))

    # ---------------------------------------------------------- normal topics
    topics = []
    for t in range(n_topics):
        shared = ([f"nt{t}w{j}" for j in range(8)]
                  if t > 0 else ["outdoor", "tent", "lantern", "campfire",
                                 "hiking", "trail", "boots", "poles"])
        items = [item_of(shared) for _ in range(6)]
        concepts = [ConceptSideInput(tokens=tuple(rng.sample(shared, 2)))
                    for _ in range(6)]
        if t == 0:
            concepts[0] = ConceptSideInput(tokens=("outdoor",))
        topics.append((shared, concepts, items))
        for toks in shared:
            train_tokens.add(toks)

    # ----------------------------------------------------------- drift topics
    centroids = [hash_vector(f"drift-{d}", dim, salt="drift-centroid", scale=1.6)
                 for d in range(n_drift)]
    drift_concept_tokens = []
    drift_items = []
    overlay: dict[str, np.ndarray] = {}
    for d in range(n_drift):
        c_tokens = ([f"dc{d}w{j}" for j in range(6)]
                    if d > 0 else ["barbecue", "grilling", "cookout", "roast",
                                   "picnic", "feast"])
        i_tokens = ([f"di{d}w{j}" for j in range(5)]
                    if d > 0 else ["charcoal", "skewers", "grill", "coals",
                                   "firelighter"])
        for tok in c_tokens:
            jitter = hash_vector(tok, dim, salt="drift-jitter", scale=0.3)
            overlay[tok] = centroids[d] + jitter
        drift_concept_tokens.append(c_tokens)
        drift_items.append([item_of(i_tokens) for _ in range(5)])
        for tok in i_tokens:
            train_tokens.add(tok)

    knowledge = OverlayEmbeddings(HashEmbeddings(dim, salt="match-gloss"),
                                  overlay)

    # ------------------------------------------------------------- pair tables
    all_items = [item for _, _, items in topics for item in items]
    all_items += [item for items in drift_items for item in items]

    def negatives_for(own_items, count):
        pool = [it for it in all_items if it not in own_items]
        return rng.sample(pool, count)

    for t, (shared, concepts, items) in enumerate(topics):
        for ci, concept in enumerate(concepts):
            pos = rng.sample(items, 3)
            neg = negatives_for(items, 3)
            cid = f"nt{t}c{ci}"
            for item in pos:
                train_tokens.update(concept.tokens)
                train.append((concept, item, 1))
            for item in neg:
                train.append((concept, item, 0))
            test_pos = [it for it in items if it not in pos][:3]
            test_neg = negatives_for(items, 22)
            for item in test_pos:
                test.append((cid, concept, item, 1))
            for item in test_neg:
                test.append((cid, concept, item, 0))

    for d in range(n_drift):
        c_tokens = drift_concept_tokens[d]
        items = drift_items[d]
        # concepts over the first three tokens are seen in training...
        for pair in ((0, 1), (1, 2), (0, 2), (2, 0), (1, 0)):
            concept = ConceptSideInput(tokens=(c_tokens[pair[0]],
                                               c_tokens[pair[1]]))
            train_tokens.update(concept.tokens)
            for item in rng.sample(items, 4):
                train.append((concept, item, 1))
            for item in negatives_for(items, 4):
                train.append((concept, item, 0))
        # ...test concepts use the held-out tokens, unseen as words, so the
        # gloss vectors are the only bridge to the topic's items
        for k, pair in enumerate(((3, 4), (4, 5), (3, 5))):
            concept = ConceptSideInput(tokens=(c_tokens[pair[0]],
                                               c_tokens[pair[1]]))
            cid = f"drift{d}c{k}"
            rows = []
            for item in rng.sample(items, 3):
                rows.append((cid, concept, item, 1))
            for item in negatives_for(items, 22):
                rows.append((cid, concept, item, 0))
            test.extend(rows)
            drift_test.extend(rows)

    # --------------------------------------------------- associate fixture
    outdoor_shared, _, outdoor_items = topics[0]
    store.upsert_node(PrimitiveConcept(
        id="p:outdoor", surface="outdoor",
        classes=frozenset({domain_root_id("Location")})))
    store.upsert_node(PrimitiveConcept(
        id="p:barbecue", surface="barbecue",
        classes=frozenset({domain_root_id("Event")})))
    store.upsert_node(ECommerceConcept(
        id="ec:outdoor barbecue", phrase="outdoor barbecue",
        tokens=("outdoor", "barbecue"), status="validated",
        links=(((0, 1), "p:outdoor"), ((1, 2), "p:barbecue"))))
    store.upsert_node(ECommerceConcept(
        id="ec:outdoor", phrase="outdoor", tokens=("outdoor",),
        status="validated", links=(((0, 1), "p:outdoor"),)))
    charcoal_item = drift_items[0][0]
    store.upsert_node(Item(id="item:charcoal", title=" ".join(charcoal_item.tokens),
                           tokens=charcoal_item.tokens,
                           category="class:Category/General"))
    tent_item = outdoor_items[0]
    store.upsert_node(Item(id="item:tent", title=" ".join(tent_item.tokens),
                           tokens=tent_item.tokens,
                           category="class:Category/General"))
    # the compound concept trains against barbecue-need items, the single
    # primitive concept against lexical-overlap outdoor gear
    compound = ConceptSideInput(tokens=("outdoor", "barbecue"),
                                linked_classes=(domain_root_id("Location"),
                                                domain_root_id("Event")))
    single = ConceptSideInput(tokens=("outdoor",),
                              linked_classes=(domain_root_id("Location"),))
    for item in drift_items[0][1:4]:
        train.append((compound, item, 1))
    for item in negatives_for(drift_items[0], 3):
        train.append((compound, item, 0))
    for item in outdoor_items[1:4]:
        train.append((single, item, 1))
    for item in [*rng.sample(drift_items[0], 2),
                 *negatives_for(outdoor_items + drift_items[0], 2)]:
        train.append((single, item, 0))

    rng.shuffle(train)
    class_ids = sorted(store.classes)
    return MatchingBenchmark(
        store=store, vocabulary=sorted(train_tokens), class_ids=class_ids,
        knowledge=knowledge, train=train, test=test, drift_test=drift_test,
        fixture={"compound": "ec:outdoor barbecue", "single": "ec:outdoor",
                 "charcoal": "item:charcoal", "tent": "item:tent"})


# ----------------------------------------------------------- concept candidates


@dataclass
class GenerationBenchmark:
    store: ConceptNet
    patterns: list
    incompatible: set[frozenset[str]]       # surfaces that must not combine
    corpus: list[tuple[str, ...]]
    train: list[tuple]                      # (CandidateConcept, label)
    test: list[tuple]
    knowledge: OverlayEmbeddings | None = None   # gloss provider stand-in


def generation_benchmark(n_per_domain: int = 12, seed: int = 0,
                         n_positive: int = 180,
                         n_per_negative_kind: int = 60) -> GenerationBenchmark:
    """Good candidates are compatible pattern fills; bad ones violate the
    incompatibility table, shuffle a good phrase out of coherence, or are
    token salad.  The corpus contains every good phrase (labels stay scarce,
    text does not), so the language model sees coherent orderings."""
    from .generation import CandidateConcept, GenerationPattern, Slot

    rng = random.Random(seed)
    store = ConceptNet()
    surfaces = {"Function": [], "Category": [], "Event": [], "Audience": []}
    group: dict[str, int] = {}
    for domain, prefix in (("Function", "fn"), ("Category", "cat"),
                           ("Event", "ev"), ("Audience", "aud")):
        for i in range(n_per_domain):
            surface = f"{prefix}{i}"
            store.upsert_node(PrimitiveConcept(
                id=f"p:{surface}", surface=surface,
                classes=frozenset({domain_root_id(domain)})))
            surfaces[domain].append(surface)
            group[surface] = i % 3

    patterns = [
        GenerationPattern(id="fn-cat-for-ev", slots=(
            Slot("class", domain_root_id("Function")),
            Slot("class", domain_root_id("Category")),
            Slot("literal", "for"),
            Slot("class", domain_root_id("Event")))),
        GenerationPattern(id="fn-cat-for-aud", slots=(
            Slot("class", domain_root_id("Function")),
            Slot("class", domain_root_id("Category")),
            Slot("literal", "for"),
            Slot("class", domain_root_id("Audience")))),
    ]

    # functions only make sense with same-group events/audiences ("warm"
    # goes with winter-group tails, not swimming-group ones)
    incompatible: set[frozenset[str]] = set()
    for fn in surfaces["Function"]:
        for tail in (*surfaces["Event"], *surfaces["Audience"]):
            if group[fn] != group[tail]:
                incompatible.add(frozenset((fn, tail)))

    def make_candidate(fn, cat, tail, pattern_id):
        tokens = (fn, cat, "for", tail)
        return CandidateConcept(
            phrase=" ".join(tokens), tokens=tokens,
            source=f"generated:{pattern_id}",
            links=(((0, 1), f"p:{fn}"), ((1, 2), f"p:{cat}"),
                   ((3, 4), f"p:{tail}")))

    positives, implausible, meaningless = [], [], []
    combos = [(fn, cat, tail, pid)
              for fn in surfaces["Function"]
              for cat in surfaces["Category"]
              for tail, pid in [(t, "fn-cat-for-ev") for t in surfaces["Event"]]
              + [(t, "fn-cat-for-aud") for t in surfaces["Audience"]]]
    rng.shuffle(combos)
    for fn, cat, tail, pid in combos:
        if frozenset((fn, tail)) in incompatible:
            bucket, cap = implausible, n_per_negative_kind
        elif len(positives) < n_positive:
            bucket, cap = positives, n_positive
        else:
            # well-formed and plausible, but never used: no shopping need
            # behind it, so it stays absent from the corpus
            bucket, cap = meaningless, n_per_negative_kind
        if len(bucket) >= cap:
            continue
        bucket.append(make_candidate(fn, cat, tail, pid))
        if (len(positives) >= n_positive
                and len(implausible) >= n_per_negative_kind
                and len(meaningless) >= n_per_negative_kind):
            break

    shuffles = []
    for cand in positives[:n_per_negative_kind]:
        tokens = list(cand.tokens)
        while True:
            rng.shuffle(tokens)
            if tuple(tokens) != cand.tokens and tokens[2] != "for":
                break
        shuffles.append(CandidateConcept(phrase=" ".join(tokens),
                                         tokens=tuple(tokens), source="mined"))

    def make_salads(junk_vocab, count):
        out = []
        for _ in range(count):
            tokens = tuple(rng.sample(junk_vocab, 3))
            out.append(CandidateConcept(phrase=" ".join(tokens), tokens=tokens,
                                        source="mined"))
        return out

    # test-salad vocabulary is disjoint from training, so only the corpus
    # statistics (popularity, perplexity) can expose them
    salads_train = make_salads([f"junk{i}" for i in range(30)],
                               n_per_negative_kind * 3 // 4)
    salads_test = make_salads([f"junk{i}" for i in range(30, 60)],
                              n_per_negative_kind // 4)

    corpus: list[tuple[str, ...]] = []
    for cand in positives:
        for _ in range(rng.randint(2, 4)):
            corpus.append(cand.tokens)
    for _ in range(120):
        corpus.append(tuple(rng.sample(
            surfaces["Function"] + surfaces["Category"], 3)))
    rng.shuffle(corpus)

    # gloss provider stand-in: fn/ev/aud vectors cluster by latent group
    centroids = [hash_vector(f"group-{g}", 12, salt="gloss-centroid", scale=1.5)
                 for g in range(3)]
    overlay = {}
    for surface, g in group.items():
        if surface.startswith("cat"):
            continue
        jitter = hash_vector(surface, 12, salt="gloss-jitter", scale=0.35)
        overlay[surface] = centroids[g] + jitter
    knowledge = OverlayEmbeddings(HashEmbeddings(12, salt="gloss"), overlay)

    def split(items, frac_test=0.25):
        shuffled = list(items)
        rng.shuffle(shuffled)
        n_test = max(1, int(len(shuffled) * frac_test))
        return shuffled[n_test:], shuffled[:n_test]

    pos_train, pos_test = split(positives)
    imp_train, imp_test = split(implausible)
    shf_train, shf_test = split(shuffles)
    mng_train, mng_test = split(meaningless)
    train = [(c, 1) for c in pos_train]
    train += [(c, 0) for c in imp_train + shf_train + salads_train + mng_train]
    test = [(c, 1) for c in pos_test]
    test += [(c, 0) for c in imp_test + shf_test + salads_test + mng_test]
    rng.shuffle(train)
    rng.shuffle(test)
    return GenerationBenchmark(store=store, patterns=patterns,
                               incompatible=incompatible, corpus=corpus,
                               train=train, test=test, knowledge=knowledge)
