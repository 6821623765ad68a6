import math

import numpy as np
import pytest

from conet.matching import (
    ConceptSideInput,
    ItemSideInput,
    MatchConfig,
    MatchFeaturizer,
    MatchModel,
    MatchingError,
    associate,
    auc_score,
    concept_input_from_store,
    evaluate,
    f1_at_threshold,
    precision_at_10,
)
from conet.synthetic import matching_benchmark
from conet.tensor import CompGraph

from oracles import auc_oracle


def small_model(use_knowledge=True, seed=0):
    cfg = MatchConfig(embed_dim=6, pos_dim=2, hidden_dim=6, attention_dim=5,
                      pyramid_slices=1, pyramid_channels=(3, 2), pyramid_grid=2,
                      pyramid_out=4, final_hidden=5, seed=seed,
                      use_knowledge=use_knowledge)
    feat = MatchFeaturizer(cfg, vocabulary=["red", "dress", "shoes", "warm"])
    return MatchModel.create(cfg, feat)


class TestAttentionPool:
    def test_singleton_sequences(self):
        model = small_model()
        g = CompGraph()
        leaves = g.bind(model.params)
        w = g.constant(np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]))
        t = g.constant(np.array([[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]]))
        pooled_c, pooled_i, att = model.attention_pool(g, leaves, w, t)
        assert np.allclose(pooled_c.data, w.data)
        assert np.allclose(pooled_i.data, t.data)
        assert att.shape == (1, 1)

    def test_zero_v_gives_uniform_weights(self):
        model = small_model()
        model.params["match.v"] = np.zeros_like(model.params["match.v"])
        g = CompGraph()
        leaves = g.bind(model.params)
        rng = np.random.default_rng(0)
        w = g.constant(rng.normal(size=(3, 6)))
        t = g.constant(rng.normal(size=(4, 6)))
        pooled_c, pooled_i, _ = model.attention_pool(g, leaves, w, t)
        assert np.allclose(pooled_c.data, w.data.mean(axis=0))
        assert np.allclose(pooled_i.data, t.data.mean(axis=0))

    def test_random_vs_direct_formula(self):
        model = small_model(seed=3)
        g = CompGraph()
        leaves = g.bind(model.params)
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 6))
        t = rng.normal(size=(5, 6))
        pooled_c, pooled_i, att = model.attention_pool(
            g, leaves, g.constant(w), g.constant(t))
        w1 = model.params["match.W1"]
        w2 = model.params["match.W2"]
        v = model.params["match.v"][:, 0]
        att_want = np.array([[v @ np.tanh(w[i] @ w1 + t[j] @ w2)
                              for j in range(5)] for i in range(3)])
        assert np.max(np.abs(att.data - att_want)) <= 1e-10
        rows = att_want.sum(axis=1)
        alpha_w = np.exp(rows - rows.max())
        alpha_w /= alpha_w.sum()
        assert np.max(np.abs(pooled_c.data[0] - alpha_w @ w)) <= 1e-10
        assert abs(alpha_w.sum() - 1.0) <= 1e-10

    def test_weights_sum_to_one(self):
        model = small_model(seed=4)
        g = CompGraph()
        leaves = g.bind(model.params)
        rng = np.random.default_rng(2)
        w = g.constant(rng.normal(size=(4, 6)))
        t = g.constant(rng.normal(size=(2, 6)))
        _, _, att = model.attention_pool(g, leaves, w, t)
        rows = g.matmul(att, g.constant(np.ones((2, 1))))
        alpha = g.softmax(rows, axis=0)
        assert abs(float(alpha.data.sum()) - 1.0) <= 1e-10
        assert np.all(alpha.data >= 0)


class TestPyramid:
    def test_zero_slice_gives_constant_matrices(self):
        model = small_model()
        model.params["match.pyr_W.0"] = np.zeros((8, 8))
        g = CompGraph()
        leaves = g.bind(model.params)
        rng = np.random.default_rng(0)
        kw = g.constant(rng.normal(size=(4, 8)))
        t = g.constant(rng.normal(size=(3, 8)))
        match = g.matmul(g.matmul(kw, leaves["match.pyr_W.0"]), g.transpose(t))
        assert np.allclose(match.data, 0.0)

    def test_identity_slice_on_identical_unit_vectors(self):
        model = small_model()
        model.params["match.pyr_W.0"] = np.eye(8)
        g = CompGraph()
        leaves = g.bind(model.params)
        e = np.zeros((1, 8))
        e[0, 2] = 1.0
        kw, t = g.constant(e), g.constant(e)
        match = g.matmul(g.matmul(kw, leaves["match.pyr_W.0"]), g.transpose(t))
        assert match.data[0, 0] == 1.0

    def test_match_matrices_vs_loop_oracle(self):
        model = small_model(seed=5)
        g = CompGraph()
        leaves = g.bind(model.params)
        rng = np.random.default_rng(3)
        kw = rng.normal(size=(5, 8))
        t = rng.normal(size=(4, 8))
        w_k = model.params["match.pyr_W.0"]
        match = g.matmul(g.matmul(g.constant(kw), leaves["match.pyr_W.0"]),
                         g.transpose(g.constant(t)))
        want = np.array([[kw[i] @ w_k @ t[j] for j in range(4)]
                         for i in range(5)])
        assert np.max(np.abs(match.data - want)) <= 1e-10


class TestScore:
    def test_zero_final_layer_gives_half(self):
        model = small_model()
        model.params["match.final_W2"] = np.zeros_like(
            model.params["match.final_W2"])
        model.params["match.final_b2"] = np.zeros((1, 1))
        score = model.score(ConceptSideInput(tokens=("red", "dress")),
                            ItemSideInput(tokens=("warm", "red", "dress")))
        assert score == 0.5

    def test_deterministic(self):
        model = small_model(seed=7)
        concept = ConceptSideInput(tokens=("red",))
        item = ItemSideInput(tokens=("red", "shoes"))
        assert model.score(concept, item) == model.score(concept, item)

    def test_empty_inputs_rejected(self):
        with pytest.raises(MatchingError):
            ConceptSideInput(tokens=())
        with pytest.raises(MatchingError):
            ItemSideInput(tokens=())


class TestMetrics:
    def test_perfect_and_constant_auc(self):
        assert auc_score([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
        assert auc_score([1, 0, 1, 0], [0.5, 0.5, 0.5, 0.5]) == 0.5

    def test_auc_matches_concordance_oracle(self):
        rng = np.random.default_rng(4)
        labels = [int(x) for x in rng.integers(0, 2, size=60)]
        if sum(labels) in (0, 60):
            labels[0] = 1 - labels[0]
        scores = [round(float(s), 2) for s in rng.uniform(size=60)]  # force ties
        assert auc_score(labels, scores) == auc_oracle(labels, scores)

    def test_f1_threshold(self):
        assert f1_at_threshold([1, 0], [0.9, 0.1]) == 1.0
        assert f1_at_threshold([1, 1], [0.1, 0.2]) == 0.0

    def test_precision_at_10(self):
        by_concept = {"c": [(0.9, 1), (0.8, 0), (0.7, 1)] + [(0.1, 0)] * 20}
        # top 10 holds both positives
        assert precision_at_10(by_concept) == 2 / 10


class TestTraining:
    def test_single_class_rejected(self):
        model = small_model()
        pairs = [(ConceptSideInput(tokens=("red",)),
                  ItemSideInput(tokens=("red",)), 1)]
        with pytest.raises(MatchingError):
            model.train(pairs)

    def test_zero_epochs_keeps_params(self):
        model = small_model()
        model.config.epochs = 0
        before = {k: v.copy() for k, v in model.params.items()}
        pairs = [(ConceptSideInput(tokens=("red",)),
                  ItemSideInput(tokens=("red",)), 1),
                 (ConceptSideInput(tokens=("red",)),
                  ItemSideInput(tokens=("shoes",)), 0)]
        model.train(pairs)
        assert all(np.array_equal(before[k], model.params[k]) for k in before)

    def test_gradients(self):
        model = small_model(seed=1)
        pairs = [(ConceptSideInput(tokens=("red", "dress"),
                                   linked_classes=("class:Color",)),
                  ItemSideInput(tokens=("warm", "red")), 1),
                 (ConceptSideInput(tokens=("shoes",)),
                  ItemSideInput(tokens=("red", "dress", "warm")), 0)]
        assert model.check_gradients(pairs) <= 1e-3

    def test_deterministic_under_seed(self):
        pairs = [(ConceptSideInput(tokens=("red", "dress")),
                  ItemSideInput(tokens=("red", "dress", "warm")), 1),
                 (ConceptSideInput(tokens=("shoes",)),
                  ItemSideInput(tokens=("red", "dress")), 0)] * 3
        runs = []
        for _ in range(2):
            model = small_model(seed=2)
            model.config.epochs = 2
            model.train(pairs)
            runs.append(model.checksum())
        assert runs[0] == runs[1]


@pytest.fixture(scope="module")
def trained_benchmark():
    bench = matching_benchmark(seed=0)
    cfg = MatchConfig(seed=0, use_knowledge=True, epochs=12, lr=0.25)
    feat = MatchFeaturizer(cfg, vocabulary=bench.vocabulary,
                           class_ids=bench.class_ids, knowledge=bench.knowledge)
    model = MatchModel.create(cfg, feat)
    model.train(bench.train)
    return bench, model


class TestBenchmark:
    def test_separates_pairs(self, trained_benchmark):
        bench, model = trained_benchmark
        metrics = evaluate(model, bench.test)
        assert metrics.auc >= 0.85

    def test_in_sample_f1(self, trained_benchmark):
        bench, model = trained_benchmark
        labels = [y for _, _, y in bench.train]
        scores = [model.score(c, i) for c, i, _ in bench.train]
        assert f1_at_threshold(labels, scores) >= 0.85

    def test_drift_fixture_association(self, trained_benchmark, tmp_path):
        bench, model = trained_benchmark
        store = bench.store
        fixture = bench.fixture
        audit = tmp_path / "audit.jsonl"
        batch = [(fixture["compound"], fixture["charcoal"]),
                 (fixture["compound"], fixture["tent"]),
                 (fixture["single"], fixture["charcoal"]),
                 (fixture["single"], fixture["tent"])]
        written = associate(store, model, threshold=0.5, batch=batch,
                            audit_path=audit)
        written_pairs = {(e.dst, e.src) for e in written}
        assert (fixture["compound"], fixture["charcoal"]) in written_pairs
        assert (fixture["single"], fixture["charcoal"]) not in written_pairs
        assert len(audit.read_text().splitlines()) == 4

    def test_associate_idempotent(self, trained_benchmark):
        bench, model = trained_benchmark
        store = bench.store
        fixture = bench.fixture
        batch = [(fixture["compound"], fixture["charcoal"])]
        associate(store, model, threshold=0.5, batch=batch)
        before = len(store.edges)
        edges = associate(store, model, threshold=0.5, batch=batch)
        assert len(store.edges) == before
        for edge in edges:
            assert store.edges[edge.key()].weight == edge.weight

    def test_threshold_one_writes_nothing_for_untrained(self):
        bench = matching_benchmark(seed=0)
        cfg = MatchConfig(seed=0, use_knowledge=True)
        feat = MatchFeaturizer(cfg, vocabulary=bench.vocabulary,
                               class_ids=bench.class_ids,
                               knowledge=bench.knowledge)
        model = MatchModel.create(cfg, feat)
        fixture = bench.fixture
        written = associate(bench.store, model, threshold=1.0,
                            batch=[(fixture["compound"], fixture["charcoal"])])
        assert written == []
