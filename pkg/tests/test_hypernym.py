import math

import numpy as np
import pytest

from conet.hypernym import (
    HearstPattern,
    PatternError,
    ProjectionConfig,
    ProjectionModel,
    RankedHypernyms,
    UnknownConceptError,
    evaluate_rankings,
    fold_surface,
    head_rule_extract,
    hearst_extract,
    negative_sample,
)
from conet.synthetic import hypernymy_benchmark

from oracles import average_precision_oracle


class TestHearst:
    PATTERN = [HearstPattern.parse("Y such as X")]
    SURFACES = {"top", "jacket", "dress", "summer dress"}

    def test_slot_validation(self):
        with pytest.raises(PatternError):
            HearstPattern.parse("X such as X")

    def test_basic_extraction_with_plural_folding(self):
        pairs = hearst_extract([["tops", "such", "as", "jackets"]],
                               self.PATTERN, self.SURFACES)
        assert pairs == [("jacket", "top", 1)]

    def test_no_occurrence(self):
        assert hearst_extract([["jackets", "are", "nice"]],
                              self.PATTERN, self.SURFACES) == []

    def test_repeated_sentence_counts_support(self):
        corpus = [["tops", "such", "as", "jackets"]] * 2
        assert hearst_extract(corpus, self.PATTERN, self.SURFACES) == [
            ("jacket", "top", 2)]

    def test_multi_token_filler(self):
        corpus = [["i", "like", "dresses", "such", "as", "summer", "dress"]]
        pairs = hearst_extract(corpus, self.PATTERN, self.SURFACES)
        assert ("summer dress", "dress", 1) in pairs

    def test_unknown_filler_ignored(self):
        assert hearst_extract([["cars", "such", "as", "jackets"]],
                              self.PATTERN, self.SURFACES) == [
            ("jacket", "jacket", 1)] or hearst_extract(
            [["cars", "such", "as", "jackets"]], self.PATTERN,
            self.SURFACES) == []

    def test_corpus_permutation_invariant(self):
        corpus = [["tops", "such", "as", "jackets"],
                  ["dresses", "such", "as", "tops"],
                  ["tops", "such", "as", "jackets"]]
        a = hearst_extract(corpus, self.PATTERN, self.SURFACES)
        b = hearst_extract(list(reversed(corpus)), self.PATTERN, self.SURFACES)
        assert a == b

    def test_fold_surface(self):
        assert fold_surface(["jackets"], self.SURFACES) == "jacket"
        assert fold_surface(["summer", "dresses"], self.SURFACES) == "summer dress"
        assert fold_surface(["quantum"], self.SURFACES) is None


class TestHeadRule:
    def test_paper_style_pair(self):
        assert head_rule_extract({"cargo pants", "pants"}) == [
            ("cargo pants", "pants")]

    def test_single_token_ignored(self):
        assert head_rule_extract({"pants"}) == []

    def test_head_not_in_vocabulary(self):
        assert head_rule_extract({"cargo pants"}) == []


class TestScorePair:
    def make_model(self, dim=4, slices=1):
        config = ProjectionConfig(dim=dim, slices=slices, seed=0)
        embeddings = {"p": np.zeros(dim), "h": np.zeros(dim)}
        model = ProjectionModel.create(embeddings, config)
        return model

    def test_all_zero_gives_half(self):
        model = self.make_model()
        model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
        assert model.score_pair("p", "h") == 0.5

    def test_identity_slice_closed_form(self):
        config = ProjectionConfig(dim=3, slices=1, seed=0)
        e = np.array([1.0, 0.0, 0.0])
        model = ProjectionModel.create({"p": e, "h": e}, config)
        model.params["proj.T.0"] = np.eye(3)
        model.params["proj.W"] = np.array([[1.0]])
        model.params["proj.b"] = np.array([[0.0]])
        assert abs(model.score_pair("p", "h") - 1.0 / (1.0 + math.exp(-1.0))) <= 1e-12

    def test_random_vs_direct_recomputation(self):
        rng = np.random.default_rng(0)
        config = ProjectionConfig(dim=5, slices=3, seed=1)
        embeddings = {"p": rng.normal(size=5), "h": rng.normal(size=5)}
        model = ProjectionModel.create(embeddings, config)
        p, h = embeddings["p"], embeddings["h"]
        s = np.array([p @ model.params[f"proj.T.{k}"] @ h for k in range(3)])
        z = float(model.params["proj.W"][0] @ s + model.params["proj.b"][0, 0])
        want = 1.0 / (1.0 + math.exp(-z))
        assert abs(model.score_pair("p", "h") - want) <= 1e-12

    def test_unknown_concept(self):
        model = self.make_model()
        with pytest.raises(UnknownConceptError):
            model.score_pair("p", "nope")


class TestNegativeSample:
    POSITIVES = [("a", "x"), ("b", "y")]
    VOCAB = [f"v{i}" for i in range(150)] + ["x", "y"]

    def test_counts_and_no_collisions(self):
        negs = negative_sample(self.POSITIVES, 1, self.VOCAB, seed=0)
        assert len(negs) == 2
        assert not (set(negs) & set(self.POSITIVES))

    def test_deterministic_under_seed(self):
        a = negative_sample(self.POSITIVES, 3, self.VOCAB, seed=7)
        b = negative_sample(self.POSITIVES, 3, self.VOCAB, seed=7)
        assert a == b

    def test_ratio_100_supported_with_large_vocabulary(self):
        negs = negative_sample(self.POSITIVES, 100, self.VOCAB, seed=1)
        assert len(negs) == 200
        per = {}
        for p, h in negs:
            per.setdefault(p, set()).add(h)
        assert all(len(v) == 100 for v in per.values())

    def test_vocabulary_too_small(self):
        with pytest.raises(ValueError):
            negative_sample(self.POSITIVES, 5, ["x", "y", "z"], seed=0)


class TestEvaluateRankings:
    def make(self, hyponym, order):
        return RankedHypernyms(hyponym=hyponym,
                               ranked=tuple((c, 1.0 - 0.1 * i)
                                            for i, c in enumerate(order)))

    def test_gold_always_first(self):
        rankings = [self.make("q1", ["g", "a"]), self.make("q2", ["h", "b"])]
        metrics = evaluate_rankings(rankings, {"q1": {"g"}, "q2": {"h"}})
        assert metrics.map == metrics.mrr == metrics.p_at_1 == 1.0

    def test_gold_at_rank_2(self):
        metrics = evaluate_rankings([self.make("q", ["a", "g"])], {"q": {"g"}})
        assert metrics.mrr == 0.5
        assert metrics.p_at_1 == 0.0

    def test_map_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        gold = {}
        rankings = []
        ap_want = []
        for qi in range(5):
            cands = [f"c{qi}.{j}" for j in range(8)]
            relevant = set(rng.choice(cands, size=3, replace=False).tolist())
            order = list(rng.permutation(cands))
            gold[f"q{qi}"] = relevant
            rankings.append(self.make(f"q{qi}", order))
            ap_want.append(average_precision_oracle(order, relevant))
        metrics = evaluate_rankings(rankings, gold)
        assert abs(metrics.map - np.mean(ap_want)) <= 1e-12
        assert metrics.mrr >= metrics.p_at_1 >= 0.0

    def test_empty_gold_rejected(self):
        with pytest.raises(ValueError):
            evaluate_rankings([self.make("q", ["a"])], {"q": set()})


class TestRank:
    def test_single_candidate(self):
        rng = np.random.default_rng(1)
        embeddings = {k: rng.normal(size=4) for k in ("p", "c")}
        model = ProjectionModel.create(embeddings, ProjectionConfig(dim=4, slices=2))
        ranking = model.rank("p", ["c"])
        assert len(ranking.ranked) == 1 and not ranking.self_candidate

    def test_self_candidate_flagged(self):
        rng = np.random.default_rng(2)
        embeddings = {k: rng.normal(size=4) for k in ("p", "c")}
        model = ProjectionModel.create(embeddings, ProjectionConfig(dim=4, slices=2))
        assert model.rank("p", ["c", "p"]).self_candidate

    def test_order_consistent_with_score_pair(self):
        rng = np.random.default_rng(3)
        names = [f"c{i}" for i in range(6)]
        embeddings = {k: rng.normal(size=4) for k in ["p", *names]}
        model = ProjectionModel.create(embeddings, ProjectionConfig(dim=4, slices=2))
        ranking = model.rank("p", names)
        direct = sorted(((model.score_pair("p", c), c) for c in names),
                        key=lambda t: (-t[0], t[1]))
        assert [c for c, _ in ranking.ranked] == [c for _, c in direct]
        for (c, s) in ranking.ranked:
            assert abs(s - model.score_pair("p", c)) <= 1e-12


class TestTraining:
    def test_zero_epochs_keeps_init(self):
        bench = hypernymy_benchmark(n_concepts=40, n_hyponyms=6, dim=8, seed=0)
        config = ProjectionConfig(dim=8, slices=2, epochs=0, seed=0)
        model = ProjectionModel.create(bench.embeddings, config)
        before = {k: v.copy() for k, v in model.params.items()}
        negatives = negative_sample(bench.positives, 2, bench.vocabulary, seed=0)
        model.train(bench.positives, negatives)
        assert all(np.array_equal(before[k], model.params[k]) for k in before)

    def test_duplicated_data_same_optimum_direction(self):
        # mean loss is invariant to duplicating the dataset, so one epoch of
        # full-batch training produces identical updates
        bench = hypernymy_benchmark(n_concepts=40, n_hyponyms=6, dim=8, seed=1)
        negatives = negative_sample(bench.positives, 1, bench.vocabulary, seed=0)
        config = ProjectionConfig(dim=8, slices=2, epochs=1, seed=0,
                                  batch_size=10_000, lr=0.3)
        m1 = ProjectionModel.create(bench.embeddings, config)
        m1.train(bench.positives, negatives)
        m2 = ProjectionModel.create(bench.embeddings, config)
        m2.train(bench.positives * 2, negatives * 2)
        for k in m1.params:
            assert np.allclose(m1.params[k], m2.params[k], atol=1e-12)

    def test_gradients(self):
        bench = hypernymy_benchmark(n_concepts=30, n_hyponyms=4, dim=5, seed=2)
        config = ProjectionConfig(dim=5, slices=2, seed=3)
        model = ProjectionModel.create(bench.embeddings, config)
        negatives = negative_sample(bench.positives, 1, bench.vocabulary, seed=1)
        assert model.check_gradients(bench.positives[:6], negatives[:6]) <= 1e-3

    def test_loss_decreases_on_benchmark(self):
        bench = hypernymy_benchmark(n_concepts=60, n_hyponyms=10, dim=8, seed=3)
        negatives = negative_sample(bench.positives, 3, bench.vocabulary, seed=0)
        config = ProjectionConfig(dim=8, slices=2, epochs=8, seed=0, lr=0.4)
        model = ProjectionModel.create(bench.embeddings, config)
        history = model.train(bench.positives, negatives)
        assert history[-1] < history[0]


def benchmark_map(model, bench):
    rankings = [model.rank(q, bench.candidates[q]) for q in bench.queries]
    return evaluate_rankings(rankings, bench.gold).map


class TestBenchmarkQuality:
    def test_trained_model_beats_random_by_wide_margin(self):
        bench = hypernymy_benchmark(seed=0)
        config = ProjectionConfig(dim=16, slices=4, epochs=25, seed=0, lr=0.5)
        model = ProjectionModel.create(bench.embeddings, config)
        negatives = negative_sample(bench.positives, 8, bench.vocabulary, seed=0)
        model.train(bench.positives, negatives)
        trained_map = benchmark_map(model, bench)

        rng = np.random.default_rng(123)
        random_aps = []
        for q in bench.queries:
            order = list(rng.permutation(bench.candidates[q]))
            random_aps.append(average_precision_oracle(order, bench.gold[q]))
        random_map = float(np.mean(random_aps))

        assert trained_map >= 0.40
        assert trained_map >= 4 * random_map
