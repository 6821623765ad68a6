import itertools
import json

import numpy as np
import pytest

from conet.active import (
    ALConfig,
    ActiveLearningError,
    OracleError,
    RoundRecord,
    SimulatedOracle,
    run_loop,
    select_batch,
    uncertainty,
)


class TestUncertainty:
    def test_boundary(self):
        assert uncertainty(np.array([0.5]))[0] == 0.0

    def test_formula(self):
        assert abs(uncertainty(np.array([0.9]))[0] - 0.8) <= 1e-12

    def test_extremes(self):
        assert uncertainty(np.array([0.0]))[0] == 1.0
        assert uncertainty(np.array([1.0]))[0] == 1.0

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            uncertainty(np.array([1.2]))


class TestSelectBatch:
    IDS = ["s0", "s1", "s2", "s3"]
    SCORES = np.array([0.5, 0.9, 0.1, 0.55])

    def test_ucs_spec_example(self):
        config = ALConfig(batch_size=2, alpha=0.5, strategy="ucs", seed=0)
        batch = select_batch(self.IDS, self.SCORES, config)
        assert set(batch) == {"s1", "s0"}

    def test_alpha_zero_reduces_to_us(self):
        ucs = ALConfig(batch_size=2, alpha=0.0, strategy="ucs", seed=0)
        us = ALConfig(batch_size=2, strategy="us", seed=0)
        assert set(select_batch(self.IDS, self.SCORES, ucs)) == \
            set(select_batch(self.IDS, self.SCORES, us))

    def test_alpha_one_pure_confidence(self):
        config = ALConfig(batch_size=2, alpha=1.0, strategy="ucs", seed=0)
        assert set(select_batch(self.IDS, self.SCORES, config)) == {"s1", "s3"}

    def test_literal_variant_takes_p_extremes(self):
        config = ALConfig(batch_size=2, alpha=0.5, strategy="ucs",
                          ucs_variant="literal", seed=0)
        batch = select_batch(self.IDS, self.SCORES, config)
        # highest p is s2 (p=0.8, ties with s1 broken by id), lowest p is s0
        assert set(batch) == {"s1", "s0"} or set(batch) == {"s2", "s0"}

    def test_cs_takes_highest_p(self):
        config = ALConfig(batch_size=2, strategy="cs", seed=0)
        assert set(select_batch(self.IDS, self.SCORES, config)) == {"s1", "s2"}

    def test_exactly_k_distinct(self):
        config = ALConfig(batch_size=3, strategy="random", seed=1)
        batch = select_batch(self.IDS, self.SCORES, config)
        assert len(batch) == len(set(batch)) == 3

    def test_pool_exhausted(self):
        config = ALConfig(batch_size=9, strategy="us", seed=0)
        with pytest.raises(ActiveLearningError):
            select_batch(self.IDS, self.SCORES, config)

    def test_deterministic_ties_by_id(self):
        scores = np.zeros(6) + 0.5
        ids = [f"x{i}" for i in range(6)]
        config = ALConfig(batch_size=3, strategy="us", seed=0)
        assert select_batch(ids, scores, config) == ["x0", "x1", "x2"]

    def test_us_window_optimal_vs_exhaustive(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(4, 13))
            k = int(rng.integers(1, n))
            scores = rng.uniform(size=n)
            ids = [f"i{j}" for j in range(n)]
            config = ALConfig(batch_size=k, strategy="us", seed=0)
            batch = set(select_batch(ids, scores, config))
            p = np.abs(scores - 0.5) / 0.5
            delta = max(p[ids.index(b)] for b in batch) * 0.5
            lo, hi = 0.5 - delta, 0.5 + delta
            in_window = lambda subset: sum(
                1 for b in subset if lo - 1e-12 <= scores[ids.index(b)] <= hi + 1e-12)
            ours = in_window(batch)
            for other in itertools.combinations(ids, k):
                assert in_window(other) <= ours


class FakeTrainer:
    """Deterministic trainer: metric = capped count of labeled positives."""

    def __init__(self, truth, cap=6):
        self.truth = truth
        self.cap = cap

    def fit(self, labeled):
        return dict(labeled)

    def evaluate(self, model, test_set):
        return min(sum(self.truth[k] for k in model), self.cap)

    def score(self, model, ids):
        rng = np.random.default_rng(42)
        table = {i: 0.3 + 0.4 * self.truth.get(i, 0) for i in sorted(self.truth)}
        return np.array([table[i] for i in ids])


def make_pool(n=30, positive_every=3):
    truth = {f"s{i:03d}": 1 if i % positive_every == 0 else 0 for i in range(n)}
    return truth


class TestRunLoop:
    def test_frozen_metric_stops_after_patience(self):
        truth = {f"s{i}": 0 for i in range(20)}
        trainer = FakeTrainer(truth, cap=0)
        config = ALConfig(batch_size=5, patience=1, strategy="us", seed=0)
        _, state = run_loop(trainer, SimulatedOracle(truth), sorted(truth),
                            None, config)
        assert len(state.history) == 2  # seed round + one non-improving round

    def test_never_relabels_and_counts_match(self):
        truth = make_pool(30)
        trainer = FakeTrainer(truth)
        config = ALConfig(batch_size=5, patience=2, strategy="ucs", seed=0)
        seen = []
        oracle = SimulatedOracle(truth)

        def spying_oracle(ids):
            seen.extend(ids)
            return oracle(ids)

        _, state = run_loop(trainer, spying_oracle, sorted(truth), None, config)
        assert len(seen) == len(set(seen))
        for i, record in enumerate(state.history):
            assert record.labeled_count == (i + 1) * config.batch_size

    def test_pool_sized_batch_is_full_supervision(self):
        truth = make_pool(12)
        trainer = FakeTrainer(truth)
        config = ALConfig(batch_size=12, patience=2, strategy="random", seed=0)
        model, state = run_loop(trainer, SimulatedOracle(truth), sorted(truth),
                                None, config)
        assert len(state.history) == 1
        assert state.pool == []
        assert set(model) == set(truth)

    def test_reproducible_under_seed(self):
        truth = make_pool(24)
        config = ALConfig(batch_size=4, patience=2, strategy="random", seed=9)
        runs = []
        for _ in range(2):
            trainer = FakeTrainer(truth)
            _, state = run_loop(trainer, SimulatedOracle(truth), sorted(truth),
                                None, config)
            runs.append([(r.batch, r.metric) for r in state.history])
        assert runs[0] == runs[1]

    def test_stops_within_patience_of_best_round(self):
        truth = make_pool(40)
        trainer = FakeTrainer(truth, cap=4)
        config = ALConfig(batch_size=5, patience=2, strategy="us", seed=0)
        _, state = run_loop(trainer, SimulatedOracle(truth), sorted(truth),
                            None, config)
        assert state.round_index - state.best_round <= config.patience

    def test_oracle_failure_atomic(self):
        truth = make_pool(20)
        trainer = FakeTrainer(truth)
        calls = {"n": 0}

        def failing_oracle(ids):
            calls["n"] += 1
            if calls["n"] == 2:
                raise RuntimeError("annotator went home")
            return {i: truth[i] for i in ids}

        config = ALConfig(batch_size=5, patience=3, strategy="us", seed=0)
        with pytest.raises(OracleError) as excinfo:
            run_loop(trainer, failing_oracle, sorted(truth), None, config)
        state = excinfo.value.state
        assert len(state.labeled) == 5          # only the seed round survived
        assert len(state.pool) == 15
        assert len(state.history) == 1

    def test_round_log_jsonl(self, tmp_path):
        truth = make_pool(20)
        trainer = FakeTrainer(truth)
        config = ALConfig(batch_size=5, patience=1, strategy="ucs", seed=0)
        log = tmp_path / "rounds.jsonl"
        run_loop(trainer, SimulatedOracle(truth), sorted(truth), None, config,
                 log_path=log)
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["round"] for r in records] == list(range(len(records)))
        assert all(r["strategy"] == "ucs" for r in records)
        assert all(set(r) == {"round", "strategy", "labeled", "fs", "batch"}
                   for r in records)
