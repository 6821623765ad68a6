"""Pool-based active learning: seed round, select-label-retrain iterations,
patience-based stopping, and batch selection strategies.

Selection works on model scores S in [0, 1].  The certainty measure is
p = |S - 0.5| / 0.5, so p = 0 at the decision boundary and p = 1 at either
extreme.  Strategies: ``random``, ``us`` (lowest p), ``cs`` (highest p) and
``ucs``, which mixes an alpha share of high-confidence samples with
uncertain ones.  ``ucs`` ships in two readings: ``prose`` takes the
confident share from high-scoring positives (S >= 0.5); ``literal`` takes
it from the highest p regardless of side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

STRATEGIES = ("random", "us", "cs", "ucs")
UCS_VARIANTS = ("prose", "literal")


class ActiveLearningError(RuntimeError):
    pass


class OracleError(ActiveLearningError):
    """Labeling failed; the failed round's labels were discarded."""

    def __init__(self, message: str, state: "ALState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass
class ALConfig:
    batch_size: int            # K, labels requested per round
    patience: int = 2          # rounds without metric improvement before stop
    alpha: float = 0.3         # high-confidence share for ucs
    strategy: str = "ucs"
    ucs_variant: str = "prose"
    seed: int = 0
    max_rounds: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.ucs_variant not in UCS_VARIANTS:
            raise ValueError(f"unknown ucs variant {self.ucs_variant!r}")


@dataclass
class RoundRecord:
    round: int
    batch: list[str]
    labeled_count: int
    metric: float

    def as_json(self, strategy: str) -> dict:
        return {"round": self.round, "strategy": strategy,
                "labeled": self.labeled_count, "fs": self.metric,
                "batch": list(self.batch)}


@dataclass
class ALState:
    pool: list[str]
    labeled: dict[str, int] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    history: list[RoundRecord] = field(default_factory=list)
    round_index: int = -1
    best_round: int = -1
    best_metric: float = float("-inf")


class Trainer(Protocol):
    def fit(self, labeled: Mapping[str, int]):
        """Train a model from scratch on the labeled set."""

    def evaluate(self, model, test_set) -> float:
        """Metric fs on the held-out test set (higher is better)."""

    def score(self, model, ids: Sequence[str]) -> np.ndarray:
        """Model scores in [0, 1] for the given pool ids."""


def uncertainty(scores: np.ndarray) -> np.ndarray:
    """p = |S - 0.5| / 0.5; 0 at the boundary, 1 at certain 0/1 scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    return np.abs(scores - 0.5) / 0.5


def select_batch(ids: Sequence[str], scores: np.ndarray, config: ALConfig,
                 rng: np.random.Generator | None = None) -> list[str]:
    """Pick exactly K distinct ids; deterministic given seed, ties by id."""
    ids = list(ids)
    if len(ids) < config.batch_size:
        raise ActiveLearningError(
            f"pool exhausted: {len(ids)} < batch size {config.batch_size}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    k = config.batch_size
    p = uncertainty(scores)
    by_uncertain = sorted(range(len(ids)), key=lambda i: (p[i], ids[i]))
    by_confident = sorted(range(len(ids)), key=lambda i: (-p[i], ids[i]))

    if config.strategy == "random":
        picked = rng.choice(len(ids), size=k, replace=False)
        chosen = [ids[int(i)] for i in picked]
    elif config.strategy == "us":
        chosen = [ids[i] for i in by_uncertain[:k]]
    elif config.strategy == "cs":
        chosen = [ids[i] for i in by_confident[:k]]
    else:  # ucs
        n_conf = int(round(config.alpha * k))
        taken: set[int] = set()
        if config.ucs_variant == "prose":
            # the high-score share: confident positives first, then the next
            # highest-scoring samples when fewer than n_conf clear 0.5
            by_score = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
            for i in by_score[:n_conf]:
                taken.add(i)
        else:
            for i in by_confident[:n_conf]:
                taken.add(i)
        for i in by_uncertain:
            if len(taken) >= k:
                break
            taken.add(i)
        chosen = [ids[i] for i in sorted(taken)]
    if len(set(chosen)) != k:
        raise ActiveLearningError("batch selection produced duplicates")
    return chosen


def run_loop(trainer: Trainer, oracle: Callable[[Sequence[str]], Mapping[str, int]],
             pool: Iterable[str], test_set, config: ALConfig,
             on_round: Callable[[RoundRecord], None] | None = None,
             log_path=None):
    """Seed with K random labels, then iterate select/label/retrain until the
    metric stops improving for ``patience`` rounds or the pool runs dry.

    Returns (best model, final ALState).  A failing oracle aborts the
    current round atomically: no label from that round is kept.
    """
    state = ALState(pool=sorted(pool))
    if len(state.pool) < config.batch_size:
        raise ActiveLearningError("pool smaller than one batch")
    rng = np.random.default_rng(config.seed)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def close_log():
        if log_fh:
            log_fh.close()

    def run_round(batch: list[str]):
        try:
            answers = dict(oracle(batch))
        except Exception as exc:
            close_log()
            raise OracleError(f"oracle failed on round "
                              f"{state.round_index + 1}: {exc}", state) from exc
        missing = [b for b in batch if b not in answers]
        if missing:
            close_log()
            raise OracleError(f"oracle left {len(missing)} tasks unanswered",
                              state)
        for sample_id in batch:
            state.labeled[sample_id] = int(answers[sample_id])
        remaining = set(batch)
        state.pool = [x for x in state.pool if x not in remaining]
        model = trainer.fit(state.labeled)
        metric = trainer.evaluate(model, test_set)
        state.round_index += 1
        state.scores = dict(zip(state.pool,
                                trainer.score(model, state.pool).tolist())
                            ) if state.pool else {}
        record = RoundRecord(round=state.round_index, batch=list(batch),
                             labeled_count=len(state.labeled), metric=metric)
        state.history.append(record)
        if on_round:
            on_round(record)
        if log_fh:
            log_fh.write(json.dumps(record.as_json(config.strategy),
                                    sort_keys=True) + "\n")
            log_fh.flush()
        return model, metric

    seed_batch = [state.pool[int(i)]
                  for i in rng.choice(len(state.pool), size=config.batch_size,
                                      replace=False)]
    model, metric = run_round(seed_batch)
    best_model = model
    state.best_metric = metric
    state.best_round = 0

    since_best = 0
    while state.pool and since_best < config.patience:
        if config.max_rounds is not None and state.round_index >= config.max_rounds:
            break
        if len(state.pool) < config.batch_size:
            break
        ids = list(state.pool)
        scores = np.array([state.scores[x] for x in ids])
        batch = select_batch(ids, scores, config, rng)
        model, metric = run_round(batch)
        if metric > state.best_metric:
            state.best_metric = metric
            state.best_round = state.round_index
            best_model = model
            since_best = 0
        else:
            since_best += 1
    close_log()
    return best_model, state


class SimulatedOracle:
    """Ground-truth-table oracle; deterministic per id."""

    def __init__(self, truth: Mapping[str, int]):
        self.truth = dict(truth)
        self.calls = 0

    def __call__(self, ids: Sequence[str]) -> dict[str, int]:
        self.calls += 1
        missing = [i for i in ids if i not in self.truth]
        if missing:
            raise KeyError(f"no ground truth for {missing[:3]}")
        return {i: self.truth[i] for i in ids}
