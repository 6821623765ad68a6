"""Linear-chain CRF with standard, constrained, and fuzzy inference.

Labels follow the I/O/B scheme over a set of domains.  Invalid IOB
transitions (``I-x`` after anything other than ``B-x``/``I-x``, or at the
start) are hard-masked with a large negative finite score so every path
stays numerically comparable and decoded outputs are always valid.

Path score convention: ``start[y0] + sum_t e[t, y_t] + sum_{t>=1}
Tr[y_{t-1}, y_t]`` where ``Tr`` already includes the IOB mask.  The fuzzy
negative log-likelihood is ``log_partition - constrained_log_partition``,
i.e. the numerator sums over annotation-consistent paths and the
denominator over all paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor import CompGraph, Tensor

IOB_MASK = -1.0e4  # additive penalty for IOB-invalid transitions/starts

OUTSIDE = "O"


class NoValidPathError(ValueError):
    """Raised when a partial labeling admits no IOB-valid path."""


@dataclass(frozen=True)
class LabelInventory:
    """IOB label set over an ordered tuple of domains."""

    domains: tuple[str, ...]
    labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if len(set(self.domains)) != len(self.domains):
            raise ValueError("duplicate domains in label inventory")
        labels = [OUTSIDE]
        for dom in self.domains:
            labels.extend((f"B-{dom}", f"I-{dom}"))
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def from_domains(cls, domains: Iterable[str]) -> "LabelInventory":
        return cls(tuple(domains))

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def begin(self, domain: str) -> int:
        return self.index(f"B-{domain}")

    def inside(self, domain: str) -> int:
        return self.index(f"I-{domain}")

    def domain_of(self, idx: int) -> str | None:
        label = self.labels[idx]
        return None if label == OUTSIDE else label[2:]

    def valid_start(self, j: int) -> bool:
        return not self.labels[j].startswith("I-")

    def valid_transition(self, i: int, j: int) -> bool:
        lj = self.labels[j]
        if not lj.startswith("I-"):
            return True
        li = self.labels[i]
        return li in (f"B-{lj[2:]}", f"I-{lj[2:]}")

    def start_mask(self) -> np.ndarray:
        return np.array([0.0 if self.valid_start(j) else IOB_MASK
                         for j in range(len(self))])

    def transition_mask(self) -> np.ndarray:
        size = len(self)
        mask = np.zeros((size, size))
        for i in range(size):
            for j in range(size):
                if not self.valid_transition(i, j):
                    mask[i, j] = IOB_MASK
        return mask

    def spans(self, labels: Sequence[str]) -> list[tuple[int, int, str]]:
        """Maximal B-x/I-x spans as (start, end_exclusive, domain)."""
        out = []
        start, domain = None, None
        for pos, label in enumerate(labels):
            if label.startswith("B-"):
                if start is not None:
                    out.append((start, pos, domain))
                start, domain = pos, label[2:]
            elif label.startswith("I-") and domain == label[2:] and start is not None:
                continue
            else:
                if start is not None:
                    out.append((start, pos, domain))
                    start, domain = None, None
                if label.startswith("I-") or label.startswith("B-"):
                    # treat stray I-x as a new span start to stay total
                    start, domain = pos, label[2:]
        if start is not None:
            out.append((start, len(labels), domain))
        return out

    def encode_spans(self, length: int,
                     spans: Iterable[tuple[int, int, str]]) -> list[str]:
        labels = [OUTSIDE] * length
        for start, end, domain in spans:
            labels[start] = f"B-{domain}"
            for pos in range(start + 1, end):
                labels[pos] = f"I-{domain}"
        return labels


@dataclass(frozen=True)
class PartialLabeling:
    """Per-token allowed-label sets; every set nonempty."""

    allowed: tuple[frozenset[int], ...]

    def __post_init__(self):
        if not self.allowed:
            raise ValueError("partial labeling must cover at least one token")
        if any(not s for s in self.allowed):
            raise ValueError("allowed-label sets must be nonempty")

    @classmethod
    def from_labels(cls, inventory: LabelInventory,
                    sets: Sequence[Iterable[str]]) -> "PartialLabeling":
        return cls(tuple(frozenset(inventory.index(lbl) for lbl in s) for s in sets))

    @classmethod
    def singletons(cls, inventory: LabelInventory,
                   labels: Sequence[str]) -> "PartialLabeling":
        return cls(tuple(frozenset((inventory.index(lbl),)) for lbl in labels))

    @classmethod
    def full(cls, inventory: LabelInventory, length: int) -> "PartialLabeling":
        every = frozenset(range(len(inventory)))
        return cls(tuple(every for _ in range(length)))

    def __len__(self) -> int:
        return len(self.allowed)


def _logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # -inf columns are legitimate here
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else float(out.ravel()[0])


def has_valid_path(inventory: LabelInventory, labeling: PartialLabeling) -> bool:
    reachable = {j for j in labeling.allowed[0] if inventory.valid_start(j)}
    for allowed in labeling.allowed[1:]:
        reachable = {j for j in allowed
                     if any(inventory.valid_transition(i, j) for i in reachable)}
        if not reachable:
            return False
    return bool(reachable)


# ----------------------------------------------------------------- pure DP ops


def _check_chain(emissions: np.ndarray, transitions: np.ndarray,
                 start: np.ndarray) -> None:
    if emissions.ndim != 2:
        raise ValueError(f"emissions must be [len, L], got {emissions.shape}")
    n_labels = emissions.shape[1]
    if transitions.shape != (n_labels, n_labels) or start.shape != (n_labels,):
        raise ValueError("transition/start shapes disagree with emissions")


def log_partition(emissions: np.ndarray, transitions: np.ndarray,
                  start: np.ndarray) -> float:
    """log sum over all label sequences of exp(path score), forward algorithm."""
    _check_chain(emissions, transitions, start)
    alpha = start + emissions[0]
    for t in range(1, emissions.shape[0]):
        alpha = _logsumexp(alpha[:, None] + transitions, axis=0) + emissions[t]
    return float(_logsumexp(alpha))


def constrained_log_partition(emissions: np.ndarray, transitions: np.ndarray,
                              start: np.ndarray, labeling: PartialLabeling) -> float:
    """Forward algorithm restricted to the allowed label set at each position."""
    _check_chain(emissions, transitions, start)
    if len(labeling) != emissions.shape[0]:
        raise ValueError(f"labeling length {len(labeling)} != sequence "
                         f"length {emissions.shape[0]}")
    n_labels = emissions.shape[1]
    masks = np.full((len(labeling), n_labels), -np.inf)
    for t, allowed in enumerate(labeling.allowed):
        masks[t, list(allowed)] = 0.0
    alpha = start + emissions[0] + masks[0]
    for t in range(1, emissions.shape[0]):
        alpha = _logsumexp(alpha[:, None] + transitions, axis=0) + emissions[t] + masks[t]
    return float(_logsumexp(alpha))


def path_score(labels: Sequence[int], emissions: np.ndarray,
               transitions: np.ndarray, start: np.ndarray) -> float:
    total = start[labels[0]] + emissions[0, labels[0]]
    for t in range(1, len(labels)):
        total += transitions[labels[t - 1], labels[t]] + emissions[t, labels[t]]
    return float(total)


def viterbi_decode(emissions: np.ndarray, transitions: np.ndarray,
                   start: np.ndarray) -> tuple[list[int], float]:
    """Argmax path; among ties, the lexicographically smallest label sequence.

    Computed with a backward best-suffix table followed by a greedy forward
    pass, which realises the leftmost-divergence/lowest-index tie-break.
    The returned score is the recomputed score of the returned path.
    """
    _check_chain(emissions, transitions, start)
    length = emissions.shape[0]
    suffix = np.empty_like(emissions)
    suffix[-1] = emissions[-1]
    for t in range(length - 2, -1, -1):
        suffix[t] = emissions[t] + np.max(transitions + suffix[t + 1][None, :], axis=1)
    path = [int(np.argmax(start + suffix[0]))]
    for t in range(1, length):
        path.append(int(np.argmax(transitions[path[-1]] + suffix[t])))
    return path, path_score(path, emissions, transitions, start)


def token_marginals(emissions: np.ndarray, transitions: np.ndarray,
                    start: np.ndarray,
                    labeling: PartialLabeling | None = None
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Forward-backward under an optional allowed-set restriction.

    Returns (token marginals [len, L], expected transition counts [L, L],
    log partition).
    """
    _check_chain(emissions, transitions, start)
    length, n_labels = emissions.shape
    masks = np.zeros((length, n_labels))
    if labeling is not None:
        masks.fill(-np.inf)
        for t, allowed in enumerate(labeling.allowed):
            masks[t, list(allowed)] = 0.0
    scores = emissions + masks

    alpha = np.empty((length, n_labels))
    alpha[0] = start + scores[0]
    for t in range(1, length):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + transitions, axis=0) + scores[t]
    beta = np.zeros((length, n_labels))
    for t in range(length - 2, -1, -1):
        beta[t] = _logsumexp(transitions + (scores[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = float(_logsumexp(alpha[-1]))

    marg = np.exp(alpha + beta - log_z)
    pair = np.zeros((n_labels, n_labels))
    for t in range(1, length):
        log_pair = (alpha[t - 1][:, None] + transitions
                    + (scores[t] + beta[t])[None, :] - log_z)
        pair += np.exp(log_pair)
    return marg, pair, log_z


# ----------------------------------------------------------------- CRF model


class CrfModel:
    """Transitions + pluggable emission scorer over a label inventory.

    The emission scorer maps an input to a [len, L] tensor on a compute
    graph; its parameters are held alongside the transition matrix in
    ``params``.
    """

    TRANSITIONS = "crf.transitions"

    def __init__(self, inventory: LabelInventory, scorer, params: dict[str, np.ndarray]):
        self.inventory = inventory
        self.scorer = scorer
        self.params = params
        self._start = inventory.start_mask()
        self._trans_mask = inventory.transition_mask()

    @classmethod
    def create(cls, inventory: LabelInventory, scorer, seed: int = 0) -> "CrfModel":
        rng = np.random.default_rng(seed)
        params = {cls.TRANSITIONS: np.zeros((len(inventory), len(inventory)))}
        params.update(scorer.init_params(rng, len(inventory)))
        return cls(inventory, scorer, params)

    # scoring pieces ---------------------------------------------------------

    def masked_transitions(self, params: dict[str, np.ndarray] | None = None) -> np.ndarray:
        params = self.params if params is None else params
        return params[self.TRANSITIONS] + self._trans_mask

    @property
    def start_scores(self) -> np.ndarray:
        return self._start

    def emissions(self, x) -> np.ndarray:
        g = CompGraph()
        leaves = g.bind(self.params)
        return self.scorer.emissions(g, x, leaves).data

    # inference --------------------------------------------------------------

    def log_partition(self, x) -> float:
        return log_partition(self.emissions(x), self.masked_transitions(), self._start)

    def constrained_log_partition(self, x, labeling: PartialLabeling) -> float:
        if not has_valid_path(self.inventory, labeling):
            raise NoValidPathError("allowed sets admit no IOB-valid path")
        return constrained_log_partition(self.emissions(x), self.masked_transitions(),
                                         self._start, labeling)

    def fuzzy_nll(self, x, labeling: PartialLabeling) -> float:
        emissions = self.emissions(x)
        transitions = self.masked_transitions()
        if not has_valid_path(self.inventory, labeling):
            raise NoValidPathError("allowed sets admit no IOB-valid path")
        full = log_partition(emissions, transitions, self._start)
        constrained = constrained_log_partition(emissions, transitions, self._start,
                                                labeling)
        nll = full - constrained
        return 0.0 if -1e-9 < nll < 0.0 else nll

    def viterbi(self, x) -> tuple[list[str], float]:
        path, score = viterbi_decode(self.emissions(x), self.masked_transitions(),
                                     self._start)
        return [self.inventory.labels[j] for j in path], score

    # training hook ----------------------------------------------------------

    def loss_on_graph(self, g: CompGraph, leaves: dict[str, Tensor], x,
                      labeling: PartialLabeling) -> Tensor:
        """Fuzzy NLL as a graph node; transition gradients come from
        forward-backward expectations, emission gradients flow through the
        scorer's graph."""
        if not has_valid_path(self.inventory, labeling):
            raise NoValidPathError("allowed sets admit no IOB-valid path")
        emissions_t = self.scorer.emissions(g, x, leaves)
        trans_t = leaves[self.TRANSITIONS]
        emissions = emissions_t.data
        transitions = trans_t.data + self._trans_mask
        start = self._start

        m_full, p_full, log_z = token_marginals(emissions, transitions, start)
        m_con, p_con, log_z_con = token_marginals(emissions, transitions, start,
                                                  labeling)
        nll = log_z - log_z_con
        if -1e-9 < nll < 0.0:
            nll = 0.0

        def backward(g_out):
            scale = float(g_out.reshape(-1)[0])
            return scale * (m_full - m_con), scale * (p_full - p_con)

        return g.custom("crf_fuzzy_nll", (emissions_t, trans_t),
                        np.array([nll]), backward)
