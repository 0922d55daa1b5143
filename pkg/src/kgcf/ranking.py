"""Filtered-ranking evaluation: MRR, MR, Hits@K, and a paired t-test.

Each test triplet contributes two directional queries: tails are ranked
from (h, r) and heads from (t, r^-1). Candidates that form another true
triplet (anywhere in train/valid/test) are filtered out, the query itself
is kept, and ties take the mean of the optimistic and pessimistic rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, Triplet
from .errors import DegenerateStatisticError, UndefinedStatisticError
from .model import KGCFModel

_EVAL_CHUNK = 64


def full_filter(dataset: Dataset) -> frozenset[Triplet]:
    """All true triplets across the three splits."""
    return frozenset(dataset.train) | frozenset(dataset.valid) | frozenset(dataset.test)


def score(model: KGCFModel, head: int, relation: int, tail: int) -> float:
    """Factual probability of one triplet (tail-conditional direction)."""
    return model.score(head, relation, tail)


def rank_with_ties(scores: np.ndarray, query_entity: int, allowed: np.ndarray) -> float:
    """1 + (#strictly greater) + 0.5 * (#ties) among allowed candidates."""
    sq = scores[query_entity]
    mask = allowed.copy()
    mask[query_entity] = False
    greater = int(np.sum(scores[mask] > sq))
    ties = int(np.sum(scores[mask] == sq))
    return 1.0 + greater + 0.5 * ties


def _allowed_mask(model: KGCFModel, triplet: Triplet, direction: str,
                  filt: frozenset[Triplet]) -> np.ndarray:
    h, r, t = triplet
    n = model.graph.n_entities
    allowed = np.ones(n, dtype=bool)
    if direction == "tail":
        for e in range(n):
            if e != t and Triplet(h, r, e) in filt:
                allowed[e] = False
    elif direction == "head":
        for e in range(n):
            if e != h and Triplet(e, r, t) in filt:
                allowed[e] = False
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return allowed


def filtered_rank(model: KGCFModel, triplet: Triplet, direction: str,
                  filt: frozenset[Triplet]) -> float:
    h, r, t = triplet
    if direction == "tail":
        scores = model.score_tails(h, r)
        query_entity = t
    else:
        scores = model.score_tails(t, r + model.graph.n_relations)
        query_entity = h
    return rank_with_ties(scores, query_entity, _allowed_mask(model, triplet, direction, filt))


@dataclass
class MetricsReport:
    mrr: float
    mr: float
    hits: dict[int, float]
    n_queries: int
    ranks: list[float]

    def to_dict(self, split: str | None = None) -> dict:
        out = {"mrr": self.mrr, "mr": self.mr, "n_queries": self.n_queries}
        for k, v in sorted(self.hits.items()):
            out[f"hits_{k}"] = v
        if split is not None:
            out = {"split": split, **out}
        return out


def evaluate(model: KGCFModel, triplets: list[Triplet],
             filt: frozenset[Triplet], hits_at=(1, 3, 10)) -> MetricsReport:
    """Filtered metrics over a split; per triplet the head rank comes
    first, then the tail rank, in split order."""
    if not triplets:
        raise UndefinedStatisticError("cannot evaluate an empty split")
    n_rel = model.graph.n_relations
    queries: list[tuple[int, int]] = []
    for h, r, t in triplets:
        queries.append((t, r + n_rel))  # head direction
        queries.append((h, r))          # tail direction
    scores = np.empty((len(queries), model.graph.n_entities))
    for start in range(0, len(queries), _EVAL_CHUNK):
        chunk = queries[start:start + _EVAL_CHUNK]
        scores[start:start + len(chunk)] = model.score_tails_batch(chunk)

    ranks: list[float] = []
    for i, trip in enumerate(triplets):
        ranks.append(rank_with_ties(scores[2 * i], trip.head,
                                    _allowed_mask(model, trip, "head", filt)))
        ranks.append(rank_with_ties(scores[2 * i + 1], trip.tail,
                                    _allowed_mask(model, trip, "tail", filt)))

    arr = np.asarray(ranks)
    return MetricsReport(
        mrr=float(np.mean(1.0 / arr)),
        mr=float(np.mean(arr)),
        hits={k: float(np.mean(arr <= k)) for k in hits_at},
        n_queries=len(ranks),
        ranks=ranks,
    )


def significance_test(reciprocal_a, reciprocal_b) -> float:
    """Two-sided paired t-test p-value over per-query reciprocal ranks."""
    a = np.asarray(reciprocal_a, dtype=np.float64)
    b = np.asarray(reciprocal_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two paired lists of equal length >= 2")
    diff = a - b
    if np.all(diff == 0.0):
        return 1.0
    if np.var(diff) == 0.0:
        raise DegenerateStatisticError("paired differences have zero variance")
    return float(stats.ttest_rel(a, b).pvalue)
