"""Counterfactual matching: nearest opposite-treatment candidate pairs.

For each train triplet (h, r, t) we search the candidate pair set for the
pair (h_a, t_b) with opposite treatment under r that minimizes
``||m_h - m_a|| + ||m_t - m_b||`` in the combined embedding space. A match
supplies the counterfactual treatment (the flipped bit) and outcome (does
(h_a, r, t_b) appear in the train split); without a match the record
falls back to the factual bits. The finished table is write-once.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, RelationGraph, Triplet
from .treatment import ClusterAssignment


def pair_distance(M: np.ndarray, i: int, a: int, k: int, b: int) -> float:
    """Euclidean distance between entity pairs (i, k) and (a, b)."""
    return float(np.sqrt(np.sum((M[i] - M[a]) ** 2)) + np.sqrt(np.sum((M[k] - M[b]) ** 2)))


def candidate_array(pairs: set[tuple[int, int]]) -> np.ndarray:
    """Candidate pairs as a lexicographically sorted (P, 2) array; the sort
    order doubles as the argmin tie-break."""
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def find_substitute(
    triplet: Triplet,
    candidates: np.ndarray,
    M: np.ndarray,
    assignment: ClusterAssignment,
) -> tuple[int, int] | None:
    """Nearest candidate pair with the opposite treatment under the
    triplet's relation, ties broken by smallest (h_a, t_b); None if no
    candidate has the opposite treatment."""
    h, _, t = triplet
    if len(candidates) == 0:
        return None
    labels = assignment.label_array(M.shape[0])
    want = 1 - assignment.treatment(h, t)
    pair_treat = (labels[candidates[:, 0]] == labels[candidates[:, 1]]).astype(np.int64)
    mask = (pair_treat == want) & ~((candidates[:, 0] == h) & (candidates[:, 1] == t))
    if not mask.any():
        return None
    idx = np.flatnonzero(mask)
    cand = candidates[idx]
    dists = (
        np.sqrt(np.sum((M[h] - M[cand[:, 0]]) ** 2, axis=1))
        + np.sqrt(np.sum((M[t] - M[cand[:, 1]]) ** 2, axis=1))
    )
    best = idx[np.flatnonzero(dists == dists.min())[0]]
    return int(candidates[best, 0]), int(candidates[best, 1])


@dataclass(frozen=True)
class CounterfactualRecord:
    triplet: Triplet
    t_factual: int
    substitute: tuple[int, int] | None
    t_counterfactual: int
    a_counterfactual: int

    @property
    def matched(self) -> bool:
        return self.substitute is not None


class TreatmentTable:
    """Per-triplet counterfactual records covering all train triplets and
    their inverse mirrors, keyed by triplet. Built once, then read-only."""

    def __init__(self, records: list[CounterfactualRecord]):
        self.records = records
        self.by_triplet = {rec.triplet: rec for rec in records}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, triplet: Triplet) -> CounterfactualRecord:
        return self.by_triplet[triplet]

    def matched_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.matched for r in self.records) / len(self.records)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                h, r, t = rec.triplet
                sub_h, sub_t = rec.substitute if rec.substitute else (None, None)
                fh.write(json.dumps({
                    "h": h, "r": r, "t": t,
                    "tf": rec.t_factual, "tcf": rec.t_counterfactual,
                    "acf": rec.a_counterfactual,
                    "sub_h": sub_h, "sub_t": sub_t,
                }, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TreatmentTable":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                sub = None
                if obj["sub_h"] is not None:
                    sub = (obj["sub_h"], obj["sub_t"])
                records.append(CounterfactualRecord(
                    triplet=Triplet(obj["h"], obj["r"], obj["t"]),
                    t_factual=obj["tf"],
                    substitute=sub,
                    t_counterfactual=obj["tcf"],
                    a_counterfactual=obj["acf"],
                ))
        return cls(records)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("KGCF_WORKERS", "1")))
    except ValueError:
        return 1


def build_table(
    dataset: Dataset,
    graph: RelationGraph,
    M: np.ndarray,
    assignments: list[ClusterAssignment],
    candidates: set[tuple[int, int]] | np.ndarray,
    workers: int | None = None,
) -> TreatmentTable:
    """One record per train triplet plus its inverse mirror.

    Triplets are partitioned across workers and the per-chunk results are
    merged in train order, so the table bytes do not depend on the worker
    count. Counterfactual outcome membership is tested against the train
    split only.
    """
    cand = candidates if isinstance(candidates, np.ndarray) else candidate_array(candidates)
    n_rel = graph.n_relations
    if workers is None:
        workers = _default_workers()

    def record_for(trip: Triplet) -> list[CounterfactualRecord]:
        h, r, t = trip
        tf = assignments[r].treatment(h, t)
        sub = find_substitute(trip, cand, M, assignments[r])
        if sub is not None:
            tcf = 1 - tf
            acf = 1 if graph.has_fact(sub[0], r, sub[1]) else 0
        else:
            tcf = tf
            acf = 1  # the original train triplet is observed
        mirror = Triplet(t, r + n_rel, h)
        mirror_sub = (sub[1], sub[0]) if sub is not None else None
        return [
            CounterfactualRecord(trip, tf, sub, tcf, acf),
            CounterfactualRecord(mirror, tf, mirror_sub, tcf, acf),
        ]

    triplets = dataset.train
    if workers <= 1 or len(triplets) < 2 * workers:
        chunks = [[record_for(t) for t in triplets]]
    else:
        bounds = np.linspace(0, len(triplets), workers + 1, dtype=int)
        parts = [triplets[bounds[i]:bounds[i + 1]] for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda part: [record_for(t) for t in part], parts))

    records: list[CounterfactualRecord] = []
    for chunk in chunks:
        for pair in chunk:
            records.extend(pair)
    return TreatmentTable(records)
