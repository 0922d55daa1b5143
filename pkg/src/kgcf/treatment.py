"""Per-relation structural treatments via k-core peeling.

For each original relation the directed view is projected to a simple
undirected graph, peeled to its k-core, and the surviving connected
components define cluster labels. A triplet's factual treatment is 1 iff
head and tail share a label under its relation's assignment. Entities
peeled away each get a unique singleton label, so they never match
anything but themselves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import RelationGraph


def kcore_surviving(edges, k: int):
    """Maximal subgraph of the undirected simple graph in which every
    vertex has degree >= k, by iterative peeling.

    Returns (surviving vertex set, adjacency dict of the induced subgraph).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    adj: dict[int, set[int]] = {}
    for u, v in edges:
        if u == v:
            continue
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)

    queue = [u for u, nbrs in adj.items() if len(nbrs) < k]
    removed = set(queue)
    while queue:
        u = queue.pop()
        for v in adj[u]:
            if v in removed:
                continue
            adj[v].discard(u)
            if len(adj[v]) < k:
                removed.add(v)
                queue.append(v)
        adj[u] = set()

    surviving = {u for u in adj if u not in removed and adj[u]}
    sub = {u: set(adj[u]) for u in surviving}
    return surviving, sub


@dataclass
class ClusterAssignment:
    """Cluster labels for one relation.

    Surviving k-core components carry labels 0..n_components-1 (ordered by
    smallest member); every peeled entity e gets the unique singleton
    label n_components + e.
    """

    relation: int
    k: int
    n_components: int
    component_label: dict[int, int]
    _label_array: np.ndarray | None = field(default=None, repr=False)

    def label(self, entity: int) -> int:
        got = self.component_label.get(entity)
        return got if got is not None else self.n_components + entity

    def treatment(self, h: int, t: int) -> int:
        return 1 if self.label(h) == self.label(t) else 0

    def label_array(self, n_entities: int) -> np.ndarray:
        if self._label_array is None or len(self._label_array) != n_entities:
            labels = self.n_components + np.arange(n_entities, dtype=np.int64)
            for e, lab in self.component_label.items():
                labels[e] = lab
            self._label_array = labels
        return self._label_array


def cluster(surviving: set[int], subgraph: dict[int, set[int]], relation: int, k: int) -> ClusterAssignment:
    """Label connected components of the surviving subgraph 0..C-1,
    ordered by smallest member index."""
    labels: dict[int, int] = {}
    next_label = 0
    for start in sorted(surviving):
        if start in labels:
            continue
        stack = [start]
        labels[start] = next_label
        while stack:
            u = stack.pop()
            for v in subgraph[u]:
                if v not in labels:
                    labels[v] = next_label
                    stack.append(v)
        next_label += 1
    return ClusterAssignment(relation=relation, k=k, n_components=next_label, component_label=labels)


def compute_assignments(graph: RelationGraph, k: int = 2) -> list[ClusterAssignment]:
    """One assignment per original relation, from the train split only."""
    out = []
    for j in range(graph.n_relations):
        surviving, sub = kcore_surviving(graph.undirected_projection(j), k)
        out.append(cluster(surviving, sub, relation=j, k=k))
    return out


def factual_treatment(h: int, r: int, t: int, assignments: list[ClusterAssignment], n_relations: int | None = None) -> int:
    """Treatment bit of (h, r, t); inverse-relation indices map to their
    base relation, so mirrored triplets share the bit."""
    if n_relations is None:
        n_relations = len(assignments)
    if r >= n_relations:
        r -= n_relations
    if r < 0 or r >= len(assignments):
        raise LookupError(f"no assignment for relation {r}")
    return assignments[r].treatment(h, t)


def export_assignments(assignments: list[ClusterAssignment], n_entities: int, path) -> None:
    """Audit dump: one ``relation<TAB>entity<TAB>label`` line per pair."""
    with open(path, "w", encoding="utf-8") as fh:
        for a in assignments:
            for e in range(n_entities):
                fh.write(f"{a.relation}\t{e}\t{a.label(e)}\n")
