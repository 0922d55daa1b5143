"""Path interpretations of predictions.

Every edge's message contribution carries a multiplicative gate fixed at
1.0; the importance of an edge is the derivative of the query's factual
probability with respect to its gate, summed over layers. Interpretations
are the highest-total-weight edge sequences of bounded length from the
query head to its tail, found by beam search (edges beyond the encoder's
receptive field have zero importance by construction).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import Dataset, Triplet
from .matching import TreatmentTable
from .model import KGCFModel


class EdgeImportance:
    """Per-augmented-edge weights for one query."""

    def __init__(self, edges: list[tuple[int, int, int]], weights: np.ndarray):
        self.edges = edges
        self.weights = weights
        self._by_edge = {}
        for e, w in zip(edges, weights):
            self._by_edge[e] = self._by_edge.get(e, 0.0) + float(w)

    def weight(self, edge: tuple[int, int, int]) -> float:
        return self._by_edge.get(edge, 0.0)

    def items(self):
        return self._by_edge.items()


def gated_prediction(model: KGCFModel, triplet: Triplet,
                     gates: torch.Tensor | None = None) -> torch.Tensor:
    h, r, t = triplet
    z = model.encoder.encode(torch.tensor([[h, r]]), model.gt, gates=gates)[0, t]
    bit = torch.tensor(float(model.factual_bit(h, r, t)), dtype=torch.float64)
    p, _ = model.decoder(z.unsqueeze(0), bit.unsqueeze(0))
    return p[0]


def edge_importance(model: KGCFModel, triplet: Triplet) -> EdgeImportance:
    """d p_F / d gate for every augmented edge, summed over layers."""
    gates = torch.ones(model.encoder.n_layers, model.gt.n_edges,
                       dtype=torch.float64, requires_grad=True)
    p = gated_prediction(model, triplet, gates=gates)
    grad, = torch.autograd.grad(p, gates)
    weights = grad.sum(dim=0).numpy()
    edges = list(zip(model.graph.edge_src.tolist(),
                     model.graph.edge_rel.tolist(),
                     model.graph.edge_dst.tolist()))
    return EdgeImportance(edges, weights)


@dataclass
class PathInterpretation:
    edges: tuple[tuple[int, int, int], ...]
    weight: float


def top_paths(importance: EdgeImportance, head: int, tail: int, k: int,
              max_len: int, beam: int = 10) -> list[PathInterpretation]:
    """Up to k highest-weight edge sequences (length 1..max_len) from head
    to tail, sorted by descending weight then lexicographic edge sequence.
    With a beam at least as wide as the number of prefixes the search is
    exhaustive."""
    if k < 1 or beam < k:
        raise ValueError("need k >= 1 and beam >= k")
    out_edges: dict[int, list[tuple[tuple[int, int, int], float]]] = {}
    for edge, w in sorted(importance.items()):
        out_edges.setdefault(edge[0], []).append((edge, w))

    frontier: list[tuple[float, tuple, int]] = [(0.0, (), head)]
    found: dict[tuple, float] = {}
    for _ in range(max_len):
        nxt = []
        for weight, path, end in frontier:
            for edge, w in out_edges.get(end, ()):
                cand = (weight + w, path + (edge,), edge[2])
                nxt.append(cand)
                if edge[2] == tail:
                    found.setdefault(cand[1], cand[0])
        nxt.sort(key=lambda c: (-c[0], c[1]))
        frontier = nxt[:beam]
        if not frontier:
            break
    ranked = sorted(found.items(), key=lambda kv: (-kv[1], kv[0]))
    return [PathInterpretation(edges=p, weight=w) for p, w in ranked[:k]]


def _relation_name(dataset: Dataset, r: int) -> str:
    n = dataset.n_relations
    return dataset.relation_names[r] if r < n else dataset.relation_names[r - n] + "^-1"


def _edge_text(dataset: Dataset, model: KGCFModel, edge: tuple[int, int, int],
               table: TreatmentTable | None) -> str:
    h, r, t = edge
    tf = model.factual_bit(h, r, t)
    rec = table.by_triplet.get(Triplet(h, r, t)) if table else None
    tcf = rec.t_counterfactual if rec else 1 - tf
    names = (dataset.entity_names[h], _relation_name(dataset, r), dataset.entity_names[t])
    return f"({names[0]}, {names[1]}, {names[2]}) [TF={tf}, TCF={tcf}]"


def format_interpretation(dataset: Dataset, model: KGCFModel, query: Triplet,
                          paths: list[PathInterpretation],
                          table: TreatmentTable | None = None) -> str:
    """Human-readable report: query, its substitute when matched, then the
    top paths one per line as ``weight<TAB>edge ∧ edge ...``."""
    lines = [f"query\t{_edge_text(dataset, model, tuple(query), table)}"]
    rec = table.by_triplet.get(query) if table else None
    if rec is not None and rec.matched:
        sub = Triplet(rec.substitute[0], query.relation, rec.substitute[1])
        lines.append(f"SoCR\t{_edge_text(dataset, model, tuple(sub), table)}")
    for path in paths:
        body = " ∧ ".join(_edge_text(dataset, model, e, table) for e in path.edges)
        lines.append(f"{path.weight:.6g}\t{body}")
    return "\n".join(lines) + "\n"
