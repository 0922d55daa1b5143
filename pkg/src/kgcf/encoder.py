"""Pair-representation encoder: generalized Bellman-Ford message passing.

For a query (h, r) the encoder maintains a field of |E| rows; row e is the
representation of the pair (h, e). The field starts as the boundary
condition (the query relation's learned embedding at row h, zero
elsewhere) and is refined for L rounds: each entity sums the DistMult
messages ``z[source] * w[edge relation]`` over its incoming augmented
edges, adds its boundary row, and passes the result through a per-layer
linear map and ReLU. One encode scores every tail of the query at once.

All arithmetic is double precision; computation on a fixed thread count
is bitwise deterministic.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .data import RelationGraph
from .errors import NumericError


class GraphTensors:
    """Augmented edge arrays of a RelationGraph as torch tensors."""

    def __init__(self, graph: RelationGraph):
        self.n_entities = graph.n_entities
        self.n_relations = graph.n_relations
        self.src = torch.from_numpy(graph.edge_src)
        self.rel = torch.from_numpy(graph.edge_rel)
        self.dst = torch.from_numpy(graph.edge_dst)

    @property
    def n_edges(self) -> int:
        return len(self.src)


class PairEncoder(nn.Module):
    def __init__(self, n_entities: int, n_relations_aug: int, hidden_dim: int = 32,
                 n_layers: int = 6, seed: int = 0):
        super().__init__()
        self.n_entities = n_entities
        self.n_relations_aug = n_relations_aug
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        # Test hook: "identity" disables the nonlinearity for closed-form
        # gradient and locality checks.
        self.activation = "relu"

        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(hidden_dim)

        def init(*shape):
            t = torch.empty(*shape, dtype=torch.float64)
            t.uniform_(-bound, bound, generator=gen)
            return nn.Parameter(t)

        self.boundary = init(n_relations_aug, hidden_dim)
        self.edge_weight = init(n_layers, n_relations_aug, hidden_dim)
        self.linear_weight = init(n_layers, hidden_dim, hidden_dim)
        self.linear_bias = init(n_layers, hidden_dim)

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(x) if self.activation == "relu" else x

    def boundary_field(self, queries: torch.Tensor) -> torch.Tensor:
        """Initial field for queries (Q, 2) of (head, relation)."""
        q = queries.shape[0]
        z0 = torch.zeros(q, self.n_entities, self.hidden_dim, dtype=torch.float64)
        z0[torch.arange(q), queries[:, 0]] = self.boundary[queries[:, 1]]
        return z0

    def layer_step(self, z: torch.Tensor, layer: int, gt: GraphTensors,
                   z0: torch.Tensor, gates: torch.Tensor | None = None) -> torch.Tensor:
        """One message-passing round over the augmented edges."""
        msgs = z[:, gt.src, :] * self.edge_weight[layer, gt.rel]
        if gates is not None:
            msgs = msgs * gates[layer][None, :, None]
        agg = torch.zeros_like(z)
        agg = agg.index_add(1, gt.dst, msgs)
        agg = agg + z0
        return self._act(agg @ self.linear_weight[layer] + self.linear_bias[layer])

    def encode(self, queries: torch.Tensor, gt: GraphTensors,
               gates: torch.Tensor | None = None) -> torch.Tensor:
        """Final field (Q, |E|, hidden_dim) after all layers."""
        z0 = self.boundary_field(queries)
        z = z0
        for layer in range(self.n_layers):
            z = self.layer_step(z, layer, gt, z0, gates=gates)
        return z

    def encode_single(self, head: int, relation: int, gt: GraphTensors,
                      gates: torch.Tensor | None = None) -> torch.Tensor:
        return self.encode(torch.tensor([[head, relation]]), gt, gates=gates)[0]


def gradients(loss: torch.Tensor, modules) -> dict[str, torch.Tensor]:
    """Exact reverse-mode derivatives of a scalar loss for every parameter
    of the given module(s); unused parameters get zero gradients."""
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()!r}")
    if isinstance(modules, nn.Module):
        modules = [modules]
    named = [(f"{i}.{name}" if len(modules) > 1 else name, p)
             for i, m in enumerate(modules) for name, p in m.named_parameters()]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {}
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        out[name] = g
    return out
