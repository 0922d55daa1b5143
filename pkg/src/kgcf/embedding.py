"""Random-walk entity embeddings for counterfactual matching.

One embedding matrix is trained per original relation on the undirected
projection of its view (biased second-order walks + skip-gram with
negative sampling), then the matrices are combined weighted by each
relation's share of the train triplets. The combined matrix is used only
for nearest-neighbour matching and is frozen afterwards.

The update loop is single-threaded and driven by one seeded generator, so
a given seed reproduces the matrix bitwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class WalkParams:
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    return_p: float = 1.0
    inout_q: float = 1.0
    negatives: int = 5
    epochs: int = 2
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ("walks_per_node", "walk_length", "window", "return_p",
                     "inout_q", "negatives", "epochs", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"WalkParams.{name} must be positive")


def _generate_walks(adj: dict[int, list[int]], nbr_sets: dict[int, set[int]], params: WalkParams, rng) -> list[list[int]]:
    walks = []
    first_order = params.return_p == 1.0 and params.inout_q == 1.0
    for start in sorted(adj):
        for _ in range(params.walks_per_node):
            walk = [start]
            while len(walk) < params.walk_length:
                cur = walk[-1]
                nbrs = adj[cur]
                if not nbrs:
                    break
                if first_order or len(walk) == 1:
                    nxt = nbrs[rng.integers(len(nbrs))]
                else:
                    prev = walk[-2]
                    w = np.empty(len(nbrs))
                    prev_nbrs = nbr_sets[prev]
                    for i, x in enumerate(nbrs):
                        if x == prev:
                            w[i] = 1.0 / params.return_p
                        elif x in prev_nbrs:
                            w[i] = 1.0
                        else:
                            w[i] = 1.0 / params.inout_q
                    w /= w.sum()
                    nxt = nbrs[int(rng.choice(len(nbrs), p=w))]
                walk.append(nxt)
            walks.append(walk)
    return walks


def embed_relation(n_entities: int, edges, d: int, params: WalkParams) -> np.ndarray:
    """Skip-gram embedding of one relation view.

    ``edges`` is the undirected simple projection of the view. Entities
    with no edges keep an all-zero row; an empty view yields the zero
    matrix.
    """
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    M = np.zeros((n_entities, d), dtype=np.float64)
    adj: dict[int, list[int]] = {}
    for u, v in edges:
        if u == v:
            continue
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    if not adj:
        return M
    adj = {u: sorted(set(nbrs)) for u, nbrs in adj.items()}
    nbr_sets = {u: set(nbrs) for u, nbrs in adj.items()}

    rng = np.random.default_rng(params.seed)
    walks = _generate_walks(adj, nbr_sets, params, rng)

    # Unigram^0.75 negative-sampling distribution over corpus occurrences.
    counts = np.zeros(n_entities, dtype=np.float64)
    for walk in walks:
        for node in walk:
            counts[node] += 1.0
    neg_prob = counts ** 0.75
    neg_cdf = np.cumsum(neg_prob / neg_prob.sum())

    # Center and context share one matrix: the rows are only ever used to
    # measure graph proximity, and a shared matrix makes co-occurring
    # (adjacent) entities embed close directly, instead of pulling
    # together entities that merely share neighbourhoods.
    nodes = sorted(adj)
    W = np.zeros((n_entities, d))
    W[nodes] = rng.uniform(-0.5 / d, 0.5 / d, size=(len(nodes), d))

    total_pairs = params.epochs * sum(
        sum(min(i, params.window) + min(len(w) - 1 - i, params.window) for i in range(len(w)))
        for w in walks
    )
    processed = 0
    lr0 = params.learning_rate
    for _ in range(params.epochs):
        for walk in walks:
            for i, center in enumerate(walk):
                lo = max(0, i - params.window)
                hi = min(len(walk), i + params.window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = walk[j]
                    lr = lr0 * max(1e-4, 1.0 - processed / max(total_pairs, 1))
                    processed += 1
                    negs = np.searchsorted(neg_cdf, rng.random(params.negatives))
                    targets = np.concatenate(([context], negs))
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    vin = W[center].copy()
                    vout = W[targets].copy()
                    score = 1.0 / (1.0 + np.exp(-vout @ vin))
                    g = (labels - score) * lr
                    W[targets] += g[:, None] * vin
                    W[center] += g @ vout
    M[nodes] = W[nodes]
    return M


def combine(matrices: list[np.ndarray], proportions: np.ndarray) -> np.ndarray:
    """Proportion-weighted sum of per-relation matrices."""
    if len(matrices) != len(proportions):
        raise ShapeError(f"{len(matrices)} matrices vs {len(proportions)} proportions")
    shape = matrices[0].shape
    for m in matrices:
        if m.shape != shape:
            raise ShapeError(f"matrix shapes differ: {m.shape} vs {shape}")
    out = np.zeros(shape, dtype=np.float64)
    for psi, m in zip(proportions, matrices):
        out += psi * m
    return out


def save_embedding(M: np.ndarray, path) -> None:
    """Text form: header ``|E| d`` then one row of reals per entity."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(format(x, ".17g") for x in row) + "\n")


def load_embedding(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        n, d = map(int, fh.readline().split())
        M = np.empty((n, d), dtype=np.float64)
        for i in range(n):
            M[i] = np.array(fh.readline().split(), dtype=np.float64)
    return M
