import numpy as np
import pytest
import torch

from kgcf.data import Triplet, build_graph, candidate_pairs, relation_proportions
from kgcf.embedding import WalkParams, combine, embed_relation
from kgcf.encoder import PairEncoder
from kgcf.interpret import (
    EdgeImportance, edge_importance, format_interpretation, gated_prediction, top_paths,
)
from kgcf.matching import build_table
from kgcf.model import KGCFModel, PairDecoder
from kgcf.treatment import compute_assignments

from helpers import make_dataset, randomize_output_layer


def fitted(seed=0, train=None):
    train = train or [(0, 0, 1), (1, 0, 2), (2, 0, 0), (2, 0, 3), (3, 1, 4), (1, 1, 3)]
    ds = make_dataset(train)
    g = build_graph(ds)
    assignments = compute_assignments(g, k=2)
    params = WalkParams(walks_per_node=3, walk_length=10, epochs=1, seed=seed)
    mats = [embed_relation(ds.n_entities, g.undirected_projection(j), d=4, params=params)
            for j in range(ds.n_relations)]
    M = combine(mats, relation_proportions(ds))
    table = build_table(ds, g, M, assignments, candidate_pairs(ds))
    enc = PairEncoder(ds.n_entities, g.n_relations_aug, hidden_dim=4, n_layers=3, seed=seed)
    dec = randomize_output_layer(PairDecoder(4, hidden_dim=8, seed=seed + 1), seed=seed + 1)
    return ds, table, KGCFModel(enc, dec, g, assignments)


def test_edge_importance_accumulates_duplicate_edges():
    imp = EdgeImportance([(0, 0, 1), (0, 0, 1), (1, 0, 2)], np.array([0.25, 0.5, 1.0]))
    assert imp.weight((0, 0, 1)) == 0.75
    assert imp.weight((1, 0, 2)) == 1.0
    assert imp.weight((5, 0, 6)) == 0.0


def test_gate_neutrality_bitwise():
    ds, table, model = fitted()
    trip = ds.train[1]
    ungated = gated_prediction(model, trip)
    ones = torch.ones(model.encoder.n_layers, model.gt.n_edges, dtype=torch.float64)
    assert gated_prediction(model, trip, gates=ones).item() == ungated.item()


def test_zero_decoder_gives_zero_importance():
    ds, table, model = fitted()
    with torch.no_grad():
        for p in model.decoder.parameters():
            p.zero_()
    imp = edge_importance(model, ds.train[0])
    assert not imp.weights.any()


def test_unreachable_edges_have_zero_importance():
    # second component 4 -r1-> 5 cannot influence a query inside 0..3
    ds, table, model = fitted(train=[(0, 0, 1), (1, 0, 2), (2, 0, 3), (4, 1, 5)])
    imp = edge_importance(model, Triplet(0, 0, 2))
    n_rel = model.graph.n_relations
    assert imp.weight((4, 1, 5)) == 0.0
    assert imp.weight((5, 1 + n_rel, 4)) == 0.0


def test_edge_importance_matches_finite_differences():
    ds, table, model = fitted(seed=2)
    trip = ds.train[2]
    imp = edge_importance(model, trip)
    L = model.encoder.n_layers
    eps = 1e-6
    rng = np.random.default_rng(0)
    for idx in rng.choice(model.gt.n_edges, size=4, replace=False):
        fd_total = 0.0
        for layer in range(L):
            gates = torch.ones(L, model.gt.n_edges, dtype=torch.float64)
            gates[layer, idx] = 1.0 + eps
            up = gated_prediction(model, trip, gates=gates).item()
            gates[layer, idx] = 1.0 - eps
            down = gated_prediction(model, trip, gates=gates).item()
            fd_total += (up - down) / (2 * eps)
        ad = float(imp.weights[idx])
        assert abs(ad - fd_total) / max(abs(ad), abs(fd_total), 1e-6) < 1e-4


def test_top_paths_two_route_example():
    imp = EdgeImportance([(0, 0, 1), (1, 0, 2), (0, 1, 2)], np.array([0.3, 0.2, 0.4]))
    paths = top_paths(imp, 0, 2, k=2, max_len=3, beam=10)
    assert [p.weight for p in paths] == [0.5, 0.4]
    assert paths[0].edges == ((0, 0, 1), (1, 0, 2))
    assert paths[1].edges == (((0, 1, 2)),)


def test_top_paths_same_endpoints_no_cycle_empty():
    imp = EdgeImportance([(0, 0, 1)], np.array([1.0]))
    assert top_paths(imp, 0, 0, k=3, max_len=4, beam=10) == []


def test_top_paths_cycle_back_to_head():
    imp = EdgeImportance([(0, 0, 1), (1, 0, 0)], np.array([1.0, 2.0]))
    paths = top_paths(imp, 0, 0, k=1, max_len=2, beam=5)
    assert paths[0].edges == ((0, 0, 1), (1, 0, 0))
    assert paths[0].weight == 3.0


def test_top_paths_argument_validation():
    imp = EdgeImportance([(0, 0, 1)], np.array([1.0]))
    with pytest.raises(ValueError):
        top_paths(imp, 0, 1, k=0, max_len=2)
    with pytest.raises(ValueError):
        top_paths(imp, 0, 1, k=5, max_len=2, beam=3)


def enumerate_paths(imp, head, tail, max_len):
    """Exhaustive DFS over edge sequences, the oracle for the beam search."""
    out = {}
    for edge, w in imp.items():
        out.setdefault(edge[0], []).append((edge, w))
    results = []

    def walk(end, path, weight):
        if len(path) >= max_len:
            return
        for edge, w in out.get(end, ()):
            nxt = path + (edge,)
            if edge[2] == tail:
                results.append((weight + w, nxt))
            walk(edge[2], nxt, weight + w)

    walk(head, (), 0.0)
    results.sort(key=lambda r: (-r[0], r[1]))
    return results


def test_beam_search_matches_exhaustive_enumeration():
    rng = np.random.default_rng(3)
    for trial in range(10):
        n = 6
        edges = sorted({(int(a), 0, int(b))
                        for a, b in rng.integers(n, size=(10, 2)) if a != b})
        weights = rng.normal(size=len(edges))
        imp = EdgeImportance(edges, weights)
        exhaustive = enumerate_paths(imp, 0, n - 1, max_len=4)
        beam = max(200, len(exhaustive) + 1)
        got = top_paths(imp, 0, n - 1, k=len(exhaustive) + 1, max_len=4, beam=beam + 1)
        assert [(p.weight, p.edges) for p in got] == exhaustive


def test_path_weight_is_edge_weight_sum():
    ds, table, model = fitted(seed=1)
    trip = ds.train[0]
    imp = edge_importance(model, trip)
    for p in top_paths(imp, trip.head, trip.tail, k=5, max_len=3, beam=50):
        assert abs(p.weight - sum(imp.weight(e) for e in p.edges)) <= 1e-12


def test_format_interpretation_layout():
    ds, table, model = fitted()
    trip = ds.train[0]
    imp = edge_importance(model, trip)
    paths = top_paths(imp, trip.head, trip.tail, k=3, max_len=3, beam=20)
    text = format_interpretation(ds, model, trip, paths, table=table)
    lines = text.splitlines()
    assert lines[0].startswith("query\t(e0, r0, e1) [TF=")
    rec = table[trip]
    body = lines[2:] if rec.matched else lines[1:]
    if rec.matched:
        assert lines[1].startswith("SoCR\t")
    assert len(body) == len(paths)
    for line, p in zip(body, paths):
        assert line.split("\t")[0] == f"{p.weight:.6g}"
        assert line.count("∧") == len(p.edges) - 1


def test_format_interpretation_inverse_relation_name():
    ds, table, model = fitted(train=[(0, 0, 1), (1, 0, 2)])
    n_rel = ds.n_relations
    trip = Triplet(2, 0, 0)
    imp = edge_importance(model, Triplet(2, n_rel, 0))
    paths = top_paths(imp, 2, 0, k=2, max_len=3, beam=20)
    text = format_interpretation(ds, model, Triplet(2, n_rel, 0), paths)
    assert "r0^-1" in text
