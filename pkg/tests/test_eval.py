import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from kgcf.data import Triplet, build_graph, candidate_pairs, relation_proportions
from kgcf.embedding import WalkParams, combine, embed_relation
from kgcf.encoder import PairEncoder
from kgcf.errors import DegenerateStatisticError, UndefinedStatisticError
from kgcf.matching import build_table
from kgcf.model import KGCFModel, PairDecoder
from kgcf.ranking import (
    evaluate, filtered_rank, full_filter, rank_with_ties, significance_test,
)
from kgcf.treatment import compute_assignments

from helpers import make_dataset, randomize_output_layer


class FixedModel:
    """Stand-in scorer with a hand-written score row per (anchor, relation)."""

    def __init__(self, n_entities, n_relations, rows):
        self.graph = SimpleNamespace(n_entities=n_entities, n_relations=n_relations)
        self.rows = {k: np.asarray(v, dtype=np.float64) for k, v in rows.items()}

    def score_tails(self, head, relation):
        return self.rows[(head, relation)]

    def score_tails_batch(self, queries):
        return np.stack([self.score_tails(h, r) for h, r in queries])

    def score(self, head, relation, tail):
        return float(self.score_tails(head, relation)[tail])


def test_rank_with_ties_examples():
    allowed = np.ones(3, dtype=bool)
    assert rank_with_ties(np.array([0.95, 0.9, 0.1]), 0, allowed) == 1.0
    assert rank_with_ties(np.array([0.9, 0.95, 0.1]), 0, allowed) == 2.0
    assert rank_with_ties(np.array([0.5, 0.5, 0.1]), 0, allowed) == 1.5


def test_rank_with_ties_all_tied():
    n = 5
    assert rank_with_ties(np.full(n, 0.3), 2, np.ones(n, dtype=bool)) == 1.0 + 0.5 * (n - 1)


def test_rank_monotone_transform_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = rng.random(10)
        allowed = rng.random(10) < 0.8
        e = int(rng.integers(10))
        allowed[e] = True
        a = rank_with_ties(scores, e, allowed)
        b = rank_with_ties(3.0 * scores + 1.0, e, allowed)
        assert a == b


def test_filtered_rank_removes_true_competitors():
    # entity 1 outscores the query tail 2 but is itself a true answer
    model = FixedModel(3, 1, {(0, 0): [0.1, 0.9, 0.5]})
    trip = Triplet(0, 0, 2)
    raw = filtered_rank(model, trip, "tail", frozenset({trip}))
    filt = filtered_rank(model, trip, "tail", frozenset({trip, Triplet(0, 0, 1)}))
    assert raw == 2.0 and filt == 1.0


def test_filtered_rank_head_direction_uses_inverse_relation():
    model = FixedModel(3, 1, {(2, 1): [0.2, 0.7, 0.1]})
    assert filtered_rank(model, Triplet(0, 0, 2), "head", frozenset()) == 2.0
    with pytest.raises(ValueError):
        filtered_rank(model, Triplet(0, 0, 2), "sideways", frozenset())


def test_filtering_monotone_never_worse():
    rng = np.random.default_rng(1)
    model = FixedModel(8, 1, {(0, 0): rng.random(8)})
    trip = Triplet(0, 0, 3)
    small = frozenset({trip})
    big = small | {Triplet(0, 0, e) for e in (1, 5, 6)}
    assert filtered_rank(model, trip, "tail", big) <= filtered_rank(model, trip, "tail", small)


def test_evaluate_hand_example():
    # one test triplet (0, r0, 1): head rank 1, tail rank 2
    model = FixedModel(3, 1, {
        (1, 1): [0.9, 0.0, 0.1],   # head query (t, r^-1): entity 0 on top
        (0, 0): [0.0, 0.5, 0.9],   # tail query: true tail 1 behind entity 2
    })
    report = evaluate(model, [Triplet(0, 0, 1)], frozenset({Triplet(0, 0, 1)}))
    assert report.ranks == [1.0, 2.0]
    assert report.mrr == 0.75
    assert report.mr == 1.5
    assert report.hits == {1: 0.5, 3: 1.0, 10: 1.0}
    assert report.n_queries == 2


def test_evaluate_tie_produces_half_rank():
    model = FixedModel(3, 1, {
        (1, 1): [0.5, 0.0, 0.5],
        (0, 0): [0.0, 0.5, 0.5],
    })
    report = evaluate(model, [Triplet(0, 0, 1)], frozenset({Triplet(0, 0, 1)}))
    assert report.ranks == [1.5, 1.5]
    assert report.mrr == 1.0 / 1.5


def test_evaluate_perfect_model():
    model = FixedModel(3, 1, {
        (1, 1): [1.0, 0.0, 0.0],
        (0, 0): [0.0, 1.0, 0.0],
    })
    report = evaluate(model, [Triplet(0, 0, 1)], frozenset({Triplet(0, 0, 1)}))
    assert report.mrr == 1.0 and report.mr == 1.0 and report.hits[1] == 1.0


def test_evaluate_empty_split_raises():
    model = FixedModel(3, 1, {})
    with pytest.raises(UndefinedStatisticError):
        evaluate(model, [], frozenset())


def test_metrics_report_to_dict():
    model = FixedModel(3, 1, {
        (1, 1): [1.0, 0.0, 0.0],
        (0, 0): [0.0, 1.0, 0.0],
    })
    d = evaluate(model, [Triplet(0, 0, 1)], frozenset()).to_dict(split="test")
    assert d["split"] == "test" and d["mrr"] == 1.0 and d["hits_10"] == 1.0


def real_model(seed=0):
    ds = make_dataset(
        [(0, 0, 1), (1, 0, 2), (2, 0, 0), (2, 0, 3), (3, 1, 4), (4, 1, 0), (1, 1, 3)],
        valid=[(0, 0, 3)], test=[(1, 0, 3), (3, 1, 2)],
    )
    g = build_graph(ds)
    assignments = compute_assignments(g, k=2)
    params = WalkParams(walks_per_node=3, walk_length=10, epochs=1, seed=seed)
    mats = [embed_relation(ds.n_entities, g.undirected_projection(j), d=4, params=params)
            for j in range(ds.n_relations)]
    M = combine(mats, relation_proportions(ds))
    build_table(ds, g, M, assignments, candidate_pairs(ds))
    enc = PairEncoder(ds.n_entities, g.n_relations_aug, hidden_dim=4, n_layers=2, seed=seed)
    dec = randomize_output_layer(PairDecoder(4, hidden_dim=8, seed=seed + 1), seed=seed + 1)
    return ds, KGCFModel(enc, dec, g, assignments)


def brute_metrics(model, triplets, filt):
    """Independent metric computation in plain python. Scores come from the
    same batched pass the evaluator uses; ranks, filtering, and aggregation
    are re-derived from first principles."""
    n_rel = model.graph.n_relations
    queries = []
    for h, r, t in triplets:
        queries.append((t, r + n_rel))
        queries.append((h, r))
    scores = model.score_tails_batch(queries)
    ranks = []
    for i, (h, r, t) in enumerate(triplets):
        for row, direction, query_e in ((scores[2 * i], "head", h),
                                        (scores[2 * i + 1], "tail", t)):
            sq = row[query_e]
            greater = ties = 0
            for e in range(model.graph.n_entities):
                if e == query_e:
                    continue
                if direction == "head" and Triplet(e, r, t) in filt:
                    continue
                if direction == "tail" and Triplet(h, r, e) in filt:
                    continue
                if row[e] > sq:
                    greater += 1
                elif row[e] == sq:
                    ties += 1
            ranks.append(1.0 + greater + 0.5 * ties)
    mrr = sum(1.0 / r for r in ranks) / len(ranks)
    mr = sum(ranks) / len(ranks)
    hits = {k: sum(r <= k for r in ranks) / len(ranks) for k in (1, 3, 10)}
    return ranks, mrr, mr, hits


def test_evaluate_matches_brute_force_on_real_model():
    ds, model = real_model()
    filt = full_filter(ds)
    report = evaluate(model, ds.test, filt)
    ranks, mrr, mr, hits = brute_metrics(model, ds.test, filt)
    assert report.ranks == ranks
    assert math.isclose(report.mrr, mrr, rel_tol=1e-12)
    assert math.isclose(report.mr, mr, rel_tol=1e-12)
    assert report.hits == hits


def test_evaluate_matches_brute_force_random_scores():
    rng = np.random.default_rng(7)
    for trial in range(10):
        n = int(rng.integers(4, 20))
        rows = {}
        trips = []
        filt = set()
        for _ in range(6):
            h, t = int(rng.integers(n)), int(rng.integers(n))
            trips.append(Triplet(h, 0, t))
            filt.add(trips[-1])
        for _ in range(4):
            filt.add(Triplet(int(rng.integers(n)), 0, int(rng.integers(n))))
        for h, r, t in trips:
            # coarse grid so score ties actually occur
            rows.setdefault((h, 0), rng.integers(4, size=n) / 4.0)
            rows.setdefault((t, 1), rng.integers(4, size=n) / 4.0)
        model = FixedModel(n, 1, rows)
        report = evaluate(model, trips, frozenset(filt))
        ranks, mrr, mr, hits = brute_metrics(model, trips, frozenset(filt))
        assert report.ranks == ranks
        assert math.isclose(report.mrr, mrr, rel_tol=1e-12)
        assert math.isclose(report.mr, mr, rel_tol=1e-12)
        assert report.hits == hits


def test_full_filter_unions_splits():
    ds = make_dataset([(0, 0, 1)], valid=[(1, 0, 2)], test=[(2, 0, 0)])
    assert full_filter(ds) == {Triplet(0, 0, 1), Triplet(1, 0, 2), Triplet(2, 0, 0)}


def test_significance_identical_lists():
    assert significance_test([0.5, 1.0, 0.25], [0.5, 1.0, 0.25]) == 1.0


def test_significance_zero_variance_difference():
    with pytest.raises(DegenerateStatisticError):
        significance_test([1.0, 1.0, 1.0], [0.5, 0.5, 0.5])


def test_significance_hand_pairs_closed_form():
    a = [1.0, 0.5, 1.0]
    b = [0.5, 0.5, 0.5]
    # differences (0.5, 0, 0.5): t = mean / (sd / sqrt(3)) = 2 with 2 dof
    expected = 2.0 * stats.t.sf(2.0, df=2)
    assert math.isclose(significance_test(a, b), expected, rel_tol=1e-12)
    assert math.isclose(significance_test(a, b), significance_test(b, a), rel_tol=1e-12)


def test_significance_input_validation():
    with pytest.raises(ValueError):
        significance_test([1.0], [0.5])
    with pytest.raises(ValueError):
        significance_test([1.0, 0.5], [0.5])
