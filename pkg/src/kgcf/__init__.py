"""Counterfactual-relation augmentation for knowledge graph completion."""

from .data import Dataset, RelationGraph, Triplet, build_graph, candidate_pairs, load_dataset, relation_proportions
from .matching import CounterfactualRecord, TreatmentTable, build_table, find_substitute, pair_distance
from .model import KGCFModel, PairDecoder, PairEncoder, TrainConfig, estimate_ate, train
from .ranking import MetricsReport, evaluate, filtered_rank, significance_test
from .treatment import ClusterAssignment, cluster, compute_assignments, factual_treatment, kcore_surviving

__all__ = [
    "Dataset", "RelationGraph", "Triplet", "build_graph", "candidate_pairs",
    "load_dataset", "relation_proportions", "CounterfactualRecord",
    "TreatmentTable", "build_table", "find_substitute", "pair_distance",
    "KGCFModel", "PairDecoder", "PairEncoder", "TrainConfig", "estimate_ate",
    "train", "MetricsReport", "evaluate", "filtered_rank", "significance_test",
    "ClusterAssignment", "cluster", "compute_assignments", "factual_treatment",
    "kcore_surviving",
]
