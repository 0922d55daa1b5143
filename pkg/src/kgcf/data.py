"""Knowledge-graph data model: triple files, vocabularies, relation views.

Triple files are UTF-8 text with one fact per line, three tab-separated
fields ``head<TAB>relation<TAB>tail``. Entities and relations are indexed
by first appearance (train file first, then valid, then test) so loading
is deterministic without any sorting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, ParseError


class Triplet(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class LoadReport:
    lines: dict[str, int]
    duplicates: dict[str, int]
    kept: dict[str, int]
    n_entities: int
    n_relations: int

    def to_text(self) -> str:
        out = ["split\tlines\tduplicates\tkept"]
        for split in ("train", "valid", "test"):
            out.append(
                f"{split}\t{self.lines[split]}\t{self.duplicates[split]}\t{self.kept[split]}"
            )
        out.append(f"entities\t{self.n_entities}")
        out.append(f"relations\t{self.n_relations}")
        return "\n".join(out) + "\n"


@dataclass
class Dataset:
    train: list[Triplet]
    valid: list[Triplet]
    test: list[Triplet]
    entity_names: list[str]
    relation_names: list[str]
    entity_index: dict[str, int] = field(repr=False, default_factory=dict)
    relation_index: dict[str, int] = field(repr=False, default_factory=dict)
    load_report: LoadReport | None = None

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def split(self, name: str) -> list[Triplet]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None

    def to_lines(self, split: str) -> list[str]:
        """String form of a split; round-trips the deduplicated input lines."""
        return [
            f"{self.entity_names[h]}\t{self.relation_names[r]}\t{self.entity_names[t]}"
            for h, r, t in self.split(split)
        ]


def _read_triples(path, entity_index, relation_index, entity_names, relation_names):
    triples: list[Triplet] = []
    seen: set[Triplet] = set()
    n_lines = 0
    n_dup = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            n_lines += 1
            h_s, r_s, t_s = fields
            if h_s not in entity_index:
                entity_index[h_s] = len(entity_names)
                entity_names.append(h_s)
            if t_s not in entity_index:
                entity_index[t_s] = len(entity_names)
                entity_names.append(t_s)
            if r_s not in relation_index:
                relation_index[r_s] = len(relation_names)
                relation_names.append(r_s)
            trip = Triplet(entity_index[h_s], relation_index[r_s], entity_index[t_s])
            if trip in seen:
                n_dup += 1
                continue
            seen.add(trip)
            triples.append(trip)
    return triples, n_lines, n_dup


def load_dataset(train_path, valid_path, test_path) -> Dataset:
    """Load the three split files into an index-form dataset.

    Duplicate triplets within a split are dropped (counted in the load
    report); an empty train split is a configuration error.
    """
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}
    entity_names: list[str] = []
    relation_names: list[str] = []

    lines, dups, kept = {}, {}, {}
    splits = {}
    for name, path in (("train", train_path), ("valid", valid_path), ("test", test_path)):
        triples, n_lines, n_dup = _read_triples(
            path, entity_index, relation_index, entity_names, relation_names
        )
        splits[name] = triples
        lines[name], dups[name], kept[name] = n_lines, n_dup, len(triples)

    if not splits["train"]:
        raise ConfigError(f"train split {train_path!r} contains no triplets")

    report = LoadReport(lines, dups, kept, len(entity_names), len(relation_names))
    return Dataset(
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        entity_names=entity_names,
        relation_names=relation_names,
        entity_index=entity_index,
        relation_index=relation_index,
        load_report=report,
    )


class RelationGraph:
    """Per-relation adjacency views over the train split, with optional
    inverse-relation augmentation.

    Relation ``j + n_relations`` holds exactly the reversed edges of
    relation ``j``. Edge arrays are ordered: original train edges in train
    order, then their inverses in the same order, so construction is
    deterministic. Immutable after construction.
    """

    def __init__(self, dataset: Dataset, include_inverses: bool = True):
        self.n_entities = dataset.n_entities
        self.n_relations = dataset.n_relations
        self.include_inverses = include_inverses
        self.n_relations_aug = 2 * self.n_relations if include_inverses else self.n_relations

        train = dataset.train
        src = [t.head for t in train]
        rel = [t.relation for t in train]
        dst = [t.tail for t in train]
        if include_inverses:
            src += [t.tail for t in train]
            rel += [t.relation + self.n_relations for t in train]
            dst += [t.head for t in train]
        self.edge_src = np.asarray(src, dtype=np.int64)
        self.edge_rel = np.asarray(rel, dtype=np.int64)
        self.edge_dst = np.asarray(dst, dtype=np.int64)

        self._train_facts = frozenset(train)
        self._in_edges: list[list[int]] = [[] for _ in range(self.n_entities)]
        for idx in range(len(self.edge_dst)):
            self._in_edges[self.edge_dst[idx]].append(idx)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def edges_of(self, relation: int) -> list[tuple[int, int]]:
        mask = self.edge_rel == relation
        return list(zip(self.edge_src[mask].tolist(), self.edge_dst[mask].tolist()))

    def in_edges(self, entity: int) -> list[tuple[int, int, int]]:
        """All augmented edges (h', r', entity) ending at ``entity``."""
        return [
            (int(self.edge_src[i]), int(self.edge_rel[i]), int(self.edge_dst[i]))
            for i in self._in_edges[entity]
        ]

    def base_relation(self, relation: int) -> int:
        return relation - self.n_relations if relation >= self.n_relations else relation

    def has_fact(self, head: int, relation: int, tail: int) -> bool:
        """Membership of (h, r, t) in the train facts; inverse-relation
        indices are mapped back to the original direction."""
        if relation >= self.n_relations:
            head, relation, tail = tail, relation - self.n_relations, head
        return Triplet(head, relation, tail) in self._train_facts

    def undirected_projection(self, relation: int) -> list[tuple[int, int]]:
        """Deduplicated undirected edges of one original relation view,
        self-loops removed. Shared by the treatment and embedding stages."""
        seen = set()
        for h, t in self.edges_of(relation):
            if h == t:
                continue
            e = (h, t) if h < t else (t, h)
            seen.add(e)
        return sorted(seen)


def build_graph(dataset: Dataset, include_inverses: bool = True) -> RelationGraph:
    return RelationGraph(dataset, include_inverses=include_inverses)


def relation_proportions(dataset: Dataset) -> np.ndarray:
    """Fraction of train triplets carried by each original relation."""
    if not dataset.train:
        raise ConfigError("train split is empty")
    counts = np.zeros(dataset.n_relations, dtype=np.float64)
    for t in dataset.train:
        counts[t.relation] += 1.0
    return counts / counts.sum()


def candidate_pairs(dataset: Dataset, scope: str = "train-only") -> set[tuple[int, int]]:
    """Ordered entity pairs appearing in the chosen scope, with relation
    identity and triplet validity erased."""
    if scope == "train-only":
        splits: Iterable[list[Triplet]] = (dataset.train,)
    elif scope == "all-splits":
        splits = (dataset.train, dataset.valid, dataset.test)
    else:
        raise ConfigError(f"unknown candidate scope {scope!r}")
    return {(t.head, t.tail) for split in splits for t in split}
