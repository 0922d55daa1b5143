"""Shared test utilities: in-memory datasets and the synthetic
compositional knowledge graph used for learning checks."""
from __future__ import annotations

import numpy as np
import torch

from kgcf.data import Dataset, LoadReport, Triplet


def randomize_output_layer(decoder, seed=0):
    """Give a fresh decoder a non-trivial output layer (it initializes to
    zero so untrained models are uninformative)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        decoder.w2.uniform_(-0.5, 0.5, generator=gen)
        decoder.b2.uniform_(-0.5, 0.5, generator=gen)
    return decoder


def make_dataset(train, valid=(), test=(), n_entities=None, n_relations=None) -> Dataset:
    """Dataset straight from integer triplets, entity names e0..eN."""
    trips = {
        "train": [Triplet(*t) for t in train],
        "valid": [Triplet(*t) for t in valid],
        "test": [Triplet(*t) for t in test],
    }
    all_t = trips["train"] + trips["valid"] + trips["test"]
    if n_entities is None:
        n_entities = max(max(t.head, t.tail) for t in all_t) + 1
    if n_relations is None:
        n_relations = max(t.relation for t in all_t) + 1
    entity_names = [f"e{i}" for i in range(n_entities)]
    relation_names = [f"r{j}" for j in range(n_relations)]
    return Dataset(
        train=trips["train"], valid=trips["valid"], test=trips["test"],
        entity_names=entity_names, relation_names=relation_names,
        entity_index={s: i for i, s in enumerate(entity_names)},
        relation_index={s: i for i, s in enumerate(relation_names)},
    )


def write_split_files(tmp_path, dataset: Dataset):
    paths = []
    for split in ("train", "valid", "test"):
        p = tmp_path / f"{split}.txt"
        p.write_text("".join(line + "\n" for line in dataset.to_lines(split)), encoding="utf-8")
        paths.append(str(p))
    return paths


def compositional_kg(seed: int, n_entities: int = 100, n_r1: int = 150, n_r2: int = 150) -> Dataset:
    """r3 is planted as the composition r1 then r2; r3 facts are split
    80/10/10 while all r1/r2 edges stay in train."""
    rng = np.random.default_rng(seed)

    def sample_edges(n):
        edges = set()
        while len(edges) < n:
            h, t = rng.integers(n_entities, size=2)
            if h != t:
                edges.add((int(h), int(t)))
        return sorted(edges)

    r1 = sample_edges(n_r1)
    r2 = sample_edges(n_r2)
    mid_out = {}
    for b, c in r2:
        mid_out.setdefault(b, []).append(c)
    r3 = sorted({(a, c) for a, b in r1 for c in mid_out.get(b, ()) if a != c})

    order = rng.permutation(len(r3))
    n_valid = max(1, len(r3) // 10)
    n_test = max(1, len(r3) // 10)
    valid_idx = order[:n_valid]
    test_idx = order[n_valid:n_valid + n_test]
    train_idx = order[n_valid + n_test:]

    train = [(h, 0, t) for h, t in r1] + [(h, 1, t) for h, t in r2]
    train += [(r3[i][0], 2, r3[i][1]) for i in sorted(train_idx)]
    valid = [(r3[i][0], 2, r3[i][1]) for i in sorted(valid_idx)]
    test = [(r3[i][0], 2, r3[i][1]) for i in sorted(test_idx)]
    return make_dataset(train, valid, test, n_entities=n_entities, n_relations=3)
