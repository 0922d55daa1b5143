"""Decoder, losses, negative sampling, the training loop, and checkpoints.

The decoder is a two-layer MLP over the concatenation of a pair
representation and one treatment bit. Each training batch is scored twice
through the same decoder: once with factual treatment bits and once with
counterfactual bits from the prepared table, and the total loss combines
the factual likelihood, the weighted counterfactual likelihood, and a
discrepancy penalty between the two hidden-activation batches.
"""
from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import Dataset, RelationGraph, Triplet
from .encoder import GraphTensors, PairEncoder
from .errors import CheckpointError, NumericError, ShapeError, UndefinedStatisticError
from .matching import TreatmentTable
from .treatment import ClusterAssignment

PROB_EPS = 1e-12


class PairDecoder(nn.Module):
    """MLP over [pair representation, treatment bit] -> probability.

    The output layer starts at zero, so an untrained decoder scores every
    pair exactly 0.5 (uninformative) instead of leaking arbitrary
    init-dependent rankings; it still trains normally, the hidden layer
    picks up gradient as soon as the output weights move.
    """

    def __init__(self, rep_dim: int, hidden_dim: int = 64, seed: int = 0):
        super().__init__()
        self.rep_dim = rep_dim
        self.hidden_dim = hidden_dim
        gen = torch.Generator().manual_seed(seed)

        def init(fan_in, *shape):
            t = torch.empty(*shape, dtype=torch.float64)
            t.uniform_(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), generator=gen)
            return nn.Parameter(t)

        self.w1 = init(rep_dim + 1, rep_dim + 1, hidden_dim)
        self.b1 = init(rep_dim + 1, hidden_dim)
        self.w2 = nn.Parameter(torch.zeros(hidden_dim, 1, dtype=torch.float64))
        self.b2 = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, z: torch.Tensor, treatment: torch.Tensor):
        """Probability in (0, 1) plus the hidden ReLU activations."""
        if z.shape[-1] != self.rep_dim:
            raise ShapeError(f"pair representation has {z.shape[-1]} entries, expected {self.rep_dim}")
        x = torch.cat([z, treatment.to(torch.float64).unsqueeze(-1)], dim=-1)
        hidden = torch.relu(x @ self.w1 + self.b1)
        logit = (hidden @ self.w2 + self.b2).squeeze(-1)
        return torch.sigmoid(logit), hidden


def decode(z: torch.Tensor, treatment, decoder: PairDecoder):
    t = torch.as_tensor(treatment, dtype=torch.float64)
    return decoder(z, t)


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def factual_loss(pos_p: torch.Tensor, neg_p: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of positives and of rejecting negatives,
    averaged over the positives in the batch."""
    pos_term = -torch.log(_clamp(pos_p))
    neg_term = -torch.log(1.0 - _clamp(neg_p)).mean(dim=-1)
    return (pos_term + neg_term).mean()


def counterfactual_loss(pos_p: torch.Tensor, pos_target: torch.Tensor,
                        neg_p: torch.Tensor) -> torch.Tensor:
    """Same form as the factual loss, but the positive-direction target is
    the record's counterfactual outcome bit."""
    p = _clamp(pos_p)
    pos_term = -(pos_target * torch.log(p) + (1.0 - pos_target) * torch.log(1.0 - p))
    neg_term = -torch.log(1.0 - _clamp(neg_p)).mean(dim=-1)
    return (pos_term + neg_term).mean()


def discrepancy_loss(hidden_f: torch.Tensor, hidden_cf: torch.Tensor,
                     kind: str = "frobenius") -> torch.Tensor:
    """Distance between the factual and counterfactual hidden-activation
    batches. Default is the Frobenius norm over the batch size; "kl"
    compares softmax-normalized rows instead."""
    if hidden_f.shape != hidden_cf.shape:
        raise ShapeError(f"activation shapes differ: {tuple(hidden_f.shape)} vs {tuple(hidden_cf.shape)}")
    n = hidden_f.shape[0]
    if kind == "frobenius":
        return torch.linalg.matrix_norm(hidden_f - hidden_cf, ord="fro") / n
    if kind == "kl":
        p = torch.softmax(hidden_f, dim=-1).clamp_min(PROB_EPS)
        q = torch.softmax(hidden_cf, dim=-1).clamp_min(PROB_EPS)
        return (p * (p / q).log()).sum(dim=-1).mean()
    raise ValueError(f"unknown discrepancy kind {kind!r}")


@dataclass
class LossBreakdown:
    l_f: float
    l_cf: float
    l_disc: float
    total: float


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.01
    learning_rate: float = 5e-3
    batch_size: int = 32
    epochs: int = 20
    negatives: int = 32
    seed: int = 0
    disc: str = "frobenius"
    # Test hook for the factual-only reduction check: feed a zero
    # treatment column to the decoder everywhere.
    zero_treatment: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")


def sample_negatives(positive: Triplet, n: int, rng: np.random.Generator,
                     n_entities: int) -> list[Triplet]:
    """PCA-style negatives: each replaces exactly one entity slot (chosen
    uniformly) with a uniformly random other entity."""
    if n_entities < 2:
        raise ValueError("need at least 2 entities to corrupt a triplet")
    h, r, t = positive
    out = []
    for _ in range(n):
        slot = int(rng.integers(2))
        orig = h if slot == 0 else t
        e = int(rng.integers(n_entities - 1))
        if e >= orig:
            e += 1
        out.append(Triplet(e, r, t) if slot == 0 else Triplet(h, r, e))
    return out


class KGCFModel:
    """Trained encoder + decoder bound to a train graph and the per-relation
    treatment assignments; read-only during scoring."""

    def __init__(self, encoder: PairEncoder, decoder: PairDecoder,
                 graph: RelationGraph, assignments: list[ClusterAssignment]):
        self.encoder = encoder
        self.decoder = decoder
        self.graph = graph
        self.gt = GraphTensors(graph)
        self.assignments = assignments
        self._labels = [a.label_array(graph.n_entities) for a in assignments]
        self.edge_index = {
            (int(s), int(r), int(d)): i
            for i, (s, r, d) in enumerate(zip(graph.edge_src, graph.edge_rel, graph.edge_dst))
        }

    def factual_bit(self, h: int, r: int, t: int) -> int:
        labels = self._labels[self.graph.base_relation(r)]
        return int(labels[h] == labels[t])

    def anchor_bits(self, anchor: int, relation: int) -> np.ndarray:
        """Factual treatment bits of (anchor, e) for every entity e under
        the relation's base assignment (the same-label test is symmetric)."""
        labels = self._labels[self.graph.base_relation(relation)]
        return (labels == labels[anchor]).astype(np.float64)

    def score_tails(self, head: int, relation: int) -> np.ndarray:
        """Factual probability of every tail for the query (head, relation).
        Head-direction queries are expressed with the inverse relation."""
        with torch.no_grad():
            z = self.encoder.encode_single(head, relation, self.gt)
            bits = torch.from_numpy(self.anchor_bits(head, relation))
            p, _ = self.decoder(z, bits)
        return p.numpy()

    def score_tails_batch(self, queries: list[tuple[int, int]]) -> np.ndarray:
        with torch.no_grad():
            q = torch.tensor(queries, dtype=torch.int64)
            z = self.encoder.encode(q, self.gt)
            bits = torch.from_numpy(np.stack([self.anchor_bits(h, r) for h, r in queries]))
            p, _ = self.decoder(z, bits)
        return p.numpy()

    def score(self, head: int, relation: int, tail: int) -> float:
        return float(self.score_tails(head, relation)[tail])


def _inverse_relation(r: int, n_relations: int) -> int:
    return r + n_relations if r < n_relations else r - n_relations


@dataclass
class _Batch:
    queries: torch.Tensor          # (2B, 2) of (anchor, relation)
    pos_rows: tuple[torch.Tensor, torch.Tensor]
    neg_rows: tuple[torch.Tensor, torch.Tensor]
    tf_pos: torch.Tensor
    tcf_pos: torch.Tensor
    acf_pos: torch.Tensor
    tf_neg: torch.Tensor           # negatives keep T^CF = T^F
    drop_edges: torch.Tensor       # graph edges masked out for this batch


def _make_batch(positives: list[Triplet], negatives: list[list[Triplet]],
                table: TreatmentTable, model: KGCFModel) -> _Batch:
    """Tensorize one minibatch. Query 2i is (h, r) of positive i and query
    2i+1 is (t, r^-1); a tail-corrupted negative is scored from the former
    field and a head-corrupted one from the latter.

    Each positive's own graph edge (and its reverse) is marked for removal
    from message passing: a query must not see its answer as a direct
    edge, or the encoder learns that shortcut instead of paths."""
    n_rel = model.graph.n_relations
    b = len(positives)
    queries = np.empty((2 * b, 2), dtype=np.int64)
    pos_q = np.empty(b, dtype=np.int64)
    pos_e = np.empty(b, dtype=np.int64)
    tf_pos = np.empty(b)
    tcf_pos = np.empty(b)
    acf_pos = np.empty(b)
    n = len(negatives[0]) if negatives else 0
    neg_q = np.empty((b, n), dtype=np.int64)
    neg_e = np.empty((b, n), dtype=np.int64)
    tf_neg = np.empty((b, n))

    half = model.gt.n_edges // 2
    drop = set()
    for pos in positives:
        idx = model.edge_index.get(tuple(pos))
        if idx is not None:
            drop.add(idx)
            drop.add(idx + half if idx < half else idx - half)

    for i, pos in enumerate(positives):
        h, r, t = pos
        queries[2 * i] = (h, r)
        queries[2 * i + 1] = (t, _inverse_relation(r, n_rel))
        pos_q[i], pos_e[i] = 2 * i, t
        rec = table[pos]
        tf_pos[i], tcf_pos[i], acf_pos[i] = rec.t_factual, rec.t_counterfactual, rec.a_counterfactual
        for j, neg in enumerate(negatives[i]):
            if neg.head == h:           # tail corrupted
                neg_q[i, j], neg_e[i, j] = 2 * i, neg.tail
            else:                       # head corrupted
                neg_q[i, j], neg_e[i, j] = 2 * i + 1, neg.head
            tf_neg[i, j] = model.factual_bit(neg.head, neg.relation, neg.tail)

    return _Batch(
        queries=torch.from_numpy(queries),
        pos_rows=(torch.from_numpy(pos_q), torch.from_numpy(pos_e)),
        neg_rows=(torch.from_numpy(neg_q), torch.from_numpy(neg_e)),
        tf_pos=torch.from_numpy(tf_pos),
        tcf_pos=torch.from_numpy(tcf_pos),
        acf_pos=torch.from_numpy(acf_pos),
        tf_neg=torch.from_numpy(tf_neg),
        drop_edges=torch.tensor(sorted(drop), dtype=torch.int64),
    )


def total_loss(model: KGCFModel, batch: _Batch, cfg: TrainConfig):
    """Factual + weighted counterfactual + weighted discrepancy loss for
    one tensorized batch. Returns the scalar tensor and its breakdown."""
    gates = None
    if batch.drop_edges.numel():
        gates = torch.ones(model.encoder.n_layers, model.gt.n_edges, dtype=torch.float64)
        gates[:, batch.drop_edges] = 0.0
    z = model.encoder.encode(batch.queries, model.gt, gates=gates)
    z_pos = z[batch.pos_rows[0], batch.pos_rows[1]]
    z_neg = z[batch.neg_rows[0], batch.neg_rows[1]]

    def bits(t: torch.Tensor) -> torch.Tensor:
        return torch.zeros_like(t) if cfg.zero_treatment else t

    p_pos_f, hid_f = model.decoder(z_pos, bits(batch.tf_pos))
    p_neg_f, _ = model.decoder(z_neg, bits(batch.tf_neg))
    l_f = factual_loss(p_pos_f, p_neg_f)
    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        total = l_f
        l_cf = torch.zeros(())
        l_disc = torch.zeros(())
    else:
        p_pos_cf, hid_cf = model.decoder(z_pos, bits(batch.tcf_pos))
        p_neg_cf, _ = model.decoder(z_neg, bits(batch.tf_neg))
        l_cf = counterfactual_loss(p_pos_cf, batch.acf_pos, p_neg_cf)
        l_disc = discrepancy_loss(hid_f, hid_cf, kind=cfg.disc)
        total = l_f + cfg.alpha * l_cf + cfg.beta * l_disc
    breakdown = LossBreakdown(float(l_f.detach()), float(l_cf.detach()),
                              float(l_disc.detach()), float(total.detach()))
    return total, breakdown


@dataclass
class TrainResult:
    model: KGCFModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_mrr: float = 0.0


def train(dataset: Dataset, graph: RelationGraph, table: TreatmentTable,
          assignments: list[ClusterAssignment], encoder: PairEncoder,
          decoder: PairDecoder, cfg: TrainConfig) -> TrainResult:
    """Minibatch Adam over the table's triplets (train facts plus inverse
    mirrors). After each epoch the filtered validation MRR is measured and
    the returned model carries the best-validation epoch's parameters."""
    from .ranking import evaluate, full_filter  # local import, avoids a cycle

    model = KGCFModel(encoder, decoder, graph, assignments)
    result = TrainResult(model=model)
    if cfg.epochs == 0:
        return result

    samples = [rec.triplet for rec in table.records]
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()),
        lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8,
    )
    filt = full_filter(dataset)
    best_state = None
    best_mrr = -1.0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(samples), cfg.batch_size):
            positives = [samples[i] for i in order[start:start + cfg.batch_size]]
            negatives = [sample_negatives(p, cfg.negatives, rng, graph.n_entities)
                         for p in positives]
            batch = _make_batch(positives, negatives, table, model)
            loss, breakdown = total_loss(model, batch, cfg)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {n_batches}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += (breakdown.l_f, breakdown.l_cf, breakdown.l_disc, breakdown.total)
            n_batches += 1

        report = evaluate(model, dataset.valid, filt) if dataset.valid else None
        valid_mrr = report.mrr if report else 0.0
        means = sums / max(n_batches, 1)
        result.log.append({
            "epoch": epoch, "l_f": means[0], "l_cf": means[1],
            "l_disc": means[2], "total": means[3], "valid_mrr": valid_mrr,
        })
        if valid_mrr > best_mrr:
            best_mrr = valid_mrr
            result.best_epoch = epoch
            best_state = (copy.deepcopy(encoder.state_dict()),
                          copy.deepcopy(decoder.state_dict()))

    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        decoder.load_state_dict(best_state[1])
    result.best_valid_mrr = max(best_mrr, 0.0)
    return result


def estimate_ate(table: TreatmentTable) -> float:
    """Average treatment effect over matched records; the factual outcome
    of an observed triplet is 1."""
    terms = []
    for rec in table.records:
        if not rec.matched:
            continue
        af = 1.0
        tf = rec.t_factual
        acf = rec.a_counterfactual
        terms.append(tf * (af - acf) + (1 - tf) * (acf - af))
    if not terms:
        raise UndefinedStatisticError("no matched records in the treatment table")
    return float(np.mean(terms))


CKPT_MAGIC = b"KGCF"
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


def _tensors(encoder: PairEncoder, decoder: PairDecoder):
    return [encoder.boundary, encoder.edge_weight, encoder.linear_weight,
            encoder.linear_bias, decoder.w1, decoder.b1, decoder.w2, decoder.b2]


def save_checkpoint(path, encoder: PairEncoder, decoder: PairDecoder) -> None:
    """Versioned binary header followed by the parameter tensors in
    declaration order, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, encoder.n_layers,
                              encoder.hidden_dim, encoder.n_relations_aug,
                              encoder.n_entities, decoder.hidden_dim))
        for t in _tensors(encoder, decoder):
            fh.write(t.detach().numpy().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[PairEncoder, PairDecoder]:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise CheckpointError("truncated checkpoint header")
        magic, version, n_layers, d_f, n_rel_aug, n_entities, d_g = _HEADER.unpack(header)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        encoder = PairEncoder(n_entities, n_rel_aug, hidden_dim=d_f, n_layers=n_layers)
        decoder = PairDecoder(d_f, hidden_dim=d_g)
        for t in _tensors(encoder, decoder):
            raw = fh.read(8 * t.numel())
            if len(raw) < 8 * t.numel():
                raise CheckpointError("truncated checkpoint tensor data")
            with torch.no_grad():
                t.copy_(torch.from_numpy(
                    np.frombuffer(raw, dtype="<f8").reshape(tuple(t.shape)).copy()))
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint tensors")
    return encoder, decoder
