"""Command-line pipeline: prepare, train, eval, interpret, ate, sweep.

Fixed output layout inside the chosen directory:
assignments.tsv, embedding.txt, cf_table.jsonl, model.ckpt,
train_log.jsonl, metrics.json, interpret.txt. Two runs with the same
config and seed produce byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import embedding, matching, model as model_mod, ranking, treatment
from .config import PipelineConfig, load_config
from .data import Triplet, build_graph, candidate_pairs, load_dataset, relation_proportions
from .errors import ConfigError
from .interpret import edge_importance, format_interpretation, top_paths
from .model import KGCFModel, PairDecoder, PairEncoder, TrainConfig

_FLAG_KEYS = {
    "seed": "seed",
    "k_core": "treatment.k",
    "dim": "embed.dim",
    "layers": "encoder.layers",
    "hidden": "encoder.hidden",
    "alpha": "train.alpha",
    "beta": "train.beta",
    "negatives": "train.negatives",
    "epochs": "train.epochs",
    "batch": "train.batch",
    "scope": "scope",
    "out": "out",
}


def _build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg.set(key, val)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg.set(key.strip(), raw.strip())
    return cfg


def _load(cfg: PipelineConfig):
    train_p, valid_p, test_p = cfg.data_paths()
    dataset = load_dataset(train_p, valid_p, test_p)
    graph = build_graph(dataset, include_inverses=True)
    return dataset, graph


def _out_path(cfg: PipelineConfig, name: str) -> str:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_prepare(cfg: PipelineConfig) -> dict:
    dataset, graph = _load(cfg)
    with open(_out_path(cfg, "load_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(dataset.load_report.to_text())

    assignments = treatment.compute_assignments(graph, k=cfg["treatment.k"])
    treatment.export_assignments(assignments, graph.n_entities, _out_path(cfg, "assignments.tsv"))

    params = embedding.WalkParams(
        walks_per_node=cfg["embed.walks"], walk_length=cfg["embed.walk_length"],
        window=cfg["embed.window"], return_p=cfg["embed.p"], inout_q=cfg["embed.q"],
        negatives=cfg["embed.negatives"], epochs=cfg["embed.epochs"],
        learning_rate=cfg["embed.lr"], seed=cfg.component_seed("embedding"),
    )
    psi = relation_proportions(dataset)
    mats = [embedding.embed_relation(graph.n_entities, graph.undirected_projection(j),
                                     cfg["embed.dim"], params)
            for j in range(graph.n_relations)]
    M = embedding.combine(mats, psi)
    embedding.save_embedding(M, _out_path(cfg, "embedding.txt"))

    pairs = candidate_pairs(dataset, scope=cfg["scope"])
    table = matching.build_table(dataset, graph, M, assignments, pairs)
    table.to_jsonl(_out_path(cfg, "cf_table.jsonl"))

    treat_frac = {}
    for j in range(graph.n_relations):
        bits = [assignments[j].treatment(t.head, t.tail)
                for t in dataset.train if t.relation == j]
        treat_frac[dataset.relation_names[j]] = float(np.mean(bits)) if bits else 0.0
    summary = {
        "matched_fraction": table.matched_fraction(),
        "treatment_one_fraction": treat_frac,
        "n_candidates": len(pairs),
    }
    _write_json(_out_path(cfg, "prepare_summary.json"), summary)
    return summary


def _check_artifacts(cfg: PipelineConfig, dataset, graph):
    """Reject artifact/parameter inconsistencies before any compute."""
    for name in ("assignments.tsv", "embedding.txt", "cf_table.jsonl"):
        if not os.path.exists(_out_path(cfg, name)):
            raise ConfigError(f"missing prepare artifact {name}; run prepare first")
    M = embedding.load_embedding(_out_path(cfg, "embedding.txt"))
    if M.shape != (graph.n_entities, cfg["embed.dim"]):
        raise ConfigError(
            f"embedding matrix is {M.shape}, config expects {(graph.n_entities, cfg['embed.dim'])}")
    table = matching.TreatmentTable.from_jsonl(_out_path(cfg, "cf_table.jsonl"))
    if len(table) != 2 * len(dataset.train):
        raise ConfigError(
            f"treatment table has {len(table)} records for {len(dataset.train)} train triplets")
    return table


def _train_config(cfg: PipelineConfig) -> TrainConfig:
    return TrainConfig(
        alpha=cfg["train.alpha"], beta=cfg["train.beta"],
        learning_rate=cfg["train.lr"], batch_size=cfg["train.batch"],
        epochs=cfg["train.epochs"], negatives=cfg["train.negatives"],
        seed=cfg.component_seed("train"), disc=cfg["train.disc"],
    )


def cmd_train(cfg: PipelineConfig):
    dataset, graph = _load(cfg)
    table = _check_artifacts(cfg, dataset, graph)
    assignments = treatment.compute_assignments(graph, k=cfg["treatment.k"])
    encoder = PairEncoder(graph.n_entities, graph.n_relations_aug,
                          hidden_dim=cfg["encoder.hidden"], n_layers=cfg["encoder.layers"],
                          seed=cfg.component_seed("encoder"))
    decoder = PairDecoder(cfg["encoder.hidden"], hidden_dim=cfg["decoder.hidden"],
                          seed=cfg.component_seed("decoder"))
    result = model_mod.train(dataset, graph, table, assignments, encoder, decoder,
                             _train_config(cfg))
    model_mod.save_checkpoint(_out_path(cfg, "model.ckpt"), encoder, decoder)
    with open(_out_path(cfg, "train_log.jsonl"), "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return result


def _load_model(cfg: PipelineConfig, dataset, graph) -> KGCFModel:
    encoder, decoder = model_mod.load_checkpoint(_out_path(cfg, "model.ckpt"))
    if encoder.n_entities != graph.n_entities or encoder.n_relations_aug != graph.n_relations_aug:
        raise ConfigError("checkpoint header does not match the dataset's graph")
    assignments = treatment.compute_assignments(graph, k=cfg["treatment.k"])
    return KGCFModel(encoder, decoder, graph, assignments)


def cmd_eval(cfg: PipelineConfig, split: str, ranks_out: str | None = None):
    dataset, graph = _load(cfg)
    model = _load_model(cfg, dataset, graph)
    report = ranking.evaluate(model, dataset.split(split), ranking.full_filter(dataset))
    _write_json(_out_path(cfg, "metrics.json"), report.to_dict(split=split))
    if ranks_out:
        with open(ranks_out, "w", encoding="utf-8") as fh:
            for rank in report.ranks:
                fh.write(json.dumps({"rank": rank}) + "\n")
    return report


def cmd_interpret(cfg: PipelineConfig, head: str, rel: str, tail: str, k: int):
    dataset, graph = _load(cfg)
    model = _load_model(cfg, dataset, graph)
    table = matching.TreatmentTable.from_jsonl(_out_path(cfg, "cf_table.jsonl"))

    def entity(s):
        return dataset.entity_index[s] if s in dataset.entity_index else int(s)

    def relation(s):
        return dataset.relation_index[s] if s in dataset.relation_index else int(s)

    query = Triplet(entity(head), relation(rel), entity(tail))
    importance = edge_importance(model, query)
    paths = top_paths(importance, query.head, query.tail, k=k,
                      max_len=model.encoder.n_layers)
    text = format_interpretation(dataset, model, query, paths, table=table)
    with open(_out_path(cfg, "interpret.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def cmd_ate(cfg: PipelineConfig) -> float:
    table = matching.TreatmentTable.from_jsonl(_out_path(cfg, "cf_table.jsonl"))
    return model_mod.estimate_ate(table)


def cmd_sweep(cfg: PipelineConfig, grid=(0.001, 0.01, 0.1, 1.0)):
    dataset, graph = _load(cfg)
    table = _check_artifacts(cfg, dataset, graph)
    assignments = treatment.compute_assignments(graph, k=cfg["treatment.k"])
    results = []
    for alpha in grid:
        for beta in grid:
            encoder = PairEncoder(graph.n_entities, graph.n_relations_aug,
                                  hidden_dim=cfg["encoder.hidden"],
                                  n_layers=cfg["encoder.layers"],
                                  seed=cfg.component_seed("encoder"))
            decoder = PairDecoder(cfg["encoder.hidden"], hidden_dim=cfg["decoder.hidden"],
                                  seed=cfg.component_seed("decoder"))
            tcfg = _train_config(cfg)
            tcfg.alpha, tcfg.beta = alpha, beta
            run = model_mod.train(dataset, graph, table, assignments, encoder, decoder, tcfg)
            results.append({"alpha": alpha, "beta": beta,
                            "valid_mrr": run.best_valid_mrr})
    _write_json(_out_path(cfg, "sweep.json"), results)
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgcf",
                                     description="Counterfactual-relation augmented KG completion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--k-core", dest="k_core", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--negatives", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--scope", choices=["train-only", "all-splits"])
        p.add_argument("--out")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")

    common(sub.add_parser("prepare"))
    common(sub.add_parser("train"))
    p_eval = sub.add_parser("eval")
    common(p_eval)
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_eval.add_argument("--ranks-out")
    p_int = sub.add_parser("interpret")
    common(p_int)
    p_int.add_argument("triplet", nargs=3, metavar=("HEAD", "REL", "TAIL"))
    p_int.add_argument("--top-k", type=int, default=5)
    common(sub.add_parser("ate"))
    common(sub.add_parser("sweep"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = os.environ.get("KGCF_WORKERS")
    if workers:
        torch.set_num_threads(max(1, int(workers)))
    cfg = _build_config(args)

    if args.command == "prepare":
        summary = cmd_prepare(cfg)
        print(json.dumps(summary, sort_keys=True))
    elif args.command == "train":
        result = cmd_train(cfg)
        best = result.log[result.best_epoch] if result.log else None
        print(json.dumps({"best_epoch": result.best_epoch,
                          "best_valid_mrr": result.best_valid_mrr,
                          "final": best}, sort_keys=True))
    elif args.command == "eval":
        report = cmd_eval(cfg, args.split, ranks_out=args.ranks_out)
        print(json.dumps(report.to_dict(split=args.split), sort_keys=True))
    elif args.command == "interpret":
        h, r, t = args.triplet
        print(cmd_interpret(cfg, h, r, t, k=args.top_k), end="")
    elif args.command == "ate":
        print(f"{cmd_ate(cfg):.12g}")
    elif args.command == "sweep":
        results = cmd_sweep(cfg)
        print(json.dumps(results, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
