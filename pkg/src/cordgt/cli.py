"""Command-line front end: ``cordgt {train,evaluate,ablate,synth,inspect,decompose}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .batching import build_batch
from .config import FIELD_TYPES, ConfigError, RunConfig, load_config, parse_value, save_snapshot
from .data import Splits, chronological_split, make_planted
from .events import DataError, EventStore, InteractionHistory, load_dataset, write_jodie_csv
from .model import CorDGT, ModelConfig
from .numerics import CheckpointError
from .sampler import sample_contextual
from .train import (DivergenceError, bucket_heatmap, decompose_scores, evaluate_split,
                    run_ablation, train)

log = logging.getLogger("cordgt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# Public sources of the benchmark logs (downloads are left to the user).
DATASET_URLS = {
    "wikipedia": "http://snap.stanford.edu/jodie/wikipedia.csv",
    "reddit": "http://snap.stanford.edu/jodie/reddit.csv",
    "lastfm": "http://snap.stanford.edu/jodie/lastfm.csv",
    "uci": "http://konect.cc/networks/opsahl-ucsocial/",
}


# ---------------------------------------------------------------- helpers


def load_store(cfg: RunConfig) -> EventStore:
    if cfg.synth:
        store, _ = make_planted(seed=cfg.seed, num_nodes=cfg.synth_nodes,
                                partners=cfg.synth_partners, num_high=cfg.synth_high_pairs,
                                high_factor=cfg.synth_high_factor, target_events=cfg.synth_events)
        return store
    return load_dataset(cfg.dataset, bipartite=cfg.bipartite)


def make_splits(store: EventStore, cfg: RunConfig) -> Splits:
    try:
        return chronological_split(store, cfg.split_spec())
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def run_config(args) -> RunConfig:
    cli = {k: getattr(args, k) for k in FIELD_TYPES if getattr(args, k, None) is not None}
    return load_config(args.config, cli)


def model_from_checkpoint(path, store: EventStore) -> tuple[CorDGT, dict]:
    params, meta = nx.load_checkpoint(path)
    if "model_config" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no model configuration")
    mcfg = ModelConfig(**meta["model_config"])
    if (mcfg.node_dim, mcfg.edge_dim) != (store.node_dim, store.edge_dim):
        raise ConfigError(f"checkpoint expects node/edge feature widths {mcfg.node_dim}/"
                          f"{mcfg.edge_dim}, dataset has {store.node_dim}/{store.edge_dim}")
    model = CorDGT(mcfg, node_feats=store.node_feats)
    try:
        model.load_state_dict(params)
    except ValueError as exc:
        raise ConfigError(f"checkpoint does not match its model configuration: {exc}") from exc
    return model, meta


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    store = load_store(cfg)
    splits = make_splits(store, cfg)
    mcfg = cfg.model_config(store.node_dim, store.edge_dim)
    tcfg = cfg.train_config()
    save_snapshot(cfg, out / "config.txt")
    with open(out / "metrics.jsonl", "w") as fh:
        def emit(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        res = train(store, splits, mcfg, tcfg, cfg.td_params(), on_metrics=emit)
    meta = {"model_config": mcfg.to_dict(), "run_config": cfg.to_dict(),
            "best_val_ap": res.best_val_ap, "best_epoch": res.best_epoch}
    nx.save_checkpoint(out / "model.ckpt", res.model.state_dict(), meta)
    summary = {"best_val_ap": res.best_val_ap, "best_epoch": res.best_epoch,
               "checkpoint": str(out / "model.ckpt")}
    print(json.dumps(summary))
    return summary


def cmd_evaluate(cfg: RunConfig, checkpoint, split: str = "test") -> dict:
    store = load_store(cfg)
    splits = make_splits(store, cfg)
    model, _ = model_from_checkpoint(checkpoint, store)
    metrics = evaluate_split(model, store, splits, split, cfg.td_params(), cfg.train_config())
    metrics.update(split=split, mode=splits.mode, evaluated_edges=metrics.pop("n"))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"eval_{split}_{splits.mode}.json", metrics)
    print(json.dumps(metrics))
    return metrics


def cmd_ablate(cfg: RunConfig, variants=None, split: str = "test") -> list[dict]:
    store = load_store(cfg)
    splits = make_splits(store, cfg)
    rows = run_ablation(store, splits, cfg.model_config(store.node_dim, store.edge_dim),
                        cfg.train_config(), cfg.td_params(), variants, split)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['variant']:>16s}  ap={r['ap']:.4f}  auc={r['auc']:.4f}")
    return rows


def cmd_synth(cfg: RunConfig, output) -> dict:
    store = load_store(replace(cfg, synth=True) if not cfg.synth else cfg)
    write_jodie_csv(store, output)
    info = {"path": str(output), "events": store.num_events, "nodes": store.num_nodes,
            "duration": store.duration, "intensity": store.average_intensity()}
    print(json.dumps(info))
    return info


def inspect_report(store: EventStore, node: int, target: int | None, t: float, cfg: RunConfig,
                   as_json: bool = False) -> str:
    for name, v in (("node", node), ("target", target)):
        if v is not None and not 0 <= v < store.num_nodes:
            raise DataError(f"unknown {name} id {v} (dataset has {store.num_nodes} nodes)")
    td = cfg.td_params()
    history = InteractionHistory()
    history.commit_range(store, 0, int(np.searchsorted(store.ts, t, side="left")))
    rng = np.random.default_rng(cfg.seed)
    strategy = "recent" if cfg.recent_sampling else "uniform"
    sets = [sample_contextual(store, node, t, cfg.fanouts, strategy, rng)]
    if target is not None:
        sets.append(sample_contextual(store, target, t, cfg.fanouts, strategy, rng))
    batch = build_batch([tuple(sets)], history, td, strict=False)
    if as_json:
        payload = {"intensity": store.average_intensity(), "sets": [c.to_json() for c in sets],
                   "td": batch.td[0].tolist(), "sd": batch.sd[0].tolist()}
        return json.dumps(payload, indent=2)
    lines = [f"dataset: {store.num_events} events, {store.num_nodes} nodes, "
             f"T = {store.duration:.6g}",
             f"average interaction intensity 2|E|/(|V| T) = {store.average_intensity():.6g}",
             f"query time t = {t:g}; ledger holds {len(history)} pairs"]
    targets = [c.root for c in sets]
    c = sets[0].size
    for si, ctx in enumerate(sets):
        lines.append(f"\ncontextual set of node {ctx.root} (fanouts {list(ctx.fanouts)})")
        real = ~ctx.is_pad
        if not real[1:].any():
            lines.append("  no neighbors before t")
        header = "  tok  hop  node      ts  " + "  ".join(f"TD->{r}  SD->{r}" for r in targets)
        lines.append(header)
        for i in np.nonzero(real)[0]:
            j = si * c + i
            dist = "  ".join(f"{batch.td[0, j, k]:8.4f} {batch.sd[0, j, k]:5.0f}"
                             for k in range(len(targets)))
            lines.append(f"  {i:3d}  {ctx.hop[i]:3d}  {ctx.node[i]:4d}  {ctx.ts[i]:10.4f}  {dist}")
        lines.append(f"  padding tokens: {int(ctx.is_pad.sum())}")
    return "\n".join(lines)


def cmd_decompose(cfg: RunConfig, checkpoint, num_links: int = 200, split: str = "test",
                  bins: int = 5) -> np.ndarray:
    store = load_store(cfg)
    splits = make_splits(store, cfg)
    model, _ = model_from_checkpoint(checkpoint, store)
    if model.cfg.head != "linear":
        raise ConfigError("decompose needs a checkpoint trained with head = linear")
    idx = getattr(splits, split)[:num_links]
    with nx.using_mode("test"):
        model.cast()
        rows = decompose_scores(model, store, idx, cfg.td_params(), cfg.fanouts, seed=cfg.seed)
    x = rows["td_u"] + rows["td_v"]
    heat = bucket_heatmap(rows["td_u"], rows["td_v"], rows["contribution"], bins)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "heatmap.csv", heat, delimiter=",", fmt="%.8g")
    keys = ("link", "td_u", "td_v", "sd_u", "sd_v", "contribution", "weight")
    with open(out / "decompose_rows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        w.writerows(zip(*(rows[k] for k in keys)))
    cells = [[None if np.isnan(v) else float(v) for v in row] for row in heat]   # empty bucket -> null
    print(json.dumps({"tokens": int(len(x)), "links": int(len(idx)), "heatmap": cells}))
    return heat


# ---------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    g = p.add_argument_group("config overrides (any RunConfig key)")
    for key in FIELD_TYPES:
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="V",
                       type=lambda raw, key=key: parse_value(key, raw))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cordgt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a model; writes checkpoint, metrics and config")
    _add_config_flags(sp)

    sp = sub.add_parser("evaluate", help="AP/AUC of a checkpoint on a split")
    _add_config_flags(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("val", "test"), default="test")

    sp = sub.add_parser("ablate", help="train and evaluate ablation variants; writes CSV")
    _add_config_flags(sp)
    sp.add_argument("--variants", help="comma-separated variant names (default: all)")
    sp.add_argument("--split", choices=("val", "test"), default="test")

    sp = sub.add_parser("synth", help="write the planted-intensity dataset as CSV")
    _add_config_flags(sp)
    sp.add_argument("--output", required=True)

    sp = sub.add_parser("inspect", help="show a contextual set with TD/SD and the dataset intensity")
    _add_config_flags(sp)
    sp.add_argument("--node", type=int, required=True)
    sp.add_argument("--target", type=int)
    sp.add_argument("--time", type=float, help="query time (default: end of log)")
    sp.add_argument("--json", action="store_true", help="dump the sets as JSON")

    sp = sub.add_parser("decompose", help="per-token score decomposition heatmap (linear head)")
    _add_config_flags(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--links", type=int, default=200)
    sp.add_argument("--split", choices=("val", "test"), default="test")
    sp.add_argument("--bins", type=int, default=5)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth" and not args.config and args.synth is None:
            args.synth = True
        cfg = run_config(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint, args.split)
        elif args.command == "ablate":
            variants = args.variants.split(",") if args.variants else None
            cmd_ablate(cfg, variants, args.split)
        elif args.command == "synth":
            cmd_synth(cfg, args.output)
        elif args.command == "inspect":
            store = load_store(cfg)
            t = store.duration if args.time is None else args.time
            print(inspect_report(store, args.node, args.target, t, cfg, args.json))
        elif args.command == "decompose":
            cmd_decompose(cfg, args.checkpoint, args.links, args.split, args.bins)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
