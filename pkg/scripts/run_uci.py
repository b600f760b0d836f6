"""Desk-scale run on a local UCI message log in the src,dst,ts,state_label CSV
layout: dataset statistic, then training at d=32 with fanouts (20, 1).

    python scripts/run_uci.py data/uci.csv --epochs 10
"""
import argparse
import json
import logging
import time

from cordgt.data import chronological_split
from cordgt.events import load_dataset
from cordgt.model import ModelConfig
from cordgt.proximity import TdParams
from cordgt.train import TrainConfig, evaluate_split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--patience", type=int, default=3)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--stats-only", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    store = load_dataset(args.path)
    report = {"events": store.num_events, "nodes": store.num_nodes, "duration": store.duration,
              "intensity": store.average_intensity()}
    print(json.dumps(report))
    if args.stats_only:
        return
    t0 = time.perf_counter()
    splits = chronological_split(store)
    td = TdParams.for_hops(2)
    tcfg = TrainConfig(epochs=args.epochs, patience=args.patience)
    mcfg = ModelConfig(hidden=args.hidden, node_dim=store.node_dim, edge_dim=store.edge_dim)
    res = train(store, splits, mcfg, tcfg, td)
    for split in ("val", "test"):
        report[split] = evaluate_split(res.model, store, splits, split, td, tcfg)
    report["seconds"] = time.perf_counter() - t0
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
