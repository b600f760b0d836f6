"""Per-batch cost against contextual-set size C, and neighbors_before latency
against per-node degree.

    python scripts/bench_complexity.py --sizes 11,21,41,81
"""
import argparse
import json
import time

import numpy as np

from cordgt import numerics as nx
from cordgt.data import make_planted, negative_sample
from cordgt.events import from_arrays
from cordgt.model import CorDGT, ModelConfig, bce_loss
from cordgt.proximity import TdParams
from cordgt.train import HistoryCursor, link_batch


def batch_seconds(store, c, reps, hidden):
    rng = np.random.default_rng(0)
    idx = np.arange(15000, 15100)
    cur = HistoryCursor(store)
    cur.advance(int(idx[0]))
    mcfg = ModelConfig(hidden=hidden)
    neg = negative_sample(store.src[idx], store.dst[idx], store.num_nodes, rng)
    with nx.using_mode("train"):
        model = CorDGT(mcfg)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            batch = link_batch(store, cur.history, store.src[idx], store.dst[idx], store.ts[idx], neg, mcfg,
                               TdParams.for_hops(1), (c - 1,), rng)
            s = model.scores(batch)
            bce_loss(s[:100], s[100:]).backward()
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def neighbor_latency(degree, calls):
    rng = np.random.default_rng(degree)
    store = from_arrays(np.zeros(degree, int), rng.integers(1, 50, degree),
                        np.sort(rng.uniform(0, 1000, degree)), 50)
    qs = rng.uniform(0, 1000, calls)
    t0 = time.perf_counter()
    for q in qs:
        store.neighbors_before(0, q)
    return (time.perf_counter() - t0) / calls


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="11,21,41")
    ap.add_argument("--degrees", default="100,1000,10000")
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--hidden", type=int, default=32)
    args = ap.parse_args()
    store, _ = make_planted(seed=9, num_nodes=200, partners=50, num_high=10, target_events=20000)
    sizes = [int(c) for c in args.sizes.split(",")]
    secs = [batch_seconds(store, c, args.reps, args.hidden) for c in sizes]
    degrees = [int(d) for d in args.degrees.split(",")]
    lat = [neighbor_latency(d, 2000) for d in degrees]
    report = {
        "batch_seconds": dict(zip(map(str, sizes), secs)),
        "neighbors_before_seconds": dict(zip(map(str, degrees), lat)),
        "neighbors_before_loglog_slope": float(np.polyfit(np.log(degrees), np.log(lat), 1)[0]),
    }
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
