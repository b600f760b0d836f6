"""Chronological splits, negative sampling and the planted-intensity generator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStore, from_arrays


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    mode: str = "transductive"
    mask_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("transductive", "inductive"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.train_frac + self.val_frac > 1 or min(self.train_frac, self.val_frac) < 0:
            raise ValueError("split fractions must be non-negative and sum to at most 1")


@dataclass
class Splits:
    """Event index arrays into the store.  ``train_store`` is the graph visible
    while training: the full log, or in the inductive setting a store holding
    only the ``train`` events (indexed 0..len(train)-1)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mode: str = "transductive"
    masked_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    train_store: EventStore | None = None


def chronological_split(store: EventStore, spec: SplitSpec = SplitSpec()) -> Splits:
    """Train ts <= 0.7T, val in (0.7T, 0.85T], test the rest; a timestamp on a
    boundary belongs to the earlier range."""
    t_end = store.duration
    b1 = np.searchsorted(store.ts, spec.train_frac * t_end, side="right")
    b2 = np.searchsorted(store.ts, (spec.train_frac + spec.val_frac) * t_end, side="right")
    m = store.num_events
    parts = (np.arange(0, b1), np.arange(b1, b2), np.arange(b2, m))
    for name, p in zip(("train", "val", "test"), parts):
        if len(p) == 0:
            raise ValueError(f"empty {name} split")
    splits = Splits(*parts, mode="transductive", train_store=store)
    if spec.mode == "inductive":
        nodes = np.union1d(store.src, store.dst)
        rng = np.random.default_rng(spec.seed)
        k = max(1, int(round(spec.mask_frac * len(nodes))))
        masked = np.sort(rng.choice(nodes, size=k, replace=False))
        splits = inductive_filter(store, splits, masked)
    return splits


def inductive_filter(store: EventStore, splits: Splits, masked_nodes) -> Splits:
    """Drop training links touching a masked node; keep only val/test links
    touching at least one masked node."""
    masked_nodes = np.asarray(masked_nodes, dtype=np.int64)

    def touches(idx):
        return np.isin(store.src[idx], masked_nodes) | np.isin(store.dst[idx], masked_nodes)

    train = splits.train[~touches(splits.train)]
    val = splits.val[touches(splits.val)]
    test = splits.test[touches(splits.test)]
    for name, p in (("train", train), ("val", val), ("test", test)):
        if len(p) == 0:
            raise ValueError(f"inductive filter left the {name} split empty")
    return Splits(train, val, test, "inductive", masked_nodes, store.subset(train))


def negative_sample(u, v, num_nodes: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from all nodes except u and v (vectorized over arrays)."""
    if num_nodes < 3:
        raise ValueError("negative sampling needs at least 3 nodes")
    u = np.atleast_1d(np.asarray(u, dtype=np.int64))
    v = np.atleast_1d(np.asarray(v, dtype=np.int64))
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    distinct = lo != hi
    r = rng.integers(0, num_nodes - 1 - distinct, size=len(u))
    # shift the draw past the excluded ids in increasing order
    r = r + (r >= lo)
    r = r + (distinct & (r >= hi))
    return r


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticSpec:
    num_nodes: int
    pair_rates: dict  # (u, v) -> true intensity
    duration: float

    def __post_init__(self):
        for pair, lam in self.pair_rates.items():
            if lam <= 0:
                raise ValueError(f"non-positive intensity for pair {pair}")


@dataclass
class SyntheticData:
    src: np.ndarray
    dst: np.ndarray
    ts: np.ndarray
    pair_rates: dict
    high_nodes: np.ndarray

    @property
    def num_events(self) -> int:
        return len(self.ts)

    def average_intensity(self, num_nodes: int, duration: float) -> float:
        return 2.0 * self.num_events / (num_nodes * duration)


def synth_generate(spec: SyntheticSpec, seed: int = 0, high_nodes=()) -> SyntheticData:
    """Each pair emits a homogeneous Poisson stream on [0, T] built from
    exponential inter-arrival gaps; the direction of each event is random."""
    rng = np.random.default_rng(seed)
    src, dst, ts = [], [], []
    for (a, b), lam in sorted(spec.pair_rates.items()):
        times = []
        t = rng.exponential(1.0 / lam)
        while t <= spec.duration:
            times.append(t)
            t += rng.exponential(1.0 / lam)
        if not times:
            continue
        flip = rng.random(len(times)) < 0.5
        src.append(np.where(flip, b, a))
        dst.append(np.where(flip, a, b))
        ts.append(np.asarray(times))
    if not ts:
        z = np.zeros(0, dtype=np.int64)
        return SyntheticData(z, z, np.zeros(0), dict(spec.pair_rates), np.asarray(high_nodes))
    src, dst, ts = np.concatenate(src), np.concatenate(dst), np.concatenate(ts)
    order = np.argsort(ts, kind="mergesort")
    return SyntheticData(src[order], dst[order], ts[order], dict(spec.pair_rates),
                         np.asarray(sorted(high_nodes), dtype=np.int64))


def planted_spec(num_nodes: int = 200, partners: int = 10, num_high: int = 20,
                 high_factor: float = 10.0, target_events: int = 20000,
                 background_rate: float = 1.0, seed: int = 0) -> tuple[SyntheticSpec, np.ndarray]:
    """Sparse background graph (each node linked to ``partners`` random others at
    ``background_rate``) plus ``num_high`` disjoint pairs at ``high_factor`` times
    that rate.  T is set so the expected event count is ``target_events``."""
    rng = np.random.default_rng(seed)
    rates: dict[tuple[int, int], float] = {}
    for u in range(num_nodes):
        others = rng.choice(np.delete(np.arange(num_nodes), u), size=partners, replace=False)
        for w in others:
            rates[(min(u, int(w)), max(u, int(w)))] = background_rate
    perm = rng.permutation(num_nodes)[:2 * num_high]
    high = []
    for a, b in perm.reshape(-1, 2):
        key = (int(min(a, b)), int(max(a, b)))
        rates[key] = background_rate * high_factor
        high.extend(key)
    total = sum(rates.values())
    return SyntheticSpec(num_nodes, rates, target_events / total), np.asarray(sorted(high))


def synthetic_store(data: SyntheticData, num_nodes: int) -> EventStore:
    """Event store whose state label marks events whose source is a high-rate node."""
    labels = np.isin(data.src, data.high_nodes).astype(np.float64)
    return from_arrays(data.src, data.dst, data.ts, num_nodes, labels=labels)


def make_planted(seed: int = 0, **kw) -> tuple[EventStore, SyntheticData]:
    spec, high = planted_spec(seed=seed, **kw)
    data = synth_generate(spec, seed=seed + 1, high_nodes=high)
    return synthetic_store(data, spec.num_nodes), data
