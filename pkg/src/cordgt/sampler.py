"""Contextual node sampling: a fixed-shape tree of temporal neighbors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStore


@dataclass
class ContextualSet:
    """Tokens in layer-major, parent-major order; token 0 is the root.

    All per-token fields are arrays of length ``size``.  ``parent[0] == 0``.
    Padding tokens carry node -1, ts of their parent and zero edge features.
    """

    root: int
    t_pred: float
    fanouts: tuple[int, ...]
    node: np.ndarray
    ts: np.ndarray
    hop: np.ndarray
    parent: np.ndarray
    edge_feat: np.ndarray
    is_pad: np.ndarray

    @property
    def size(self) -> int:
        return len(self.node)

    def to_json(self) -> dict:
        return {
            "root": int(self.root),
            "t_pred": float(self.t_pred),
            "fanouts": list(self.fanouts),
            "tokens": [
                {"node": int(n), "ts": float(t), "hop": int(h), "parent": int(p), "pad": bool(d)}
                for n, t, h, p, d in zip(self.node, self.ts, self.hop, self.parent, self.is_pad)
            ],
        }


def context_size(fanouts) -> int:
    size, layer = 1, 1
    for n in fanouts:
        layer *= n
        size += layer
    return size


def tree_layout(fanouts) -> tuple[np.ndarray, np.ndarray]:
    """Parent index and hop of every token slot in layer-major order."""
    parent, hop = [0], [0]
    prev = [0]
    for k, n in enumerate(fanouts, start=1):
        layer = []
        for p in prev:
            for _ in range(n):
                layer.append(len(parent))
                parent.append(p)
                hop.append(k)
        prev = layer
    return np.asarray(parent), np.asarray(hop)


def _cut_before(store: EventStore, nodes: np.ndarray, bounds: np.ndarray):
    """Vectorized per-node binary search: (lo, cut) with adj_ts[lo:cut] < bound."""
    lo = store.adj_ptr[nodes]
    a = lo.copy()
    b = store.adj_ptr[nodes + 1].copy()
    ts = store.adj_ts
    while True:
        active = a < b
        if not active.any():
            break
        mid = (a + b) // 2
        go_right = active & (ts[np.minimum(mid, len(ts) - 1)] < bounds)
        a = np.where(go_right, mid + 1, a)
        b = np.where(active & ~go_right, mid, b)
    return lo, a


def sample_many(store: EventStore, roots, t_preds, fanouts=(20, 1), strategy: str = "uniform",
                rng=None) -> list[ContextualSet]:
    """Sample contextual sets for many roots at once.

    Level k draws ``fanouts[k-1]`` neighbors of every level k-1 token among the
    interactions strictly before that token's ts.  ``uniform`` draws with
    replacement; ``recent`` takes the newest ones first and pads any shortfall.
    Parents without earlier neighbors (or that are padding) get padding children.
    """
    if strategy not in ("uniform", "recent"):
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    fanouts = tuple(int(n) for n in fanouts)
    if not fanouts or any(n < 1 for n in fanouts):
        raise ValueError("fanouts must all be >= 1")
    rng = np.random.default_rng(rng)
    roots = np.asarray(roots, dtype=np.int64).reshape(-1)
    t_preds = np.asarray(t_preds, dtype=np.float64).reshape(-1)
    r = len(roots)
    parent, hop = tree_layout(fanouts)
    size = len(parent)
    node = np.full((r, size), -1, dtype=np.int64)
    ts = np.zeros((r, size))
    eidx = np.full((r, size), -1, dtype=np.int64)
    pad = np.zeros((r, size), dtype=bool)
    node[:, 0], ts[:, 0] = roots, t_preds

    start, width = 0, 1
    for n in fanouts:
        par = np.arange(start, start + width)             # parent slots of this level
        child0 = start + width                              # first child slot
        pn = node[:, par].reshape(-1)
        pt = ts[:, par].reshape(-1)
        ppad = pad[:, par].reshape(-1)
        lo, cut = _cut_before(store, np.maximum(pn, 0), pt)
        m = np.where(ppad, 0, cut - lo)
        if strategy == "uniform":
            off = np.floor(rng.random((len(pn), n)) * np.maximum(m, 1)[:, None]).astype(np.int64)
            valid = np.broadcast_to((m > 0)[:, None], off.shape)
        else:
            back = np.arange(n)[None, :]
            off = m[:, None] - 1 - back
            valid = back < m[:, None]
        pos = np.where(valid, lo[:, None] + off, 0)
        sl = slice(child0, child0 + width * n)
        node[:, sl] = np.where(valid, store.adj_nbr[pos], -1).reshape(r, -1) if len(store.adj_nbr) \
            else -1
        ts[:, sl] = np.where(valid, store.adj_ts[pos] if len(store.adj_ts) else 0.0,
                             np.repeat(pt, n).reshape(-1, n)).reshape(r, -1)
        eidx[:, sl] = np.where(valid, store.adj_eidx[pos] if len(store.adj_eidx) else -1, -1).reshape(r, -1)
        pad[:, sl] = (~valid).reshape(r, -1)
        start, width = child0, width * n

    real = eidx >= 0
    edge = np.zeros((r, size, store.edge_dim))
    if store.edge_dim:
        edge[real] = store.edge_feats[eidx[real]]
    return [ContextualSet(int(roots[i]), float(t_preds[i]), fanouts, node[i], ts[i], hop, parent,
                          edge[i], pad[i]) for i in range(r)]


def sample_contextual(store: EventStore, root: int, t_pred: float, fanouts=(20, 1),
                      strategy: str = "uniform", rng=None) -> ContextualSet:
    return sample_many(store, [root], [t_pred], fanouts, strategy, rng)[0]
