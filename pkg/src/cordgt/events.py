"""Event log, per-node temporal adjacency and the pair interaction ledger."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class LeakError(ValueError):
    """History holds an interaction at or after the prediction time."""


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    ts: float
    edge_feat: np.ndarray | None = None
    idx: int = 0
    label: float = 0.0


class Neighbors(NamedTuple):
    nodes: np.ndarray
    ts: np.ndarray
    event_idx: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def as_list(self) -> list[tuple[int, float, int]]:
        return [(int(n), float(t), int(e)) for n, t, e in zip(self.nodes, self.ts, self.event_idx)]


class EventStore:
    """Immutable, time-sorted interaction log.

    Arrays are indexed by event ordinal after sorting (``src[i]``, ``ts[i]`` ...).
    Timestamps are shifted so the minimum is 0; ``time_offset`` keeps the shift.
    The per-node adjacency is CSR: ``adj_ptr[u]:adj_ptr[u+1]`` slices into
    ``adj_nbr/adj_ts/adj_eidx`` sorted by (ts, event idx).
    """

    def __init__(self, src, dst, ts, num_nodes: int, edge_feats=None, node_feats=None,
                 labels=None, time_offset: float = 0.0):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.ts = np.asarray(ts, dtype=np.float64)
        self.num_nodes = int(num_nodes)
        m = len(self.src)
        self.edge_feats = (np.zeros((m, 0)) if edge_feats is None
                           else np.asarray(edge_feats, dtype=np.float64).reshape(m, -1))
        self.node_feats = (np.zeros((self.num_nodes, 0)) if node_feats is None
                           else np.asarray(node_feats, dtype=np.float64))
        self.labels = np.zeros(m) if labels is None else np.asarray(labels, dtype=np.float64)
        self.time_offset = float(time_offset)
        self._build_adjacency()

    @property
    def num_events(self) -> int:
        return len(self.src)

    @property
    def edge_dim(self) -> int:
        return self.edge_feats.shape[1]

    @property
    def node_dim(self) -> int:
        return self.node_feats.shape[1]

    def _build_adjacency(self) -> None:
        m = self.num_events
        eidx = np.arange(m)
        loop = self.src == self.dst
        # a self-loop is listed once
        owner = np.concatenate([self.src, self.dst[~loop]])
        nbr = np.concatenate([self.dst, self.src[~loop]])
        e = np.concatenate([eidx, eidx[~loop]])
        order = np.lexsort((e, self.ts[e], owner))
        self.adj_nbr = nbr[order]
        self.adj_eidx = e[order]
        self.adj_ts = self.ts[self.adj_eidx]
        counts = np.bincount(owner, minlength=self.num_nodes)
        self.adj_ptr = np.concatenate([[0], np.cumsum(counts)])

    def degree(self, u: int) -> int:
        return int(self.adj_ptr[u + 1] - self.adj_ptr[u])

    def neighbors_before(self, u: int, t: float) -> Neighbors:
        """Adjacency entries of ``u`` with timestamp strictly below ``t``."""
        lo, hi = self.adj_ptr[u], self.adj_ptr[u + 1]
        cut = lo + np.searchsorted(self.adj_ts[lo:hi], t, side="left")
        return Neighbors(self.adj_nbr[lo:cut], self.adj_ts[lo:cut], self.adj_eidx[lo:cut])

    def event(self, i: int) -> Event:
        return Event(int(self.src[i]), int(self.dst[i]), float(self.ts[i]),
                     self.edge_feats[i], i, float(self.labels[i]))

    def events(self, lo: int = 0, hi: int | None = None) -> list[Event]:
        hi = self.num_events if hi is None else hi
        return [self.event(i) for i in range(lo, hi)]

    def subset(self, indices) -> "EventStore":
        """Store over a subset of events, keeping timestamps and node ids unchanged."""
        indices = np.sort(np.asarray(indices, dtype=np.int64))
        return EventStore(self.src[indices], self.dst[indices], self.ts[indices], self.num_nodes,
                          self.edge_feats[indices], self.node_feats, self.labels[indices],
                          self.time_offset)

    @property
    def duration(self) -> float:
        return float(self.ts[-1]) if self.num_events else 0.0

    def average_intensity(self) -> float:
        """2|E| / (|V| T) with |V| the number of nodes that appear in the log."""
        active = len(np.union1d(self.src, self.dst))
        return 2.0 * self.num_events / (active * self.duration)


def ingest(events: list[Event], num_nodes: int, node_feats=None) -> EventStore:
    if not events:
        raise DataError("empty event list")
    src = np.array([e.src for e in events], dtype=np.int64)
    dst = np.array([e.dst for e in events], dtype=np.int64)
    ts = np.array([e.ts for e in events], dtype=np.float64)
    idx = np.array([e.idx for e in events], dtype=np.int64)
    widths = {0 if e.edge_feat is None else len(e.edge_feat) for e in events}
    if len(widths) > 1:
        raise DataError(f"inconsistent edge feature widths {sorted(widths)}")
    d_e = widths.pop()
    feats = (np.stack([np.asarray(e.edge_feat, dtype=np.float64) for e in events])
             if d_e else np.zeros((len(events), 0)))
    labels = np.array([e.label for e in events], dtype=np.float64)
    return from_arrays(src, dst, ts, num_nodes, feats, node_feats, labels, order_key=idx)


def from_arrays(src, dst, ts, num_nodes: int, edge_feats=None, node_feats=None, labels=None,
                order_key=None) -> EventStore:
    """Validate, sort by (ts, order_key) and shift time origin to 0."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.float64)
    m = len(src)
    if m == 0:
        raise DataError("empty event list")
    if np.isnan(ts).any():
        raise DataError("NaN timestamp")
    for name, arr in (("src", src), ("dst", dst)):
        if arr.min() < 0 or arr.max() >= num_nodes:
            raise DataError(f"{name} node id out of range [0, {num_nodes})")
    if node_feats is not None:
        node_feats = np.asarray(node_feats, dtype=np.float64)
        if node_feats.ndim != 2 or node_feats.shape[0] != num_nodes:
            raise DataError(f"node feature matrix has {node_feats.shape[0]} rows, expected {num_nodes}")
    if edge_feats is not None:
        edge_feats = np.asarray(edge_feats, dtype=np.float64).reshape(m, -1)
    key = np.arange(m) if order_key is None else np.asarray(order_key)
    order = np.lexsort((key, ts))
    offset = float(ts.min())
    return EventStore(src[order], dst[order], ts[order] - offset, num_nodes,
                      None if edge_feats is None else edge_feats[order], node_feats,
                      None if labels is None else np.asarray(labels)[order], offset)


# ---------------------------------------------------------------- history ledger


class InteractionHistory:
    """Sparse ledger {u, w} -> [count, last timestamp] over committed events."""

    def __init__(self):
        self._rec: dict[tuple[int, int], list] = {}
        self.last_ts = -np.inf

    @staticmethod
    def _key(u: int, w: int) -> tuple[int, int]:
        return (u, w) if u <= w else (w, u)

    def lookup(self, u: int, w: int) -> tuple[int, float] | None:
        rec = self._rec.get((u, w) if u <= w else (w, u))
        return None if rec is None else (rec[0], rec[1])

    def lookup_many(self, u, w) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized lookup: (count, last ts) arrays, count 0 where absent."""
        u = np.asarray(u, dtype=np.int64)
        w = np.asarray(w, dtype=np.int64)
        lo, hi = np.minimum(u, w).ravel(), np.maximum(u, w).ravel()
        span = int(hi.max()) + 1 if len(hi) else 1
        keys, inv = np.unique(lo * span + hi, return_inverse=True)
        get = self._rec.get
        found = [get(k) for k in zip((keys // span).tolist(), (keys % span).tolist())]
        cnt = np.array([0 if r is None else r[0] for r in found], dtype=np.int64)
        last = np.array([np.nan if r is None else r[1] for r in found], dtype=np.float64)
        inv = inv.reshape(-1)
        return cnt[inv].reshape(u.shape), last[inv].reshape(u.shape)

    def commit(self, src, dst, ts) -> None:
        """Record a batch of interactions (arrays or sequences, sorted by ts)."""
        ts = np.asarray(ts, dtype=np.float64)
        if len(ts) == 0:
            return
        if ts.min() < self.last_ts or np.any(np.diff(ts) < 0):
            raise ValueError("history commit out of chronological order")
        rec = self._rec
        for u, w, t in zip(np.asarray(src).tolist(), np.asarray(dst).tolist(), ts.tolist()):
            k = (u, w) if u <= w else (w, u)
            r = rec.get(k)
            if r is None:
                rec[k] = [1, t]
            else:
                r[0] += 1
                r[1] = t
        self.last_ts = float(ts[-1])

    def commit_events(self, events: list[Event]) -> None:
        self.commit([e.src for e in events], [e.dst for e in events], [e.ts for e in events])

    def commit_range(self, store: EventStore, lo: int, hi: int) -> None:
        self.commit(store.src[lo:hi], store.dst[lo:hi], store.ts[lo:hi])

    def reset(self) -> None:
        self._rec.clear()
        self.last_ts = -np.inf

    def copy(self) -> "InteractionHistory":
        h = InteractionHistory()
        h._rec = {k: list(v) for k, v in self._rec.items()}
        h.last_ts = self.last_ts
        return h

    def __len__(self):
        return len(self._rec)


# ---------------------------------------------------------------- file formats

CSV_COLUMNS = ("src", "dst", "ts", "state_label")


def read_jodie_csv(path, bipartite: bool = False, num_nodes: int | None = None) -> EventStore:
    """Read ``src,dst,ts,state_label,f1..f_de`` rows after one header line.

    With ``bipartite`` the destination ids are offset past the largest source id
    so both sides share one node-id space.
    """
    import pandas as pd

    path = Path(path)
    try:
        header = path.open().readline().strip()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    cols = [c for c in header.split(",") if c != ""]
    if len(cols) < len(CSV_COLUMNS):
        raise DataError(f"{path}: missing column '{CSV_COLUMNS[len(cols)]}' in header")
    try:
        df = pd.read_csv(path, header=None, skiprows=1, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: unparseable row ({exc})") from exc
    if df.shape[1] < len(CSV_COLUMNS):
        raise DataError(f"{path}: missing column '{CSV_COLUMNS[df.shape[1]]}' in rows")
    if df.isna().to_numpy().any():
        raise DataError(f"{path}: ragged or empty fields")
    arr = df.to_numpy()
    src = arr[:, 0].astype(np.int64)
    dst = arr[:, 1].astype(np.int64)
    if bipartite:
        dst = dst + src.max() + 1
    n = int(max(src.max(), dst.max()) + 1) if num_nodes is None else num_nodes
    return from_arrays(src, dst, arr[:, 2], n, arr[:, 4:], None, arr[:, 3])


def write_jodie_csv(store: EventStore, path) -> None:
    feats = store.edge_feats
    names = list(CSV_COLUMNS) + [f"f{i + 1}" for i in range(feats.shape[1])]
    table = np.column_stack([store.src, store.dst, store.ts + store.time_offset,
                             store.labels, feats])
    fmt = ["%d", "%d", "%.17g", "%.17g"] + ["%.17g"] * feats.shape[1]
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt=fmt)


STORE_MAGIC = b"CDGTSTOR"
STORE_VERSION = 1


def save_store(store: EventStore, path) -> None:
    """Magic, u32 version, u64 N, M, d_e, d_n, f64 time offset, then little-endian
    src, dst (i64), ts, labels (f64), edge features (M*d_e), node features (N*d_n)."""
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<I4Qd", STORE_VERSION, store.num_nodes, store.num_events,
                             store.edge_dim, store.node_dim, store.time_offset))
        for arr, dt in ((store.src, "<i8"), (store.dst, "<i8"), (store.ts, "<f8"),
                        (store.labels, "<f8"), (store.edge_feats, "<f8"), (store.node_feats, "<f8")):
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_store(path) -> EventStore:
    raw = Path(path).read_bytes()
    if raw[:8] != STORE_MAGIC:
        raise DataError(f"{path}: not a store cache (bad magic)")
    version, n, m, d_e, d_n, offset = struct.unpack_from("<I4Qd", raw, 8)
    if version != STORE_VERSION:
        raise DataError(f"{path}: unsupported store cache version {version}")
    pos = 8 + struct.calcsize("<I4Qd")

    def take(dt, count):
        nonlocal pos
        a = np.frombuffer(raw, dtype=dt, count=count, offset=pos).copy()
        pos += 8 * count
        return a

    src, dst = take("<i8", m), take("<i8", m)
    ts, labels = take("<f8", m), take("<f8", m)
    ef = take("<f8", m * d_e).reshape(m, d_e)
    nf = take("<f8", n * d_n).reshape(n, d_n)
    if pos != len(raw):
        raise DataError(f"{path}: store cache size mismatch")
    return EventStore(src, dst, ts, n, ef, nf, labels, offset)


def load_dataset(path, bipartite: bool = False) -> EventStore:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    with path.open("rb") as fh:
        magic = fh.read(8)
    if magic == STORE_MAGIC:
        return load_store(path)
    return read_jodie_csv(path, bipartite=bipartite)
