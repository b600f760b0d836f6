"""Turn sampled contextual sets into fixed-shape token arrays for the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import InteractionHistory
from .proximity import TdParams, temporal_distances
from .sampler import ContextualSet


@dataclass
class TokenBatch:
    """Arrays shaped (B, T, ...) for B token sequences of length T.

    ``td``/``sd`` hold distances toward each of the ``k`` targets in the last
    axis (k=2 for pair encodings, k=1 for unitary ones).  ``segment`` tells
    which root's contextual set a token belongs to; pooling is per segment.
    """

    node: np.ndarray
    ts: np.ndarray
    hop: np.ndarray
    pad: np.ndarray
    parent: np.ndarray
    edge_feat: np.ndarray
    td: np.ndarray
    sd: np.ndarray
    segment: np.ndarray
    num_segments: int
    roots: np.ndarray  # (B, num_segments)

    @property
    def shape(self) -> tuple[int, int]:
        return self.node.shape

    def split_segments(self) -> "TokenBatch":
        """Reshape a (B, S*C) joint batch into (B*S, C) single-segment sequences."""
        b, t = self.node.shape
        s = self.num_segments
        c = t // s

        def r(a):
            return a.reshape((b * s, c) + a.shape[2:])

        parent = (self.parent - (np.arange(t) // c * c)[None, :]).reshape(b * s, c)
        return TokenBatch(r(self.node), r(self.ts), r(self.hop), r(self.pad), parent,
                          r(self.edge_feat), r(self.td), r(self.sd),
                          np.zeros((b * s, c), dtype=np.int64), 1, self.roots.reshape(b * s, 1))


def _min_hop_toward(node, hop, pad, seg_node, seg_hop, seg_pad, sd_inf: float) -> np.ndarray:
    """SD of every token in ``node`` (B, T) w.r.t. one contextual set per row,
    given as (B, C) arrays; roots sit at hop 0 so they get SD 0."""
    b, c = seg_node.shape
    base = np.arange(b)[:, None] * (int(max(node.max(), seg_node.max())) + 2)
    keys = (base + seg_node + 1)[~seg_pad]
    hops = seg_hop[~seg_pad]
    uniq, inv = np.unique(keys, return_inverse=True)
    best = np.full(len(uniq), np.inf)
    np.minimum.at(best, inv, hops)
    q = base + node + 1
    pos = np.clip(np.searchsorted(uniq, q), 0, max(len(uniq) - 1, 0))
    hit = (uniq[pos] == q) & ~pad if len(uniq) else np.zeros(q.shape, dtype=bool)
    return np.where(hit, best[pos] if len(uniq) else sd_inf, sd_inf)


def build_batch(groups: list[tuple[ContextualSet, ...]], history: InteractionHistory,
                td: TdParams, unitary: bool = False, strict: bool = True) -> TokenBatch:
    """One sequence per group: the concatenated tokens of its contextual sets.

    Pair groups ``(C(u), C(v))`` get distances toward both roots; with
    ``unitary`` each token only gets distances toward its own segment's root.
    """
    s = len(groups[0])
    c = groups[0][0].size
    b = len(groups)
    t = s * c

    def stack(field):
        return np.stack([np.concatenate([getattr(ctx, field) for ctx in g]) for g in groups])

    node, ts, hop, pad = stack("node"), stack("ts"), stack("hop"), stack("is_pad")
    edge = stack("edge_feat")
    parent = stack("parent") + np.repeat(np.arange(s) * c, c)[None, :]
    segment = np.repeat(np.arange(s), c)[None, :].repeat(b, axis=0)
    roots = np.array([[ctx.root for ctx in g] for g in groups], dtype=np.int64)
    t_pred = np.array([g[0].t_pred for g in groups])[:, None]
    k = 1 if unitary else s
    tdv = np.empty((b, t, k))
    sdv = np.empty((b, t, k))

    def distances(tok, target_root, seg_slice):
        """TD and SD of tokens ``tok`` (columns) toward one root per row."""
        nodes, pads = node[:, tok], pad[:, tok]
        tgt = np.broadcast_to(target_root[:, None], nodes.shape)
        cnt, last = history.lookup_many(np.maximum(nodes, 0), tgt)
        cnt = np.where(pads, 0, cnt)
        tdd = temporal_distances(cnt, last, (nodes == tgt) & ~pads, t_pred, td, strict)
        sdd = _min_hop_toward(nodes, hop[:, tok], pads, node[:, seg_slice], hop[:, seg_slice],
                              pad[:, seg_slice], td.sd_inf)
        return tdd, sdd

    for si in range(s):
        seg = slice(si * c, (si + 1) * c)
        if unitary:
            tdv[:, seg, 0], sdv[:, seg, 0] = distances(seg, roots[:, si], seg)
        else:
            tdv[:, :, si], sdv[:, :, si] = distances(slice(None), roots[:, si], seg)
    return TokenBatch(node, ts, hop, pad, parent, edge, tdv, sdv, segment, s, roots)


@dataclass
class AttentionMask:
    allowed: np.ndarray   # (..., T, T) query x key
    fallback: np.ndarray  # (..., T) rows reduced to self-attention


def build_mask(ts, hop, pad, use_mask: bool = True) -> AttentionMask:
    """Query q may read key k iff ts(k) < ts(q), hop(k) >= hop(q) and k is real.

    Rows left without any key fall back to attending only to themselves.
    """
    ts, hop, pad = np.asarray(ts), np.asarray(hop), np.asarray(pad)
    real_key = ~pad[..., None, :]
    if use_mask:
        allowed = ((ts[..., None, :] < ts[..., :, None])
                   & (hop[..., None, :] >= hop[..., :, None]) & real_key)
    else:
        allowed = np.broadcast_to(real_key, ts.shape + ts.shape[-1:]).copy()
    # padding queries carry nothing; keep them on their own row
    allowed &= ~pad[..., :, None]
    fallback = ~allowed.any(axis=-1)
    eye = np.eye(ts.shape[-1], dtype=bool)
    allowed |= fallback[..., :, None] & eye
    return AttentionMask(allowed, fallback)


def parent_matrix(parent, pad) -> np.ndarray:
    """P[i, j] = 1 when token j is the sampling parent of token i."""
    parent, pad = np.asarray(parent), np.asarray(pad)
    t = parent.shape[-1]
    p = (parent[..., :, None] == np.arange(t)) & ~pad[..., :, None]
    p &= parent[..., :, None] != np.arange(t)[:, None]  # roots point to themselves
    return p.astype(np.float64)


def dense_edge_features(parent, pad, edge_feat) -> np.ndarray:
    """(T, T, d_e) matrix with each tree edge's interaction feature at both
    (child, parent) and (parent, child); zeros elsewhere."""
    p = parent_matrix(parent, pad)
    f = np.asarray(edge_feat)
    out = p[..., :, :, None] * f[..., :, None, :]
    return out + np.swapaxes(out, -2, -3)
