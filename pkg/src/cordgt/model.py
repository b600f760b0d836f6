"""Transformer encoder over contextual tokens, link scorer and loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .batching import TokenBatch, build_mask, parent_matrix
from .encoding import EncConfig, init_stpe, project_distances

ABLATION_FLAGS = ("no_td", "no_sd", "stpe_u_only", "no_mask", "alpha_zero", "beta_zero",
                  "recent_sampling")


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 6
    hidden: int = 64
    head_dim: int = 0     # per-head query/key/value width; 0 means ``hidden``
    node_dim: int = 0
    edge_dim: int = 0
    enc: EncConfig = field(default_factory=EncConfig)
    head: str = "mlp"     # "mlp" scorer or "linear" (decomposable) scorer
    joint: bool = True    # encode both contextual sets in one sequence
    no_td: bool = False
    no_sd: bool = False
    stpe_u_only: bool = False
    no_mask: bool = False
    alpha_zero: bool = False
    beta_zero: bool = False
    recent_sampling: bool = False

    def __post_init__(self):
        if isinstance(self.enc, dict):
            self.enc = EncConfig(**self.enc)
        if self.heads < 1 or self.hidden < 1 or self.layers < 0 or self.head_dim < 0:
            raise ValueError("heads and hidden must be positive, layers and head_dim non-negative")
        if self.head not in ("mlp", "linear"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.no_td and (self.alpha_zero or self.beta_zero):
            raise ValueError("no_td conflicts with alpha_zero/beta_zero")
        if self.no_td and self.no_sd and self.node_dim == 0:
            raise ValueError("no input left: no_td and no_sd without node features")

    @property
    def key_dim(self) -> int:
        return self.head_dim or self.hidden

    @property
    def input_dim(self) -> int:
        return (self.node_dim + (0 if self.no_td else self.enc.d_td)
                + (0 if self.no_sd else self.enc.d_sd))

    def to_dict(self) -> dict:
        return asdict(self)


class CorDGT:
    def __init__(self, cfg: ModelConfig, seed: int = 0, node_feats: np.ndarray | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.node_feats = (np.zeros((1, cfg.node_dim)) if node_feats is None
                           else np.asarray(node_feats, dtype=np.float64))
        p: dict[str, nx.Tensor] = {}
        init_stpe(p, cfg.enc, rng, use_td=not cfg.no_td, use_sd=not cfg.no_sd)
        d = cfg.hidden
        nx.init_linear(p, "input", cfg.input_dim, d, rng)
        for l in range(cfg.layers):
            pre = f"layer{l}"
            for ln in ("ln1", "ln2"):
                p[f"{pre}.{ln}.g"] = nx.parameter(np.ones(d))
                p[f"{pre}.{ln}.b"] = nx.parameter(np.zeros(d))
            inner = cfg.heads * cfg.key_dim
            for w in ("q", "k", "v"):
                nx.init_linear(p, f"{pre}.{w}", d, inner, rng, bias=False)
            nx.init_linear(p, f"{pre}.o", inner, d, rng, bias=False)
            if cfg.edge_dim:
                nx.init_linear(p, f"{pre}.ek", cfg.edge_dim, inner, rng, bias=False)
                nx.init_linear(p, f"{pre}.ev", cfg.edge_dim, inner, rng, bias=False)
            nx.init_mlp(p, f"{pre}.ffn", (d, 4 * d, d), rng)
        if cfg.head == "mlp":
            nx.init_mlp(p, "score", (2 * d, d, 1), rng)
        else:
            nx.init_linear(p, "phi", d, 1, rng, bias=False)
        for k, t in p.items():
            t.name = k
        self.params = p
        self.last_attention: list[np.ndarray] = []

    # ------------------------------------------------------------ state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValueError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.asarray(v, dtype=nx.default_dtype()).copy()

    def cast(self) -> None:
        """Re-cast parameters to the current numerics dtype."""
        for t in self.params.values():
            t.data = t.data.astype(nx.default_dtype())

    # ------------------------------------------------------------ forward

    def inputs(self, batch: TokenBatch) -> nx.Tensor:
        cfg = self.cfg
        parts = []
        if cfg.node_dim:
            nf = np.where(batch.pad[..., None], 0.0, self.node_feats[np.maximum(batch.node, 0)])
            parts.append(nx.Tensor(nf))
        if not (cfg.no_td and cfg.no_sd):
            pe = project_distances(self.params, cfg.enc, None if cfg.no_td else batch.td,
                                   None if cfg.no_sd else batch.sd)   # (B, T, k, d_td + d_sd)
            parts.append(nx.sum_(pe, axis=2))   # sum over targets
        x = parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)
        return nx.linear(self.params, "input", x)

    def _ln(self, name: str, x: nx.Tensor) -> nx.Tensor:
        return nx.add(nx.mul(nx.layer_norm(x), self.params[f"{name}.g"]), self.params[f"{name}.b"])

    def encode(self, batch: TokenBatch) -> nx.Tensor:
        """Final-layer token embeddings (B, T, d)."""
        self.last_attention = []
        mask = build_mask(batch.ts, batch.hop, batch.pad, use_mask=not self.cfg.no_mask)
        pmat = edge = None
        if self.cfg.edge_dim:
            pmat = parent_matrix(batch.parent, batch.pad)
            edge = batch.edge_feat
        h = self.inputs(batch)
        for l in range(self.cfg.layers):
            pre = f"layer{l}"
            a, w = cordgt_attention(self.params, pre, self._ln(f"{pre}.ln1", h), mask.allowed,
                                    self.cfg.heads, edge, pmat)
            self.last_attention.append(w)
            h = nx.add(a, h)
            h = nx.add(nx.mlp(self.params, f"{pre}.ffn", self._ln(f"{pre}.ln2", h)), h)
        return h

    def embed(self, batch: TokenBatch) -> nx.Tensor:
        """Per-root embeddings (B, S, d) by mean pooling each segment's real tokens."""
        if self.cfg.joint or batch.num_segments == 1:
            h = self.encode(batch)
            z = pool_segments(h, batch)
        else:
            single = batch.split_segments()
            z = pool_segments(self.encode(single), single)
            b, s = batch.node.shape[0], batch.num_segments
            z = nx.reshape(z, (b, s, z.shape[-1]))
        return z

    def logits(self, batch: TokenBatch) -> nx.Tensor:
        z = self.embed(batch)
        return score_logits(self.params, z, self.cfg.head)

    def scores(self, batch: TokenBatch) -> nx.Tensor:
        return nx.sigmoid(self.logits(batch))

    def decompose(self, batch: TokenBatch) -> np.ndarray:
        """Per-token contribution phi . h_w (B, T) under the linear head."""
        if "phi.w" not in self.params:
            raise ValueError("decomposition needs the linear scoring head")
        h = self.encode(batch)
        return (h.data @ self.params["phi.w"].data)[..., 0]


def cordgt_attention(params: dict, prefix: str, h: nx.Tensor, allowed: np.ndarray, heads: int,
                     edge_feat: np.ndarray | None = None, pmat: np.ndarray | None = None):
    """Masked multi-head attention with interaction features on tree edges.

    ``allowed`` is (B, T, T) query x key.  Instead of a dense (T, T, d_e) edge
    tensor, each token carries the feature of the interaction linking it to its
    parent (``edge_feat`` (B, T, d_e)) and ``pmat[b, i, j] = 1`` marks j as the
    parent of i; e_ij is f_i on (child, parent) pairs and f_j on (parent, child)
    pairs.  Returns the projected output and the attention weights.
    """
    b, t, _ = h.shape
    inner = params[f"{prefix}.q.w"].shape[1]
    dh = inner // heads

    def split(x):
        return nx.transpose(nx.reshape(x, (b, t, heads, dh)), (0, 2, 1, 3))

    q = split(nx.linear(params, f"{prefix}.q", h))
    k = split(nx.linear(params, f"{prefix}.k", h))
    v = split(nx.linear(params, f"{prefix}.v", h))
    scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2)))
    use_edges = edge_feat is not None and edge_feat.shape[-1] > 0
    if use_edges:
        f = nx.Tensor(edge_feat)
        pm = pmat[:, None]
        pt = np.swapaxes(pm, -1, -2)
        ge = split(nx.linear(params, f"{prefix}.ek", f))
        own = nx.sum_(nx.mul(q, ge), axis=-1, keepdims=True)
        cross = nx.matmul(q, nx.transpose(ge, (0, 1, 3, 2)))
        scores = nx.add(scores, nx.add(nx.mul(own, pm), nx.mul(cross, pt)))
    scores = nx.masked_fill(nx.scale(scores, 1.0 / np.sqrt(dh)), allowed[:, None])
    w = nx.row_softmax(scores)
    out = nx.matmul(w, v)
    if use_edges:
        gv = split(nx.linear(params, f"{prefix}.ev", f))
        to_parent = nx.sum_(nx.mul(w, pm), axis=-1, keepdims=True)
        out = nx.add(out, nx.add(nx.mul(to_parent, gv), nx.matmul(nx.mul(w, pt), gv)))
    out = nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (b, t, inner))
    return nx.linear(params, f"{prefix}.o", out), w.data


def pool_segments(h: nx.Tensor, batch: TokenBatch) -> nx.Tensor:
    seg = np.arange(batch.num_segments)
    w = ((batch.segment[:, None, :] == seg[None, :, None]) & ~batch.pad[:, None, :]).astype(np.float64)
    if (w.sum(axis=-1) == 0).any():
        raise ValueError("segment with no real tokens")
    w /= w.sum(axis=-1, keepdims=True)
    return nx.matmul(nx.Tensor(w), h)


def score_logits(params: dict, z: nx.Tensor, head: str = "mlp") -> nx.Tensor:
    """Pre-sigmoid link score from root embeddings z (B, 2, d)."""
    b, _, d = z.shape
    if head == "linear":
        zs = nx.sum_(z, axis=1)
        out = nx.linear(params, "phi", zs)
    else:
        out = nx.mlp(params, "score", nx.reshape(z, (b, 2 * d)))
    return nx.reshape(out, (b,))


def bce_loss(pos: nx.Tensor, neg: nx.Tensor, eps: float = 1e-7) -> nx.Tensor:
    """mean(-log S_pos) + mean(-log(1 - S_neg)) on clamped probabilities."""
    lp = nx.log(nx.clip(pos, eps, 1 - eps))
    ln = nx.log(nx.clip(nx.add(nx.scale(neg, -1.0), 1.0), eps, 1 - eps))
    b_pos, b_neg = pos.data.size, neg.data.size
    return nx.scale(nx.add(nx.scale(nx.sum_(lp), 1.0 / b_pos), nx.scale(nx.sum_(ln), 1.0 / b_neg)), -1.0)
