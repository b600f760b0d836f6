"""Training loop, evaluation protocol, node classification, ablations and
score decomposition."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import numerics as nx
from .batching import TokenBatch, build_batch
from .data import Splits, negative_sample
from .events import EventStore, InteractionHistory, LeakError
from .metrics import average_precision, roc_auc
from .model import ABLATION_FLAGS, CorDGT, ModelConfig, bce_loss
from .proximity import TdParams, temporal_distance
from .sampler import sample_many

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Loss became NaN or infinite during training."""


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 50
    patience: int = 3
    lr: float = 1e-3
    fanouts: tuple = (20, 1)
    seed: int = 0
    precision: int = 32           # 32 -> float32 "train" mode, 64 -> float64 "test" mode
    max_train_batches: int | None = None
    max_eval_batches: int | None = None
    clip_norm: float = 0.0        # global gradient-norm cap; 0 disables

    def __post_init__(self):
        self.fanouts = tuple(int(n) for n in self.fanouts)
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")


def td_params_for(model_cfg: ModelConfig, td: TdParams) -> TdParams:
    """Apply the alpha/beta ablation flags."""
    if model_cfg.alpha_zero:
        td = replace(td, alpha=0.0)
    if model_cfg.beta_zero:
        td = replace(td, beta=0.0)
    return td


class HistoryCursor:
    """Advances the ledger along the full log, committing only events strictly
    earlier than the batch about to be scored."""

    def __init__(self, store: EventStore, history: InteractionHistory | None = None):
        self.store = store
        self.history = history if history is not None else InteractionHistory()
        self.upto = 0

    def advance(self, first_idx: int) -> None:
        ts = self.store.ts
        target = min(first_idx, int(np.searchsorted(ts, ts[first_idx], side="left")))
        if target > self.upto:
            self.history.commit_range(self.store, self.upto, target)
            self.upto = target


def link_batch(store: EventStore, history: InteractionHistory, src, dst, ts, neg,
               model_cfg: ModelConfig, td: TdParams, fanouts, rng, strict: bool = True) -> TokenBatch:
    """Positive sequences (C(u), C(v)) followed by negatives (C(u), C(r))."""
    strategy = "recent" if model_cfg.recent_sampling else "uniform"
    b = len(src)
    sets = sample_many(store, np.concatenate([src, dst, neg]), np.tile(ts, 3), fanouts, strategy, rng)
    cu, cv, cr = sets[:b], sets[b:2 * b], sets[2 * b:]
    groups = list(zip(cu, cv)) + list(zip(cu, cr))
    return build_batch(groups, history, td, unitary=model_cfg.stpe_u_only, strict=strict)


@dataclass
class TrainResult:
    model: CorDGT
    best_val_ap: float
    best_epoch: int
    log: list[dict] = field(default_factory=list)


def _rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(2)]


def evaluate(model: CorDGT, store: EventStore, indices, td: TdParams, fanouts=(20, 1),
             batch_size: int = 100, seed: int = 0, max_batches: int | None = None) -> dict:
    """AP/AUC with one fresh negative per positive.

    The ledger is rebuilt from the start of the log and advanced chronologically:
    each batch sees every event strictly before it, never its own.
    """
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("cannot evaluate an empty split")
    neg_rng, smp_rng = _rngs(seed)
    cursor = HistoryCursor(store)
    td = td_params_for(model.cfg, td)
    pos_all, neg_all, losses = [], [], []
    with nx.no_grad():
        for bi, lo in enumerate(range(0, len(indices), batch_size)):
            if max_batches is not None and bi >= max_batches:
                break
            idx = indices[lo:lo + batch_size]
            cursor.advance(int(idx[0]))
            src, dst, ts = store.src[idx], store.dst[idx], store.ts[idx]
            neg = negative_sample(src, dst, store.num_nodes, neg_rng)
            batch = link_batch(store, cursor.history, src, dst, ts, neg, model.cfg, td, fanouts, smp_rng)
            s = model.scores(batch)
            b = len(idx)
            losses.append(float(bce_loss(s[:b], s[b:]).data))
            pos_all.append(s.data[:b])
            neg_all.append(s.data[b:])
    pos, neg = np.concatenate(pos_all), np.concatenate(neg_all)
    scores = np.concatenate([pos, neg])
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return {"ap": average_precision(scores, labels), "auc": roc_auc(scores, labels),
            "loss": float(np.mean(losses)), "n": int(len(pos))}


def train(store: EventStore, splits: Splits, model_cfg: ModelConfig, cfg: TrainConfig,
          td: TdParams = TdParams(), on_metrics: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch training in chronological order with early stopping on val AP.

    Per batch: negatives, contextual sets for u, v, r, distances from the ledger
    as of the previous batch, forward/backward/Adam, and only then the batch's
    events enter the ledger.
    """
    mode = "train" if cfg.precision == 32 else "test"
    with nx.using_mode(mode):
        model = CorDGT(model_cfg, seed=cfg.seed, node_feats=store.node_feats)
        opt = nx.Adam(model.params, lr=cfg.lr)
        tdp = td_params_for(model_cfg, td)
        tstore = splits.train_store if splits.train_store is not None else store
        train_idx = (np.arange(len(splits.train)) if splits.mode == "inductive"
                     else np.asarray(splits.train))
        neg_rng, smp_rng = _rngs(cfg.seed + 1)
        best_ap, best_epoch, best_state = -1.0, -1, model.state_dict()
        records: list[dict] = []
        stale = 0
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            cursor = HistoryCursor(tstore)
            losses = []
            for bi, lo in enumerate(range(0, len(train_idx), cfg.batch_size)):
                if cfg.max_train_batches is not None and bi >= cfg.max_train_batches:
                    break
                idx = train_idx[lo:lo + cfg.batch_size]
                cursor.advance(int(idx[0]))
                src, dst, ts = tstore.src[idx], tstore.dst[idx], tstore.ts[idx]
                neg = negative_sample(src, dst, store.num_nodes, neg_rng)
                batch = link_batch(tstore, cursor.history, src, dst, ts, neg, model_cfg, tdp,
                                   cfg.fanouts, smp_rng)
                s = model.scores(batch)
                b = len(idx)
                loss = bce_loss(s[:b], s[b:])
                lv = float(loss.data)
                if not np.isfinite(lv):
                    raise DivergenceError(f"loss became {lv} at epoch {epoch} batch {bi}")
                opt.zero_grad()
                loss.backward()
                if cfg.clip_norm > 0:
                    nx.clip_grad_norm(model.params, cfg.clip_norm)
                opt.step()
                losses.append(lv)
            val = evaluate(model, store, splits.val, td, cfg.fanouts, cfg.batch_size,
                           seed=cfg.seed + 1000, max_batches=cfg.max_eval_batches)
            wall = (time.perf_counter() - t0) * 1000
            rec_train = {"epoch": epoch, "split": "train", "ap": None, "auc": None,
                         "loss": float(np.mean(losses)), "wall_ms": wall}
            rec_val = {"epoch": epoch, "split": "val", "ap": val["ap"], "auc": val["auc"],
                       "loss": val["loss"], "wall_ms": wall}
            for rec in (rec_train, rec_val):
                records.append(rec)
                if on_metrics:
                    on_metrics(rec)
            log.info("epoch %d loss %.4f val ap %.4f auc %.4f (%.0f ms)", epoch,
                     rec_train["loss"], val["ap"], val["auc"], wall)
            if val["ap"] > best_ap:
                best_ap, best_epoch, best_state, stale = val["ap"], epoch, model.state_dict(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        model.load_state_dict(best_state)
    return TrainResult(model, best_ap, best_epoch, records)


def evaluate_split(result_model: CorDGT, store: EventStore, splits: Splits, split: str,
                   td: TdParams, cfg: TrainConfig) -> dict:
    mode = "train" if cfg.precision == 32 else "test"
    seed = cfg.seed + (1000 if split == "val" else 2000)
    with nx.using_mode(mode):
        result_model.cast()
        return evaluate(result_model, store, getattr(splits, split), td, cfg.fanouts,
                        cfg.batch_size, seed=seed, max_batches=cfg.max_eval_batches)


# ---------------------------------------------------------------- leak probe


def leak_probe(store: EventStore, lo: int, hi: int, td: TdParams = TdParams(),
               order: str = "forward-then-commit") -> dict:
    """Score the positive pairs of events [lo, hi) against a ledger holding all
    events before ``lo``.  With ``commit-then-forward`` the batch is committed
    first, so pairs first seen inside the batch get a TD below td_max (or a
    record at/after t_pred).  Reports whether any such contamination occurred."""
    history = InteractionHistory()
    history.commit_range(store, 0, lo)
    fresh = [history.lookup(int(u), int(v)) is None for u, v in zip(store.src[lo:hi], store.dst[lo:hi])]
    if order == "commit-then-forward":
        history.commit_range(store, lo, hi)
    elif order != "forward-then-commit":
        raise ValueError(f"unknown order {order!r}")
    tds, leaked = [], False
    for i, is_fresh in zip(range(lo, hi), fresh):
        u, v, t = int(store.src[i]), int(store.dst[i]), float(store.ts[i])
        rec = history.lookup(u, v)
        try:
            temporal_distance(rec, u == v, t, td, strict=True)
        except LeakError:
            leaked = True
        value = temporal_distance(rec, u == v, t, td, strict=False) if t > 0 or rec is None else 0.0
        tds.append(value)
        if is_fresh and u != v and value < td.td_max:
            leaked = True
    if order == "forward-then-commit":
        history.commit_range(store, lo, hi)
    return {"leak": leaked, "td": np.asarray(tds), "fresh": np.asarray(fresh)}


# ---------------------------------------------------------------- node classification


def node_embeddings(model: CorDGT, store: EventStore, indices, td: TdParams, fanouts=(20, 1),
                    batch_size: int = 200, seed: int = 0) -> np.ndarray:
    """z(src, ts) for the given events, with unitary encodings toward src only."""
    indices = np.asarray(indices)
    rng = np.random.default_rng(seed)
    cursor = HistoryCursor(store)
    td = td_params_for(model.cfg, td)
    strategy = "recent" if model.cfg.recent_sampling else "uniform"
    out = []
    with nx.no_grad():
        for lo in range(0, len(indices), batch_size):
            idx = indices[lo:lo + batch_size]
            cursor.advance(int(idx[0]))
            sets = sample_many(store, store.src[idx], store.ts[idx], fanouts, strategy, rng)
            groups = [(c,) for c in sets]
            batch = build_batch(groups, cursor.history, td, unitary=True)
            out.append(model.embed(batch).data[:, 0])
    return np.concatenate(out)


@dataclass
class NodeClassResult:
    auc: float
    head: dict
    train_loss: list


def node_classify(model: CorDGT, store: EventStore, splits: Splits, td: TdParams = TdParams(),
                  fanouts=(20, 1), epochs: int = 200, lr: float = 1e-2, seed: int = 0,
                  max_events: int | None = None) -> NodeClassResult:
    """Frozen encoder, two-layer classifier head on z(src, t) with BCE; test AUC."""
    labels = store.labels
    train_idx, test_idx = np.asarray(splits.train), np.asarray(splits.test)
    if max_events is not None:
        train_idx, test_idx = train_idx[-max_events:], test_idx[:max_events]
    y_tr, y_te = labels[train_idx], labels[test_idx]
    for name, y in (("train", y_tr), ("test", y_te)):
        if np.all(y == y[0]):
            raise ValueError(f"node labels in the {name} split are all {y[0]:g}; AUC undefined")
    z_tr = node_embeddings(model, store, train_idx, td, fanouts, seed=seed)
    z_te = node_embeddings(model, store, test_idx, td, fanouts, seed=seed + 1)
    mu, sd = z_tr.mean(axis=0), z_tr.std(axis=0) + 1e-8
    z_tr, z_te = (z_tr - mu) / sd, (z_te - mu) / sd
    rng = np.random.default_rng(seed)
    head: dict = {}
    d = z_tr.shape[1]
    nx.init_mlp(head, "cls", (d, d, 1), rng)
    opt = nx.Adam(head, lr=lr)
    pos_w = 0.5 / max(y_tr.mean(), 1e-6)
    neg_w = 0.5 / max(1 - y_tr.mean(), 1e-6)
    weights = np.where(y_tr > 0, pos_w, neg_w)
    losses = []
    x = nx.Tensor(z_tr)
    for _ in range(epochs):
        p = nx.clip(nx.sigmoid(nx.reshape(nx.mlp(head, "cls", x), (len(y_tr),))), 1e-7, 1 - 1e-7)
        ll = nx.add(nx.mul(nx.log(p), y_tr), nx.mul(nx.log(nx.add(nx.scale(p, -1.0), 1.0)), 1 - y_tr))
        loss = nx.scale(nx.sum_(nx.mul(ll, weights)), -1.0 / len(y_tr))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    with nx.no_grad():
        s = nx.sigmoid(nx.mlp(head, "cls", nx.Tensor(z_te))).data[:, 0]
    return NodeClassResult(roc_auc(s, y_te), {k: v.data for k, v in head.items()}, losses)


# ---------------------------------------------------------------- ablations

ABLATION_ROWS = {
    "full": {},
    "alpha_zero": {"alpha_zero": True},
    "beta_zero": {"beta_zero": True},
    "no_sd": {"no_sd": True},
    "no_td": {"no_td": True},
    "stpe_u_only": {"stpe_u_only": True},
    "no_mask": {"no_mask": True},
    "recent_sampling": {"recent_sampling": True},
}


def run_ablation(store: EventStore, splits: Splits, base: ModelConfig, cfg: TrainConfig,
                 td: TdParams = TdParams(), variants=None, split: str = "test") -> list[dict]:
    """Train and evaluate each variant with identical seeds; one row per variant."""
    variants = list(ABLATION_ROWS) if variants is None else list(variants)
    rows = []
    for name in variants:
        flags = ABLATION_ROWS[name] if name in ABLATION_ROWS else _parse_flags(name)
        mcfg = replace(copy.deepcopy(base), **flags)
        res = train(store, splits, mcfg, cfg, td)
        m = evaluate_split(res.model, store, splits, split, td, cfg)
        rows.append({"variant": name, "ap": m["ap"], "auc": m["auc"], "best_val_ap": res.best_val_ap,
                     "epochs": res.best_epoch + 1})
    return rows


def _parse_flags(name: str) -> dict:
    flags = {}
    for f in name.split("+"):
        if f not in ABLATION_FLAGS:
            raise ValueError(f"unknown ablation flag {f!r}")
        flags[f] = True
    return flags


# ---------------------------------------------------------------- decomposition


def decompose_scores(model: CorDGT, store: EventStore, indices, td: TdParams, fanouts=(20, 1),
                     seed: int = 0) -> dict:
    """Per-token contributions phi . h_w for positive links at ``indices``.

    Returns arrays over real (non-padding) tokens: td_u, td_v, sd_u, sd_v,
    contribution, weight (1 / real tokens in the token's segment) and the
    link index, plus the per-link logits; sum(weight * contribution) over a
    link's tokens equals its logit.
    """
    if model.cfg.head != "linear":
        raise ValueError("decomposition needs a model trained with head='linear'")
    indices = np.asarray(indices)
    neg_rng, smp_rng = _rngs(seed)
    cursor = HistoryCursor(store)
    cursor.advance(int(indices[0]))
    tdp = td_params_for(model.cfg, td)
    src, dst, ts = store.src[indices], store.dst[indices], store.ts[indices]
    neg = negative_sample(src, dst, store.num_nodes, neg_rng)
    cfg_pos = replace(model.cfg, stpe_u_only=False)
    batch = link_batch(store, cursor.history, src, dst, ts, neg, cfg_pos, tdp, fanouts, smp_rng)
    b = len(indices)
    with nx.no_grad():
        contrib = model.decompose(batch)[:b]
        logits = model.logits(batch).data[:b]
    real = ~batch.pad[:b]
    counts = np.stack([(real & (batch.segment[:b] == s)).sum(axis=1) for s in range(2)], axis=1)
    weight = 1.0 / np.take_along_axis(counts, batch.segment[:b], axis=1)
    link = np.repeat(np.arange(b)[:, None], batch.shape[1], axis=1)
    sel = real
    return {
        "td_u": batch.td[:b, :, 0][sel], "td_v": batch.td[:b, :, 1][sel],
        "sd_u": batch.sd[:b, :, 0][sel], "sd_v": batch.sd[:b, :, 1][sel],
        "contribution": contrib[sel], "weight": weight[sel], "link": link[sel],
        "logits": logits,
    }


def bucket_heatmap(x, y, values, bins: int = 5) -> np.ndarray:
    """Mean of ``values`` on a bins x bins grid splitting the ranges of x and y
    evenly; empty cells are NaN.  Row index follows x, column follows y."""
    x, y, values = map(np.asarray, (x, y, values))

    def bucket(a):
        lo, hi = a.min(), a.max()
        if hi == lo:
            return np.zeros(len(a), dtype=int)
        return np.minimum(((a - lo) / (hi - lo) * bins).astype(int), bins - 1)

    bx, by = bucket(x), bucket(y)
    total = np.zeros((bins, bins))
    count = np.zeros((bins, bins))
    np.add.at(total, (bx, by), values)
    np.add.at(count, (bx, by), 1)
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
