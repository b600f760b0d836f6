"""Spatial and temporal distance between a contextual node and a target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import LeakError
from .sampler import ContextualSet


@dataclass(frozen=True)
class TdParams:
    """Weights of the intensity and recency terms plus the two sentinels.

    ``td_max`` is raised to ``alpha + beta`` when that bound is larger, so the
    "never interacted" value always sits above every finite distance.
    """

    alpha: float = 1.0
    beta: float = 10.0
    td_max: float = 10.0
    sd_inf: int = 5

    def __post_init__(self):
        # zero is allowed for the alpha/beta ablations
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        object.__setattr__(self, "td_max", max(self.td_max, self.alpha + self.beta))

    @classmethod
    def for_hops(cls, num_hops: int, **kw) -> "TdParams":
        return cls(sd_inf=2 * num_hops + 1, **kw)


def poisson_mle(n: int, t_n: float) -> float:
    """Maximum-likelihood rate of a homogeneous Poisson process observed as ``n``
    events, the last at ``t_n`` (origin 0)."""
    if n < 1:
        raise ValueError("need at least one event")
    if t_n <= 0:
        raise ValueError("intensity undefined for t_n <= 0")
    return n / t_n


def temporal_distance(record, same_node: bool, t_pred: float, params: TdParams,
                      strict: bool = True) -> float:
    """``record`` is ``(n, t_n)`` from the history ledger or None.

    With ``strict`` a record at or after ``t_pred`` raises LeakError; the leak
    probe turns it off to observe the contaminated value.
    """
    if same_node:
        return 0.0
    if record is None:
        return params.td_max
    n, t_n = record
    if strict and not t_n < t_pred:
        raise LeakError(f"history has interaction at {t_n} >= prediction time {t_pred}")
    if t_pred <= 0:
        raise ValueError("temporal distance needs t_pred > 0")
    return params.alpha * t_n / (t_pred * n) + params.beta * (t_pred - t_n) / t_pred


def temporal_distances(count, t_last, same_node, t_pred, params: TdParams,
                       strict: bool = True) -> np.ndarray:
    """Vectorized ``temporal_distance``; ``count == 0`` means no record."""
    count, t_last, same_node, t_pred = np.broadcast_arrays(
        np.asarray(count), np.asarray(t_last, dtype=np.float64), np.asarray(same_node, dtype=bool),
        np.asarray(t_pred, dtype=np.float64))
    known = (count > 0) & ~same_node
    if strict and np.any(known & ~(t_last < t_pred)):
        raise LeakError("history has an interaction at or after the prediction time")
    if np.any(known & (t_pred <= 0)):
        raise ValueError("temporal distance needs t_pred > 0")
    out = np.full(count.shape, params.td_max)
    out[same_node] = 0.0
    n, tl, tp = count[known], t_last[known], t_pred[known]
    out[known] = params.alpha * tl / (tp * n) + params.beta * (tp - tl) / tp
    return out


def min_hops(ctx: ContextualSet) -> dict[int, int]:
    """node -> smallest hop among its non-padding tokens (root at 0)."""
    out: dict[int, int] = {}
    for node, hop, pad in zip(ctx.node.tolist(), ctx.hop.tolist(), ctx.is_pad.tolist()):
        if not pad and hop < out.get(node, 1 << 30):
            out[node] = hop
    out[int(ctx.root)] = 0
    return out


def spatial_distance(ctx: ContextualSet, w: int, sd_inf: int) -> int:
    return min_hops(ctx).get(int(w), sd_inf)
