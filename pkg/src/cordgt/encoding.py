"""Sinusoidal scalar codes and the unitary/correlated positional encodings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .events import InteractionHistory
from .proximity import TdParams, min_hops, temporal_distance
from .sampler import ContextualSet


@dataclass(frozen=True)
class EncConfig:
    d: int = 50            # half-width of the sinusoidal code
    epsilon: float = 10000.0
    d_td: int = 100
    d_sd: int = 100

    def __post_init__(self):
        if self.d < 1 or self.d_td < 0 or self.d_sd < 0:
            raise ValueError("encoding widths must be positive")


def enc(x, cfg: EncConfig) -> np.ndarray:
    """Interleaved sin/cos code of length 2d; works elementwise on arrays."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("NaN passed to enc")
    i = np.arange(cfg.d)
    ang = cfg.epsilon * x[..., None] / 10000.0 ** (2 * i / cfg.d)
    out = np.empty(x.shape + (2 * cfg.d,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def init_stpe(params: dict, cfg: EncConfig, rng: np.random.Generator,
              use_td: bool = True, use_sd: bool = True) -> None:
    w = 2 * cfg.d
    if use_td:
        nx.init_mlp(params, "stpe.td", (w, w, cfg.d_td), rng)
    if use_sd:
        nx.init_mlp(params, "stpe.sd", (w, w, cfg.d_sd), rng)


def project_codes(params: dict, td_code, sd_code) -> nx.Tensor:
    """MLP(td_code) || MLP(sd_code) on pre-computed codes (..., 2d).

    Either code may be None when that projection is ablated away.
    """
    parts = []
    if td_code is not None:
        parts.append(nx.mlp(params, "stpe.td", nx.as_tensor(td_code)))
    if sd_code is not None:
        parts.append(nx.mlp(params, "stpe.sd", nx.as_tensor(sd_code)))
    if not parts:
        raise ValueError("positional encoding needs at least one of TD/SD")
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)


def project_distances(params: dict, cfg: EncConfig, td=None, sd=None) -> nx.Tensor:
    """``project_codes(enc(td), enc(sd))`` on distance arrays of any shape.

    Distances repeat heavily within a batch (SD takes a handful of integer
    values and TD is constant for unrelated pairs), so each MLP runs once per
    distinct value and the rows are gathered back.
    """
    parts = []
    for name, x in (("stpe.td", td), ("stpe.sd", sd)):
        if x is None:
            continue
        x = np.asarray(x, dtype=np.float64)
        uniq, inv = np.unique(x, return_inverse=True)
        table = nx.mlp(params, name, nx.Tensor(enc(uniq, cfg)))
        parts.append(nx.take_rows(table, inv.reshape(x.shape)))
    if not parts:
        raise ValueError("positional encoding needs at least one of TD/SD")
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)


def stpe_u(td: float, sd: float, params: dict, cfg: EncConfig) -> nx.Tensor:
    """MLP(enc(td)) || MLP(enc(sd)) for one token as a flat vector."""
    out = project_codes(params, enc([td], cfg) if "stpe.td.0.w" in params else None,
                        enc([sd], cfg) if "stpe.sd.0.w" in params else None)
    return nx.reshape(out, (out.shape[-1],))


def token_distances(node: int, target: int, ctx: ContextualSet, history: InteractionHistory,
                    t_pred: float, td: TdParams, pad: bool = False) -> tuple[float, float]:
    """(TD, SD) of one token toward one target whose contextual set is ``ctx``."""
    if pad:
        return td.td_max, td.sd_inf
    tdv = temporal_distance(history.lookup(node, target), node == target, t_pred, td)
    return tdv, min_hops(ctx).get(node, td.sd_inf)


def stpe_c(node: int, ctx_u: ContextualSet, ctx_v: ContextualSet, history: InteractionHistory,
           params: dict, cfg: EncConfig, td: TdParams, own_root: int | None = None) -> nx.Tensor:
    """STPE-U toward u plus STPE-U toward v.  With ``own_root`` set only the
    encoding toward that root is returned (the STPE-U-only ablation)."""
    t = ctx_u.t_pred
    if own_root is not None:
        ctx = ctx_u if own_root == ctx_u.root else ctx_v
        return stpe_u(*token_distances(node, own_root, ctx, history, t, td), params, cfg)
    a = stpe_u(*token_distances(node, ctx_u.root, ctx_u, history, t, td), params, cfg)
    b = stpe_u(*token_distances(node, ctx_v.root, ctx_v, history, t, td), params, cfg)
    return nx.add(a, b)
