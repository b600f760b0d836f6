"""Run configuration: flat ``key = value`` files, CORDGT_* environment
overrides and command-line flags, resolved with precedence
flag > environment > file > default."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import SplitSpec
from .encoding import EncConfig
from .model import ModelConfig
from .proximity import TdParams
from .train import TrainConfig

ENV_PREFIX = "CORDGT_"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class RunConfig:
    # data: a local CSV / cache file, or the planted synthetic generator
    dataset: str = ""
    bipartite: bool = False
    synth: bool = False
    synth_nodes: int = 200
    synth_partners: int = 10
    synth_high_pairs: int = 20
    synth_high_factor: float = 10.0
    synth_events: int = 20000
    # split
    split_mode: str = "transductive"
    mask_frac: float = 0.10
    # model
    layers: int = 2
    heads: int = 6
    hidden: int = 64
    head_dim: int = 0            # 0 = hidden width per head
    head: str = "mlp"
    joint: bool = True
    enc_d: int = 50
    epsilon: float = 10000.0
    d_td: int = 100
    d_sd: int = 100
    no_td: bool = False
    no_sd: bool = False
    stpe_u_only: bool = False
    no_mask: bool = False
    alpha_zero: bool = False
    beta_zero: bool = False
    recent_sampling: bool = False
    # distances
    alpha: float = 1.0
    beta: float = 10.0
    # training
    fanouts: tuple = (20, 1)
    batch_size: int = 100
    epochs: int = 50
    patience: int = 3
    lr: float = 1e-3
    clip_norm: float = 0.0
    seed: int = 0
    precision: int = 32
    max_train_batches: int = 0   # 0 = no cap
    max_eval_batches: int = 0
    out: str = "runs/latest"

    def __post_init__(self):
        if not self.synth and not self.dataset:
            raise ConfigError("set either dataset=<path> or synth=true")
        if self.dataset and not self.synth and not Path(self.dataset).exists():
            raise ConfigError(f"dataset not found: {self.dataset}")
        self.fanouts = tuple(int(n) for n in self.fanouts)
        try:
            self.model_config()
            self.train_config()
            self.split_spec()
            self.td_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # ------------------------------------------------------------ views

    def model_config(self, node_dim: int = 0, edge_dim: int = 0) -> ModelConfig:
        return ModelConfig(
            layers=self.layers, heads=self.heads, hidden=self.hidden, head_dim=self.head_dim,
            node_dim=node_dim, edge_dim=edge_dim, enc=EncConfig(self.enc_d, self.epsilon, self.d_td, self.d_sd),
            head=self.head, joint=self.joint, no_td=self.no_td, no_sd=self.no_sd,
            stpe_u_only=self.stpe_u_only, no_mask=self.no_mask, alpha_zero=self.alpha_zero,
            beta_zero=self.beta_zero, recent_sampling=self.recent_sampling)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.epochs, self.patience, self.lr, self.fanouts,
                           self.seed, self.precision, self.max_train_batches or None,
                           self.max_eval_batches or None, self.clip_norm)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(mode=self.split_mode, mask_frac=self.mask_frac, seed=self.seed)

    def td_params(self) -> TdParams:
        return TdParams.for_hops(len(self.fanouts), alpha=self.alpha, beta=self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fanouts"] = list(self.fanouts)
        return d

    def dumps(self) -> str:
        """Flat key = value text that ``load_config`` reads back to the same config."""
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    """Convert the text form of ``key`` to its field type."""
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(x) for x in raw.replace("(", "").replace(")", "").split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None


def read_config_file(path) -> dict:
    """``key = value`` per line; ``#`` starts a comment; blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX):
            out[name[len(ENV_PREFIX):].lower()] = parse_value(name[len(ENV_PREFIX):].lower(), raw)
    return out


def load_config(path=None, cli: dict | None = None, environ=None) -> RunConfig:
    values: dict = {}
    if path:
        values.update(read_config_file(path))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (cli or {}).items() if v is not None})
    return RunConfig(**values)


def save_snapshot(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dumps())


def snapshot_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
