"""Small reverse-mode autodiff over numpy arrays.

Every operator records its parents and a backward closure on the output
tensor; ``Tensor.backward`` walks the graph in reverse topological order and
accumulates gradients.  Arrays are float64 in ``"test"`` mode (with NaN
checks after every operator) and float32 in ``"train"`` mode.
"""
from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_VALUE = -1e9

_MODE = {"name": "test", "dtype": np.float64, "check_nan": True, "grad": True}


def set_mode(name: str) -> None:
    if name == "test":
        _MODE.update(name="test", dtype=np.float64, check_nan=True)
    elif name == "train":
        _MODE.update(name="train", dtype=np.float32, check_nan=False)
    else:
        raise ValueError(f"unknown numerics mode {name!r}")


def get_mode() -> str:
    return _MODE["name"]


@contextmanager
def using_mode(name: str):
    prev = _MODE["name"]
    set_mode(name)
    try:
        yield
    finally:
        set_mode(prev)


@contextmanager
def no_grad():
    """Forward only: no backward graph is recorded."""
    prev = _MODE["grad"]
    _MODE["grad"] = False
    try:
        yield
    finally:
        _MODE["grad"] = prev


def default_dtype():
    return _MODE["dtype"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_MODE["dtype"])
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # grads are never mutated in place, so incoming arrays can be kept as-is
        g = np.asarray(g, dtype=self.data.dtype)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate grads are not needed after propagation
                    node.grad = None if node is not self else node.grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    dtype = _MODE["dtype"]
    if data.dtype != dtype and data.dtype.kind == "f":
        # float64 constants would otherwise silently promote float32 graphs
        data = data.astype(dtype)
    if _MODE["check_nan"] and np.isnan(data).any():
        raise FloatingPointError("NaN produced by operator")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = _MODE["grad"] and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------- operators


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(_mm(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # shared weight matrix: fold all leading axes into rows
                a2 = a.data.reshape(-1, a.shape[-1])
                b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(_mm(a.data, b.data), (a, b), backward)


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    if w.ndim == 2 and x.ndim > 2:
        return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))
    return x @ w


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate."""

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(a.data[idx], (a,), backward)


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a 2-D table: out[...] = table[idx[...]].

    The backward pass scatters with a sparse matrix product, which is far
    cheaper than ``np.add.at`` when many positions share a row.
    """
    idx = np.asarray(idx, dtype=np.int64)
    flat = idx.reshape(-1)

    def backward(g):
        from scipy.sparse import csr_matrix

        n = len(flat)
        scatter = csr_matrix((np.ones(n, dtype=g.dtype), (flat, np.arange(n))),
                             shape=(table.shape[0], n))
        table._accumulate(np.asarray(scatter @ g.reshape(n, -1)))

    return _result(table.data[idx], (table,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _result(np.transpose(a.data, axes), (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean_rows(a: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """Mean over axis -2.  ``weights`` (..., rows) gives a weighted mean; rows
    with weight 0 are excluded and the remaining weights are renormalized."""
    if weights is None:
        w = np.full(a.shape[:-1], 1.0 / a.shape[-2], dtype=a.data.dtype)
    else:
        w = np.asarray(weights, dtype=a.data.dtype)
        w = w / w.sum(axis=-1, keepdims=True)
    w = w[..., None, :]
    out = matmul(Tensor(w), a)
    return reshape(out, out.shape[:-2] + out.shape[-1:])


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        a._accumulate(g * pos)

    return _result(a.data * pos, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """Tanh form of GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3))).

    Smooth everywhere, so central differences stay accurate at coarse steps.
    """
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        a._accumulate(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner))

    return _result(0.5 * x * (1.0 + th), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    p = x >= 0
    out[p] = 1.0 / (1.0 + np.exp(-x[p]))
    ex = np.exp(x[~p])
    out[~p] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _result(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * inside)

    return _result(np.clip(a.data, lo, hi), (a,), backward)


def row_softmax(a: Tensor) -> Tensor:
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _result(out, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gm - xhat * gx))

    return _result(xhat, (a,), backward)


def masked_fill(a: Tensor, mask: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """Add ``value`` where ``mask`` is False (i.e. disallowed positions)."""
    additive = np.where(mask, 0.0, value).astype(a.data.dtype)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _result(a.data + additive, (a,), backward)


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------- checks


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``;
    returns the norm before clipping."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-3,
                 indices: Iterable[tuple] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. entries of ``x`` (in place)."""
    out = np.zeros_like(x)
    it = indices if indices is not None else np.ndindex(*x.shape)
    for idx in it:
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        out[idx] = (fp - fm) / (2 * step)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"CDGTCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray | Tensor], meta: dict | None = None) -> None:
    """Layout: magic, u32 version, u32 manifest length, JSON manifest, then each
    parameter as a flat little-endian float64 array in manifest order."""
    arrays = {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype="<f8")
              for k, v in params.items()}
    manifest = {
        "meta": meta or {},
        "params": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        manifest = json.loads(raw[16:16 + n])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    offset = 16 + n
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(raw):
            raise CheckpointError(f"{path}: truncated parameter {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return params, manifest["meta"]


# ---------------------------------------------------------------- layers


def init_linear(params: dict, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                bias: bool = True) -> None:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    params[f"{name}.w"] = parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.w")
    if bias:
        params[f"{name}.b"] = parameter(np.zeros(fan_out), f"{name}.b")


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    y = matmul(x, params[f"{name}.w"])
    b = params.get(f"{name}.b")
    return y if b is None else add(y, b)


def init_mlp(params: dict, name: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(params, f"{name}.{i}", a, b, rng)


def mlp(params: dict, name: str, x: Tensor, depth: int = 2) -> Tensor:
    for i in range(depth):
        x = linear(params, f"{name}.{i}", x)
        if i < depth - 1:
            x = gelu(x)
    return x
