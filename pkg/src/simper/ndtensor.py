"""Dense float64 tensors with a reverse-mode gradient tape.

Shapes are managed explicitly by callers: elementwise ops accept equal shapes
or a rank-0 operand, and anything wider goes through :func:`expand`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "elementwise",
    "reduce",
    "nonlinearity",
    "backward",
    "build_tape",
    "expand",
    "reshape",
    "transpose",
    "take",
    "concat",
    "log_softmax",
    "zero_grad",
    "finite_diff_check",
    "save_checkpoint",
    "load_checkpoint",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{rg})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return elementwise(self, other, "add")

    def __radd__(self, other):
        return elementwise(other, self, "add")

    def __sub__(self, other):
        return elementwise(self, other, "sub")

    def __rsub__(self, other):
        return elementwise(other, self, "sub")

    def __mul__(self, other):
        return elementwise(self, other, "mul")

    def __rmul__(self, other):
        return elementwise(other, self, "mul")

    def __truediv__(self, other):
        return elementwise(self, other, "div")

    def __rtruediv__(self, other):
        return elementwise(other, self, "div")

    def __neg__(self):
        return elementwise(self, -1.0, "mul")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, "max", axis, keepdims)

    def tanh(self):
        return nonlinearity(self, "tanh")

    def relu(self):
        return nonlinearity(self, "relu")

    def exp(self):
        return nonlinearity(self, "exp")

    def log(self):
        return nonlinearity(self, "log")

    def sqrt(self):
        return nonlinearity(self, "sqrt")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], bw: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=bw, op=op)
    return Tensor(data, op=op)


# --------------------------------------------------------------------- ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; rank >= 3 operands must share identical leading dims."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _node(out, (a, b), bw, "matmul")


def _sum_to_scalar(g, target_shape):
    return np.asarray(g.sum()) if target_shape == () and g.shape != () else g


def elementwise(a, b, kind: str) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"elementwise {kind} needs equal shapes or a scalar, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if kind == "add":
        out = ad + bd

        def bw(g):
            return _sum_to_scalar(g, a.shape), _sum_to_scalar(g, b.shape)

    elif kind == "sub":
        out = ad - bd

        def bw(g):
            return _sum_to_scalar(g, a.shape), _sum_to_scalar(-g, b.shape)

    elif kind == "mul":
        out = ad * bd

        def bw(g):
            return _sum_to_scalar(g * bd, a.shape), _sum_to_scalar(g * ad, b.shape)

    elif kind == "div":
        if np.any(bd == 0):
            raise NumericDomainError("division by zero in elementwise div")
        out = ad / bd

        def bw(g):
            return _sum_to_scalar(g / bd, a.shape), _sum_to_scalar(-g * ad / (bd * bd), b.shape)

    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _node(out, (a, b), bw, kind)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return ax


def reduce(a: Tensor, kind: str, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """sum / mean / max along one axis or over everything.

    max sends the gradient to the first maximal element (lowest index).
    """
    a = _lift(a)
    ax = _norm_axis(axis, a.ndim)
    n = a.data.size if ax is None else a.shape[ax]
    if n == 0:
        raise DimensionError(f"cannot reduce over an empty axis (shape {a.shape})")

    def expand_back(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return np.broadcast_to(g, a.shape)

    if kind == "sum":
        out = a.data.sum(axis=ax, keepdims=keepdims)

        def bw(g):
            return (np.array(expand_back(g)),)

    elif kind == "mean":
        out = a.data.mean(axis=ax, keepdims=keepdims)

        def bw(g):
            return (expand_back(g) / n,)

    elif kind == "max":
        if ax is None:
            idx = int(np.argmax(a.data))
            out = a.data.reshape(-1)[idx]
            if keepdims:
                out = np.reshape(out, (1,) * a.ndim)

            def bw(g):
                mask = np.zeros(a.data.size)
                mask[idx] = float(np.sum(g))
                return (mask.reshape(a.shape),)

        else:
            idx = np.expand_dims(np.argmax(a.data, axis=ax), ax)
            out = np.take_along_axis(a.data, idx, axis=ax)
            if not keepdims:
                out = np.squeeze(out, ax)

            def bw(g):
                gg = g if keepdims else np.expand_dims(g, ax)
                res = np.zeros(a.shape)
                np.put_along_axis(res, idx, gg, axis=ax)
                return (res,)

    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _node(np.asarray(out, dtype=np.float64), (a,), bw, kind)


def nonlinearity(a: Tensor, kind: str) -> Tensor:
    a = _lift(a)
    x = a.data
    if kind == "tanh":
        out = np.tanh(x)

        def bw(g):
            return (g * (1.0 - out * out),)

    elif kind == "relu":
        out = np.where(x > 0, x, 0.0)

        def bw(g):
            return (g * (x > 0),)

    elif kind == "exp":
        out = np.exp(x)

        def bw(g):
            return (g * out,)

    elif kind == "log":
        if np.any(x <= 0):
            raise NumericDomainError("log of a non-positive value")
        out = np.log(x)

        def bw(g):
            return (g / x,)

    elif kind == "sqrt":
        if np.any(x < 0):
            raise NumericDomainError("sqrt of a negative value")
        out = np.sqrt(x)

        def bw(g):
            # subgradient 0 at the origin
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    else:
        raise ValueError(f"unknown nonlinearity {kind!r}")
    return _node(out, (a,), bw, kind)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-softmax along ``axis``."""
    a = _lift(a)
    ax = _norm_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=ax, keepdims=True),)

    return _node(out, (a,), bw, "log_softmax")


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _lift(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _node(out, (a,), bw, "transpose")


def take(a: Tensor, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = _lift(a)
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)
    out = a.data[key]

    def bw(g):
        res = np.zeros(a.shape)
        np.add.at(res, key, g)
        return (res,)

    return _node(np.array(out, dtype=np.float64), (a,), bw, "take")


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of size-1 axes (same rank) to ``shape``."""
    a = _lift(a)
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise DimensionError(f"cannot expand {a.shape} to {shape}")
    out = np.broadcast_to(a.data, shape).copy()
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)

    def bw(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _node(out, (a,), bw, "expand")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, ts, bw, "concat")


# --------------------------------------------------------------- backward


@dataclass
class Tape:
    """Topologically ordered record of the nodes feeding a root."""

    nodes: list[Tensor] = field(default_factory=list)


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return Tape(order)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable requires_grad leaf."""
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    tape = build_tape(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            if pg.shape != p.shape:
                pg = np.broadcast_to(pg, p.shape)
            prev = grads.get(id(p))
            grads[id(p)] = pg.copy() if prev is None else prev + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest elementwise relative error between tape and central-difference gradients.

    ``f`` re-evaluates the scalar objective from the current parameter data.
    The denominator is ``max(|analytic|, |numeric|, floor)``.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    zero_grad(params)
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericDomainError("objective is not finite")
    backward(out)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericDomainError("objective is not finite under perturbation")
            numeric[i] = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    zero_grad(params)
    return worst


# ------------------------------------------------------------- checkpoints

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "params.bin"
FORMAT_TAG = "simper-checkpoint/1"


def save_checkpoint(directory, params: dict, meta: dict | None = None) -> Path:
    """Write ``manifest.txt`` (UTF-8 key=value) plus ``params.bin`` (LE float64)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format={FORMAT_TAG}", f"blob={BLOB_NAME}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta.{k}={v}")
    offset = 0
    chunks = []
    for name, value in params.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8", order="C")
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"param.{name}=shape:{shape};offset:{offset};count:{arr.size}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest}")
    entries = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            entries[k] = v
    if entries.get("format") != FORMAT_TAG:
        raise ValueError(f"unrecognised checkpoint format in {manifest}")
    blob = (directory / entries["blob"]).read_bytes()
    params, meta = {}, {}
    for k, v in entries.items():
        if k.startswith("meta."):
            meta[k[5:]] = v
        elif k.startswith("param."):
            fields = dict(part.split(":", 1) for part in v.split(";"))
            shape = () if fields["shape"] == "scalar" else tuple(int(s) for s in fields["shape"].split("x"))
            off, count = int(fields["offset"]), int(fields["count"])
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64)
            params[k[6:]] = arr.reshape(shape)
    return params, meta
