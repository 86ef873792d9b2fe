"""Reverse-mode differentiation over a small set of numpy layers.

Every op takes :class:`Var` (or plain arrays, treated as constants) and
returns a new :class:`Var` that remembers how to push its gradient back
to its parents. Calling :func:`backward` on a scalar ``Var`` walks the
recorded graph in reverse topological order and accumulates gradients
into the :class:`ParamStore` the leaves came from.

Array layout: dense layers act on the last axis, convolutions take
``(batch, channels, length)`` or an unbatched ``(channels, length)``.
"""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "GraphError",
    "Var",
    "ParamStore",
    "as_var",
    "backward",
    "dense",
    "conv1d",
    "conv1d_transpose",
    "relu",
    "softmax",
    "add",
    "sub",
    "mul",
    "scale",
    "square",
    "exp",
    "log",
    "sum_all",
    "sum_last",
    "mean_all",
    "reshape",
    "concat",
    "clip",
    "take_last",
    "residual_block",
    "save_checkpoint",
    "load_checkpoint",
]


class GraphError(RuntimeError):
    """Raised for misuse of the graph: bad shapes, non-finite values, bad backward."""


class Var:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "_push", "param_path")

    def __init__(self, value, parents: Sequence["Var"] = (), push: Callable | None = None,
                 param_path: str | None = None):
        self.value = np.asarray(value, dtype=float) if not isinstance(value, np.ndarray) else value
        self.grad = None
        self.parents = tuple(parents)
        self._push = push
        self.param_path = param_path

    @property
    def shape(self):
        return self.value.shape

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float))


def _needs_grad(v: Var) -> bool:
    return v.param_path is not None or bool(v.parents)


def _accumulate(v: Var, g: np.ndarray) -> None:
    if v.grad is None:
        v.grad = np.array(g, dtype=v.value.dtype, copy=True)
    else:
        v.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class ParamStore:
    """Named parameter arrays and a gradient array of matching shape for each."""

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.has_grads = False
        for path, arr in (values or {}).items():
            self.add(path, arr)

    def add(self, path: str, array) -> None:
        if path in self.values:
            raise KeyError(f"duplicate parameter path {path!r}")
        arr = np.array(array, dtype=float, copy=True)
        self.values[path] = arr
        self.grads[path] = np.zeros_like(arr)

    def __getitem__(self, path: str) -> np.ndarray:
        return self.values[path]

    def __contains__(self, path: str) -> bool:
        return path in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def var(self, path: str) -> Var:
        """Leaf node for ``path``; gradients reaching it land in ``self.grads``."""
        return Var(self.values[path], param_path=path)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)
        self.has_grads = False

    def n_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()})

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for k, v in self.values.items():
            out.values[k] = v.astype(dtype)
            out.grads[k] = np.zeros_like(out.values[k])
        return out


def backward(loss: Var, store: ParamStore | None = None) -> None:
    """Propagate d(loss)/d(node) through the graph ending at ``loss``.

    Leaf gradients are added into ``store.grads`` (call ``zero_grad``
    between steps). Sampled noise and data enter as constants, so no
    gradient is computed for them.
    """
    if not isinstance(loss, Var) or not _needs_grad(loss):
        raise GraphError("backward called on a value with no recorded forward graph")
    if loss.value.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not np.all(np.isfinite(loss.value)):
        raise GraphError("loss is not finite")

    order: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))

    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._push is not None:
            node._push(node.grad)
        if node.param_path is not None and store is not None:
            store.grads[node.param_path] += node.grad
            store.has_grads = True


def _node(value, parents, push) -> Var:
    return Var(value, parents, push)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value

    def push(g):
        if _needs_grad(a):
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if _needs_grad(b):
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return _node(out, (a, b), push)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g):
        if _needs_grad(a):
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if _needs_grad(b):
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _node(a.value - b.value, (a, b), push)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g):
        if _needs_grad(a):
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if _needs_grad(b):
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _node(a.value * b.value, (a, b), push)


def scale(a, c: float) -> Var:
    a = as_var(a)
    return _node(a.value * c, (a,), lambda g: _accumulate(a, g * c))


def square(a) -> Var:
    a = as_var(a)
    return _node(a.value * a.value, (a,), lambda g: _accumulate(a, 2.0 * a.value * g))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: _accumulate(a, g * out))


def log(a, floor: float = 1e-300) -> Var:
    """Natural log; inputs below ``floor`` are evaluated at ``floor`` and get no gradient."""
    a = as_var(a)
    safe = np.maximum(a.value, floor)

    def push(g):
        _accumulate(a, np.where(a.value > floor, g / safe, 0.0))

    return _node(np.log(safe), (a,), push)


def relu(x) -> Var:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    x = as_var(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: _accumulate(x, g * mask))


def clip(x, lo: float, hi: float) -> Var:
    x = as_var(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _node(np.clip(x.value, lo, hi), (x,), lambda g: _accumulate(x, g * inside))


def softmax(logits) -> Var:
    """Max-shifted softmax over the last axis."""
    logits = as_var(logits)
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def push(g):
        _accumulate(logits, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _node(p, (logits,), push)


# ---------------------------------------------------------------- reductions / shape


def sum_all(x) -> Var:
    x = as_var(x)
    return _node(np.asarray(x.value.sum()), (x,),
                 lambda g: _accumulate(x, np.broadcast_to(g, x.value.shape)))


def mean_all(x) -> Var:
    x = as_var(x)
    n = x.value.size
    return _node(np.asarray(x.value.mean()), (x,),
                 lambda g: _accumulate(x, np.broadcast_to(g / n, x.value.shape)))


def sum_last(x) -> Var:
    x = as_var(x)
    return _node(x.value.sum(axis=-1), (x,),
                 lambda g: _accumulate(x, np.broadcast_to(g[..., None], x.value.shape)))


def reshape(x, shape) -> Var:
    x = as_var(x)
    old = x.value.shape
    return _node(x.value.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(old)))


def concat(parts: Iterable, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

    def push(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            if _needs_grad(p):
                _accumulate(p, piece)

    return _node(out, parts, push)


def take_last(x, index) -> Var:
    """``x[..., index]`` with one integer index per leading row."""
    x = as_var(x)
    index = np.asarray(index)
    rows = np.arange(x.value.shape[0]) if x.value.ndim > 1 else None

    if rows is None:
        out = x.value[index]
    else:
        out = x.value[rows, index]

    def push(g):
        full = np.zeros_like(x.value)
        if rows is None:
            full[index] = g
        else:
            full[rows, index] = g
        _accumulate(x, full)

    return _node(out, (x,), push)


# ---------------------------------------------------------------- layers


def dense(x, weight, bias) -> Var:
    """out[..., i] = sum_j weight[i, j] * x[..., j] + bias[i]."""
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    w = weight.value
    if w.ndim != 2 or x.value.shape[-1] != w.shape[1] or bias.value.shape != (w.shape[0],):
        raise GraphError(
            f"dense shape mismatch: x {x.value.shape}, weight {w.shape}, bias {bias.value.shape}"
        )
    out = x.value @ w.T + bias.value

    def push(g):
        if _needs_grad(x):
            _accumulate(x, g @ w)
        g2 = g.reshape(-1, w.shape[0])
        if _needs_grad(weight):
            _accumulate(weight, g2.T @ x.value.reshape(-1, w.shape[1]))
        if _needs_grad(bias):
            _accumulate(bias, g2.sum(axis=0))

    return _node(out, (x, weight, bias), push)


def _batched(v: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    if v.ndim == 2:
        return v[None], True
    if v.ndim == 3:
        return v, False
    raise GraphError(f"{name} expects (channels, length) or (batch, channels, length), got {v.shape}")


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    return sliding_window_view(x, k, axis=-1)[:, :, ::stride, :]


def _channel_major(x: np.ndarray) -> np.ndarray:
    """(b, c, n) -> contiguous (c, b * n)."""
    b, c, n = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(c, b * n)


def _correlate(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Valid cross-correlation of ``(b, c_in, L)`` with ``(c_out, c_in, k)``, no bias."""
    if stride != 1 or w.shape[1] == 1:
        win = _windows(x, w.shape[2], stride)
        return np.tensordot(win, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    # stride 1: one GEMM per tap over the batch laid end to end; positions
    # that straddle two examples are computed and then dropped
    b, _, n = x.shape
    c_out, _, k = w.shape
    flat = _channel_major(x)
    span = b * n - k + 1
    taps = np.ascontiguousarray(w.transpose(2, 0, 1))
    out = np.zeros((c_out, b * n), dtype=np.result_type(x, w))
    for t in range(k):
        out[:, :span] += taps[t] @ flat[:, t:t + span]
    return out.reshape(c_out, b, n)[:, :, :n - k + 1].transpose(1, 0, 2)


def _kernel_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    """d/dw of sum(g * correlate(x, w)) for kernels ``(c_out, c_in, k)``."""
    if stride != 1 or x.shape[1] == 1:
        return np.tensordot(g, _windows(x, k, stride), axes=([0, 2], [0, 2]))
    b, c_in, n = x.shape
    c_out = g.shape[1]
    flat = _channel_major(x)
    gfull = np.zeros((c_out, b, n), dtype=g.dtype)
    gfull[:, :, :g.shape[2]] = g.transpose(1, 0, 2)
    gflat = gfull.reshape(c_out, b * n)
    span = b * n - k + 1
    out = np.empty((c_out, c_in, k), dtype=np.result_type(x, g))
    for t in range(k):
        out[:, :, t] = gflat[:, :span] @ flat[:, t:t + span].T
    return out


def _adjoint(g: np.ndarray, w: np.ndarray, stride: int, out_len: int) -> np.ndarray:
    """Transpose of :func:`_correlate`: spread ``g`` back onto an input of ``out_len``.

    Zero-stuffs ``g`` by ``stride``, pads ``k - 1`` on both sides and
    correlates with the flipped, channel-swapped kernel.
    """
    b, c_out, n = g.shape
    k = w.shape[2]
    full = (n - 1) * stride + k
    gp = np.zeros((b, c_out, full + k - 1), dtype=g.dtype)
    gp[:, :, k - 1:k - 1 + (n - 1) * stride + 1:stride] = g
    flipped = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
    out = _correlate(gp, flipped, 1)
    if out_len > full:
        out = np.pad(out, ((0, 0), (0, 0), (0, out_len - full)))
    return out[:, :, :out_len]


def conv1d(x, kernels, bias, stride: int = 1, padding: int = 0) -> Var:
    """Zero-padded cross-correlation; kernels are ``(c_out, c_in, k)``."""
    x, kernels, bias = as_var(x), as_var(kernels), as_var(bias)
    w = kernels.value
    xv, squeeze = _batched(x.value, "conv1d")
    c_out, c_in, k = w.shape
    if xv.shape[1] != c_in or bias.value.shape != (c_out,):
        raise GraphError(f"conv1d channel mismatch: x {x.value.shape}, kernels {w.shape}")
    if stride < 1 or padding < 0:
        raise GraphError("conv1d needs stride >= 1 and padding >= 0")
    length = xv.shape[2]
    if length + 2 * padding < k:
        raise GraphError(f"kernel of length {k} longer than padded input {length + 2 * padding}")
    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding))) if padding else xv
    out = _correlate(xp, w, stride) + bias.value[:, None]
    if squeeze:
        out = out[0]

    def push(g):
        gb = g[None] if squeeze else g
        if _needs_grad(kernels):
            _accumulate(kernels, _kernel_grad(xp, gb, k, stride))
        if _needs_grad(bias):
            _accumulate(bias, gb.sum(axis=(0, 2)))
        if _needs_grad(x):
            gx = _adjoint(gb, w, stride, xp.shape[2])
            if padding:
                gx = gx[:, :, padding:padding + length]
            _accumulate(x, gx[0] if squeeze else gx)

    return _node(out, (x, kernels, bias), push)


def conv1d_transpose(x, kernels, bias, stride: int = 1) -> Var:
    """Scatter-add adjoint of :func:`conv1d`; kernels are ``(c_in, c_out, k)``.

    Output length is ``(L - 1) * stride + k``.
    """
    x, kernels, bias = as_var(x), as_var(kernels), as_var(bias)
    w = kernels.value
    xv, squeeze = _batched(x.value, "conv1d_transpose")
    c_in, c_out, k = w.shape
    if xv.shape[1] != c_in or bias.value.shape != (c_out,):
        raise GraphError(f"conv1d_transpose channel mismatch: x {x.value.shape}, kernels {w.shape}")
    if stride < 1 or xv.shape[2] < 1:
        raise GraphError("conv1d_transpose needs stride >= 1 and a non-empty input")
    out_len = (xv.shape[2] - 1) * stride + k
    out = _adjoint(xv, w, stride, out_len) + bias.value[:, None]
    if squeeze:
        out = out[0]

    def push(g):
        gb = g[None] if squeeze else g
        if _needs_grad(kernels):
            # kernel layout (c_in, c_out, k) is the conv1d layout with roles swapped
            _accumulate(kernels, _kernel_grad(gb, xv, k, stride))
        if _needs_grad(bias):
            _accumulate(bias, gb.sum(axis=(0, 2)))
        if _needs_grad(x):
            gx = _correlate(gb, w, stride)
            _accumulate(x, gx[0] if squeeze else gx)

    return _node(out, (x, kernels, bias), push)


def residual_block(x, conv1_w, conv1_b, conv2_w, conv2_b) -> Var:
    """x + conv(relu(conv(x))) with length-preserving ('same') padding."""
    x = as_var(x)
    k1 = as_var(conv1_w).value.shape[2]
    k2 = as_var(conv2_w).value.shape[2]
    if k1 % 2 == 0 or k2 % 2 == 0:
        raise GraphError("residual block kernels must have odd length to preserve shape")
    h = relu(conv1d(x, conv1_w, conv1_b, padding=k1 // 2))
    f = conv1d(h, conv2_w, conv2_b, padding=k2 // 2)
    if f.value.shape != x.value.shape:
        raise GraphError(f"residual path changes shape {x.value.shape} -> {f.value.shape}")
    return add(x, f)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, store: ParamStore, extra: dict | None = None) -> None:
    """Write a JSON header line followed by little-endian float64 payloads.

    The header is ``{"params": [{path, shape, byte_offset}, ...], **extra}``
    with offsets relative to the first payload byte. Written atomically.
    """
    entries, blobs, offset = [], [], 0
    for name, arr in store.values.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"path": name, "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = dict(extra or {})
    header["params"] = entries
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=False).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Inverse of :func:`save_checkpoint`; returns the store and the header."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    split = raw.find(b"\n")
    if split < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:split].decode("utf-8"))
    payload = memoryview(raw)[split + 1:]
    store = ParamStore()
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 8 * count
        if end > len(payload):
            raise ValueError(f"{path}: payload truncated at {entry['path']}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape)
        store.add(entry["path"], arr.astype(np.float64))
    return store, header
