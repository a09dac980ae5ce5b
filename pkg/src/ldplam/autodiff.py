"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every differentiable op records its
parents and a closure mapping the output gradient to parent gradients;
:func:`backward` walks the recorded graph once in reverse topological order.

Matrix products go through :func:`matmul`, which reports ``batch*p*q*r``
scalar multiplications to every active :class:`MultiplicationCounter`.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "MultiplicationCounter",
    "no_grad",
    "make_rng",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "sum",
    "mean",
    "relu",
    "sigmoid",
    "tanh",
    "log",
    "softmax_axis",
    "layer_norm",
    "gather_rows",
    "dropout",
    "lstm",
    "bce_with_logits",
    "backward",
    "finite_diff_check",
]


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, double backward...)."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Build results without recording graph edges."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(int(seed)))


class MultiplicationCounter:
    """Tallies scalar multiplications performed by :func:`matmul`.

    Use as a context manager; counters nest and each active one sees every
    product issued on the current thread. ``by_tag`` splits the total by the
    ``tag`` argument given to :func:`matmul` (untagged products land under
    ``None``).
    """

    def __init__(self):
        self.total = 0
        self.by_tag: dict = {}

    def reset(self) -> None:
        self.total = 0
        self.by_tag = {}

    def add(self, count: int, tag=None) -> None:
        self.total += count
        self.by_tag[tag] = self.by_tag.get(tag, 0) + count

    def __enter__(self):
        stack = getattr(_state, "counters", None)
        if stack is None:
            stack = _state.counters = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.counters.remove(self)
        return False


def _report_mults(count: int, tag) -> None:
    for counter in getattr(_state, "counters", ()):
        counter.add(count, tag)


class Tensor:
    """Dense float64 array participating in a reverse-mode graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        # ascontiguousarray would promote 0-d arrays to 1-d
        self.data = np.array(data, dtype=np.float64, order="C", copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._freed = False
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b, tag=None) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting.

    Reports ``prod(batch) * p * q * r`` multiplications to active counters.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul batch dimensions of {a.shape} and {b.shape} do not broadcast") from None
    p, q = a.shape[-2:]
    r = b.shape[-1]
    _report_mults(math.prod(batch) * p * q * r, tag)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    return _make(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = _as_tensor(a)
    # subgradient 0 at 0
    active = a.data > 0
    return _make(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,), "relu")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = stable_sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def softmax_axis(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get zero weight.

    Raises ``ValueError("empty attention support")`` if every position of
    some slice is masked.
    """
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {a.shape}")
    z = a.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=axis).all():
            raise ValueError("empty attention support")
        z = np.where(keep, z, -np.inf)
    zmax = z.max(axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), bw, "softmax")


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise each row over the last axis, then apply ``gain`` and ``bias``."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1] if a.ndim else 0
    if d == 0:
        raise ValueError("layer_norm needs a non-empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    lead = tuple(range(a.ndim - 1))

    def bw(g):
        dxhat = g * gain.data
        dx = inv / d * (d * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gain.data + bias.data, (a, gain, bias), bw, "layer_norm")


def gather_rows(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; ``ids`` may be any integer array shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    bad = (ids < 0) | (ids >= n_rows)
    if bad.any():
        raise IndexError(f"row id {int(ids[bad].flat[0])} out of range for table with {n_rows} rows")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (out,)

    return _make(table.data[ids], (table,), bw, "gather_rows")


def dropout(a, rate: float, seed: int, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    a = _as_tensor(a)
    if not train or rate == 0.0:
        return a
    keep = make_rng(seed).random(a.shape) >= rate
    scale = keep / (1.0 - rate)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "dropout")


# ---------------------------------------------------------------------------
# fused recurrent op


def _lstm_forward(x, keep, wx, wh, b, reverse):
    batch, length, _ = x.shape
    hidden = wh.shape[0]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    out = np.zeros((batch, length, hidden))
    steps = range(length - 1, -1, -1) if reverse else range(length)
    # input projections for all steps at once
    xproj = x @ wx + b
    cache = []
    for t in steps:
        z = xproj[:, t] + h @ wh
        i = stable_sigmoid(z[:, :hidden])
        f = stable_sigmoid(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = stable_sigmoid(z[:, 3 * hidden:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = keep[:, t, None]
        cache.append((t, h, c, i, f, g, o, tc))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        out[:, t] = h
    return out, cache


def lstm(x, mask, wx, wh, b, reverse: bool = False) -> Tensor:
    """One LSTM direction over ``x`` of shape (batch, length, d_in).

    Gate layout in the 4H axis is input, forget, cell, output. Steps where
    ``mask`` is False leave the state unchanged and emit the carried hidden
    state. Returns hidden states of shape (batch, length, H).
    """
    x, wx, wh, b = (_as_tensor(t) for t in (x, wx, wh, b))
    if x.ndim != 3:
        raise ValueError(f"lstm expects (batch, length, d_in) input, got {x.shape}")
    hidden = wh.shape[0]
    if wx.shape != (x.shape[2], 4 * hidden) or wh.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ValueError(
            f"lstm weight shapes {wx.shape}, {wh.shape}, {b.shape} inconsistent with input {x.shape}"
        )
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape[:2]) if mask is not None else np.ones(x.shape[:2], bool)
    out, cache = _lstm_forward(x.data, keep, wx.data, wh.data, b.data, reverse)

    def bw(gout):
        dx = np.zeros_like(x.data)
        dwx = np.zeros_like(wx.data)
        dwh = np.zeros_like(wh.data)
        db = np.zeros_like(b.data)
        dh_next = np.zeros((x.shape[0], hidden))
        dc_next = np.zeros((x.shape[0], hidden))
        for t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
            m = keep[:, t, None]
            dh = gout[:, t] + dh_next
            dh_new = np.where(m, dh, 0.0)
            dc_new = np.where(m, dc_next, 0.0) + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * c_prev * f * (1.0 - f),
                    dc_new * i * (1.0 - g * g),
                    dh_new * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            dx[:, t] = dz @ wx.data.T
            dwx += x.data[:, t].T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dh_next = np.where(m, 0.0, dh) + dz @ wh.data.T
            dc_next = np.where(m, 0.0, dc_next) + dc_new * f
        return dx, dwx, dwh, db

    return _make(out, (x, wx, wh, b), bw, "lstm")


def bce_with_logits(logits, targets) -> Tensor:
    """Binary cross-entropy on logits, summed over labels, averaged over rows.

    Equals ``-sum(y log s + (1-y) log(1-s))`` with ``s = sigmoid(logits)``
    without forming ``log(s)``.
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    z = logits.data
    rows = z.shape[0] if z.ndim > 1 else 1
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    s = stable_sigmoid(z)
    return _make(np.asarray(per.sum() / rows), (logits,), lambda g: (g * (s - y) / rows,), "bce_with_logits")


# ---------------------------------------------------------------------------
# backward pass and gradient oracle


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; the graph itself is released after
    one traversal and a second call on it raises :class:`GraphError`.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if loss._freed:
        raise GraphError("backward already ran on this graph; rebuild it before calling again")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    order = _topological(loss)
    grads = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            else:
                node.grad = g
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._freed = True


def finite_diff_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` takes no arguments and rebuilds its graph from ``params`` on each
    call. Returns ``max |analytic - numeric| / max(1, |numeric|)`` over every
    coordinate of every parameter.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("objective is not finite at the evaluation point")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            with no_grad():
                up = float(f().data)
            flat[k] = orig - step
            with no_grad():
                down = float(f().data)
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"objective is not finite near coordinate {k} of {p!r}")
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
