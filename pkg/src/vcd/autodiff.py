"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations run eagerly. When a :class:`Tape` is active (``with Tape() as tape:``)
every op appends a node to it, and ``tape.backward(root)`` returns the gradient
of a scalar root with respect to every leaf tensor the graph touched.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

L2_EPS = 1e-8

_tapes: list["Tape"] = []
_debug = os.environ.get("VCD_DEBUG_FINITE", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """Check every forward result for NaN/Inf when enabled."""
    global _debug
    _debug = bool(enabled)


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
    """A dense float64 array, optionally recorded on the active tape."""

    __slots__ = ("data", "requires_grad", "name", "_tape", "node_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    backward: Callable | None
    requires_grad: bool


class GradientMap:
    """Gradients keyed by leaf tensor. Unreached tensors map to zeros."""

    def __init__(self, grads: dict[int, tuple[Tensor, np.ndarray]]):
        self._grads = grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        hit = self._grads.get(id(tensor))
        if hit is None or hit[0] is not tensor:
            return np.zeros_like(tensor.data)
        return hit[1]

    def __contains__(self, tensor: Tensor) -> bool:
        hit = self._grads.get(id(tensor))
        return hit is not None and hit[0] is tensor

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Append-only record of operations; nodes are stored in topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def _node_for(self, t: Tensor) -> int:
        if t._tape is self:
            return t.node_id
        self.nodes.append(_Node("leaf", (), None, t.requires_grad))
        nid = len(self.nodes) - 1
        t._tape, t.node_id = self, nid
        self._leaves[nid] = t
        return nid

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            t.requires_grad = True
            self._node_for(t)

    def backward(self, root: Tensor) -> GradientMap:
        if root._tape is not self:
            raise ValueError("backward: root is not recorded on this tape")
        if root.data.size != 1:
            raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.node_id] = np.ones_like(root.data)
        nodes = self.nodes
        for i in range(root.node_id, -1, -1):
            g = grads[i]
            node = nodes[i]
            if g is None or node.backward is None:
                continue
            needs = tuple(nodes[j].requires_grad for j in node.inputs)
            for j, gj in zip(node.inputs, node.backward(g, needs)):
                if gj is None or not nodes[j].requires_grad:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        out = {}
        for nid, t in self._leaves.items():
            if grads[nid] is not None:
                out[id(t)] = (t, grads[nid])
        return GradientMap(out)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite forward value")
    out = Tensor(data)
    if not _tapes:
        return out
    tape = _tapes[-1]
    ids = tuple(tape._node_for(x) for x in inputs)
    rg = any(tape.nodes[j].requires_grad for j in ids)
    tape.nodes.append(_Node(op, ids, backward if rg else None, rg))
    out._tape, out.node_id = tape, len(tape.nodes) - 1
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g, n: (_unbroadcast(g, sa) if n[0] else None,
                               _unbroadcast(g, sb) if n[1] else None))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _make("subtract", a.data - b.data, (a, b),
                 lambda g, n: (_unbroadcast(g, sa) if n[0] else None,
                               _unbroadcast(-g, sb) if n[1] else None))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _make("multiply", ad * bd, (a, b),
                 lambda g, n: (_unbroadcast(g * bd, ad.shape) if n[0] else None,
                               _unbroadcast(g * ad, bd.shape) if n[1] else None))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g, n: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make("matmul", ad @ bd, (a, b),
                 lambda g, n: (g @ bd.T if n[0] else None,
                               ad.T @ g if n[1] else None))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make("transpose", a.data.T, (a,), lambda g, n: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g, n: (g * mask,))


def l2_normalize(a: Tensor, eps: float = L2_EPS) -> Tensor:
    """x / sqrt(sum(x**2) + eps) along the last axis."""
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True) + eps)
    y = a.data / norm

    def backward(g, n):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return _make("l2_normalize", y, (a,), backward)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _make("reduce_sum", np.asarray(a.data.sum()), (a,),
                     lambda g, n: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.data.ndim
    return _make("reduce_sum", a.data.sum(axis=ax), (a,),
                 lambda g, n: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of paired rows (last axis); returns one value per row."""
    if a.shape != b.shape:
        raise ShapeError("cosine_similarity", a.shape, b.shape)
    return reduce_sum(mul(l2_normalize(a), l2_normalize(b)), axis=-1)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    shapes = [t.shape for t in tensors]
    ndim = len(shapes[0])
    ax = axis % ndim
    for s in shapes[1:]:
        if len(s) != ndim or s[:ax] + s[ax + 1:] != shapes[0][:ax] + shapes[0][ax + 1:]:
            raise ShapeError("concat", shapes[0], s)
    bounds = np.cumsum([s[ax] for s in shapes])[:-1]

    def backward(g, n):
        return tuple(p if need else None for p, need in zip(np.split(g, bounds, axis=ax), n))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g, n: (g / ad,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g, n: (g * y,))


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g, n):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make("gather_rows", a.data[idx], (a,), backward)


class _StopReplay:
    """Records stop_gradient outputs once, then hands them back in the same order.

    Finite differences of a graph with stop_gradient must treat the stopped
    values as constants, or they measure a different derivative than backward.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.recording = True
        self.pos = 0

    def __call__(self, data: np.ndarray) -> np.ndarray:
        if self.recording:
            self.values.append(data.copy())
            return data
        if self.pos >= len(self.values):
            raise RuntimeError("finite_diff_check: f called stop_gradient more often than on the reference pass")
        out = self.values[self.pos]
        self.pos += 1
        return out


_replay: _StopReplay | None = None


def stop_gradient(a: Tensor) -> Tensor:
    """Identity in the forward pass; blocks all gradient flow."""
    data = a.data if _replay is None else _replay(a.data)
    if not _tapes:
        return Tensor(data)
    out = Tensor(data)
    tape = _tapes[-1]
    tape._node_for(a)
    tape.nodes.append(_Node("stop_gradient", (a.node_id,), None, False))
    out._tape, out.node_id = tape, len(tape.nodes) - 1
    return out


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6,
                      freeze_stopped: bool = True) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|).

    ``f`` takes no arguments and must read ``params`` by closure. With
    ``freeze_stopped`` every stop_gradient output keeps its reference value
    while parameters are perturbed, so the numeric derivative is the one
    backward computes.
    """
    global _replay
    if step <= 0:
        raise ValueError("step must be positive")
    replay = _StopReplay() if freeze_stopped else None
    _replay = replay
    try:
        with Tape() as tape:
            tape.watch(*params)
            root = f()
            if not np.all(np.isfinite(root.data)):
                raise ValueError("finite_diff_check: f returned a non-finite value")
            grads = tape.backward(root)
    finally:
        _replay = None

    def value() -> float:
        global _replay
        if replay is not None:
            replay.recording, replay.pos = False, 0
        _replay = replay
        try:
            v = f().item()
        finally:
            _replay = None
        if not np.isfinite(v):
            raise ValueError("finite_diff_check: f returned a non-finite value")
        return v

    worst = 0.0
    for p in params:
        analytic = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = value()
            flat[i] = orig - step
            lo = value()
            flat[i] = orig
            numeric = (hi - lo) / (2 * step)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Iterable[Tensor], **kw) -> "AdamState":
        params = list(params)
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: GradientMap | Sequence[np.ndarray],
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(state.m):
        raise ShapeError("adam_step", (len(params),), (len(state.m),))
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in enumerate(params):
        g = grads[p] if isinstance(grads, GradientMap) else np.asarray(grads[k])
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        m, v = state.m[k], state.v[k]
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.square(g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.multiply(v, 1.0 / c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p.data -= tmp
    state.step = t
    return state
