"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a node (parents + a backward closure); :meth:`Tensor.backward`
orders the reachable nodes topologically into a :class:`GradTape` and replays
it in reverse, visiting every node exactly once.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float64
_ids = itertools.count()


def _as_array(x, dtype=None) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    arr = np.asarray(x, dtype=dtype or DTYPE)
    return arr


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_pending", "op", "node", "name")

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (),
                 _backward: Optional[Callable] = None, op: str = "leaf", name: Optional[str] = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _as_array(data)
        if self.data.ndim and min(self.data.shape) < 1:
            raise ValueError(f"tensor extents must be >= 1, got shape {self.data.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._pending: Optional[list] = None
        self.op = op
        self.node = next(_ids) if (requires_grad or _parents) else None
        self.name = name

    # -- basics --------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        g = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{g})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g  # op outputs are never mutated in place, so sharing is safe
        else:
            self.grad = self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> "GradTape":
        if grad is None:
            if self.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        tape = GradTape.from_output(self)
        tape.run(self, grad)
        return tape

    # -- operator overloads ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_as_array(x))


def _needs(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Create an op output; records a tape node only if a parent needs gradients."""
    if _needs(*parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


class GradTape:
    """Nodes reachable from an output, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def describe(self) -> list[dict]:
        return [{"node": t.node, "op": t.op, "inputs": [p.node for p in t._parents]} for t in self.nodes]

    def run(self, out: Tensor, grad: np.ndarray) -> None:
        out._accum(np.asarray(grad, dtype=out.data.dtype))
        for t in reversed(self.nodes):
            if t._pending:
                for buf in t._pending:
                    t._accum(buf)
                t._pending = None
            if t._backward is None or t.grad is None:
                continue
            t._backward(t.grad)
            # free interior state; leaves keep their gradients
            t.grad = None
            t._backward = None
            t._parents = ()


# -- elementwise / structural ops ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            a._accum(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(unbroadcast(g, b.shape))

    return make(a.data + b.data, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: a._accum(-g), "neg")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            a._accum(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(unbroadcast(g * a.data, b.shape))

    return make(a.data * b.data, (a, b), bw, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return make(out, (a,), lambda g: a._accum(-g * out * out), "reciprocal")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            a._accum(unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(unbroadcast(gb, b.shape))

    return make(a.data @ b.data, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        a._accum(full)

    return make(np.ascontiguousarray(a.data[idx]), (a,), bw, "getitem")


def _fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def unstack(a: Tensor, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views; gradients are gathered into one buffer.

    The buffer is handed to ``a`` only when the tape reaches ``a`` (all
    consumers of the pieces have run by then), avoiding one full-size
    gradient allocation per piece.
    """
    n = a.shape[axis]
    pieces = [np.take(a.data, i, axis=axis) for i in range(n)]
    if not a.requires_grad:
        return [Tensor(p, op="unstack") for p in pieces]
    state: dict = {}

    def make_bw(i):
        def bw(g):
            buf = state.get("buf")
            if buf is None:
                buf = state["buf"] = np.zeros_like(a.data)
                if a._pending is None:
                    a._pending = []
                a._pending.append(buf)
            idx = [slice(None)] * a.ndim
            idx[axis] = i
            buf[tuple(idx)] += g
        return bw

    return [Tensor(p, True, _parents=(a,), _backward=make_bw(i), op="unstack") for i, p in enumerate(pieces)]


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (numpy rules); backward sums the copies."""
    return make(np.broadcast_to(a.data, shape), (a,), lambda g: a._accum(unbroadcast(g, a.shape)), "expand")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())

    return make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad)


def parameters_grads(params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients for ``params``, zero-filled where a parameter was not reached."""
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
