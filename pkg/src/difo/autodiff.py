"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

A :class:`Graph` records every operation applied to its tensors as an
append-only list of nodes. Because an operation can only consume tensors
that already exist, input ids are always smaller than the node id, so the
backward sweep simply walks the node list in reverse.

Typical use::

    g = Graph()
    w = g.leaf(np.ones((3, 2)))
    x = g.const(np.arange(6.0).reshape(2, 3))
    loss = mean(square(x @ w))
    grads = g.backward(loss)
    grads[w.id]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

OP_KINDS = (
    "matmul", "add", "sub", "mul", "neg", "relu", "silu", "tanh", "sigmoid",
    "softplus", "log", "exp", "square", "mean", "sum", "concat", "slice",
    "broadcast", "minimum", "clip", "reshape",
)


class ShapeError(ValueError):
    pass


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))  # exp(-x) for x >= 0, exp(x) below; never overflows
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def stable_softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable[[np.ndarray], tuple] | None = None


class Tensor:
    """Handle onto one node of a graph."""

    __slots__ = ("graph", "id", "data")

    def __init__(self, graph: "Graph", node_id: int, data: np.ndarray):
        self.graph = graph
        self.id = node_id
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(id={self.id}, shape={self.shape})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.graph.const(other)

    def __add__(self, other):
        return _arith(add, self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _arith(sub, self, self._lift(other))

    def __rsub__(self, other):
        return _arith(sub, self._lift(other), self)

    def __mul__(self, other):
        return _arith(mul, self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, idx):
        return slice_(self, idx)


@dataclass
class Graph:
    """Append-only operation tape.

    With ``record=False`` values are still computed but nothing is kept for
    backward, which is what inference paths (sampling, rewards) use.
    """

    record: bool = True
    nodes: list[_Node] = field(default_factory=list)
    _count: int = 0

    def _push(self, kind: str, inputs: tuple[Tensor, ...], value: np.ndarray, vjp=None) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise ValueError(f"{kind}: input tensor belongs to a different graph")
        nid = self._count
        self._count += 1
        if self.record:
            self.nodes.append(_Node(kind, tuple(t.id for t in inputs), value, vjp))
        return Tensor(self, nid, value)

    def leaf(self, data) -> Tensor:
        """A differentiable input (a parameter)."""
        arr = np.array(data, dtype=np.float64)
        return self._push("leaf", (), arr)

    def const(self, data) -> Tensor:
        arr = np.asarray(data, dtype=np.float64)
        return self._push("const", (), arr)

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Gradients of scalar ``root`` with respect to every leaf, keyed by node id.

        Leaves that do not influence ``root`` get an all-zero gradient.
        """
        if not self.record:
            raise RuntimeError("backward on a graph created with record=False")
        if root.graph is not self:
            raise ValueError("root belongs to a different graph")
        if root.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.id] = np.ones_like(root.data)
        for nid in range(root.id, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for iid, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if grads[iid] is None:
                    grads[iid] = gi
                else:
                    grads[iid] = grads[iid] + gi
        out = {}
        for nid, node in enumerate(self.nodes):
            if node.kind == "leaf":
                out[nid] = grads[nid] if grads[nid] is not None else np.zeros_like(node.value)
        return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def _arith(op, a: Tensor, b: Tensor) -> Tensor:
    # operator sugar: expand the smaller operand with an explicit broadcast node
    if a.shape != b.shape:
        try:
            target = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{op.__name__}: shape mismatch {a.shape} vs {b.shape}") from None
        if a.shape != target:
            a = broadcast(a, target)
        if b.shape != target:
            b = broadcast(b, target)
    return op(a, b)


# ---------------------------------------------------------------- binary ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return a.graph._push("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return a.graph._push("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return a.graph._push("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return a.graph._push("mul", (a, b), A * B, lambda g: (g * B, g * A))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    _same_shape("minimum", a, b)
    pick_a = a.data <= b.data
    val = np.where(pick_a, a.data, b.data)
    return a.graph._push("minimum", (a, b), val,
                         lambda g: (np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)))


# ----------------------------------------------------------------- unary ops

def neg(x: Tensor) -> Tensor:
    return x.graph._push("neg", (x,), -x.data, lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return x.graph._push("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return x.graph._push("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    X = x.data
    return x.graph._push("silu", (x,), X * s, lambda g: (g * (s + X * s * (1.0 - s)),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return x.graph._push("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def softplus(x: Tensor) -> Tensor:
    X = x.data
    return x.graph._push("softplus", (x,), stable_softplus(X),
                         lambda g: (g * stable_sigmoid(X),))


def log(x: Tensor) -> Tensor:
    X = x.data
    return x.graph._push("log", (x,), np.log(X), lambda g: (g / X,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return x.graph._push("exp", (x,), y, lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    X = x.data
    return x.graph._push("square", (x,), X * X, lambda g: (2.0 * g * X,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; zero gradient where the clamp is active."""
    X = x.data
    inside = (X >= lo) & (X <= hi)
    return x.graph._push("clip", (x,), np.clip(X, lo, hi), lambda g: (g * inside,))


# ------------------------------------------------------------ reductions etc.

def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        return x.graph._push("sum", (x,), np.asarray(x.data.sum()),
                             lambda g: (np.broadcast_to(g, shape).copy(),))
    val = x.data.sum(axis=axis)
    return x.graph._push("sum", (x,), val,
                         lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.data.size
        return x.graph._push("mean", (x,), np.asarray(x.data.mean()),
                             lambda g: (np.full(shape, float(g) / n),))
    n = shape[axis]
    return x.graph._push("mean", (x,), x.data.mean(axis=axis),
                         lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape) / n,))


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input list")
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: shape mismatch {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    val = np.concatenate([t.data for t in xs], axis=ax)
    return xs[0].graph._push("concat", tuple(xs), val,
                             lambda g: tuple(np.split(g, cuts, axis=ax)))


def slice_(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return x.graph._push("slice", (x,), x.data[idx], vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    try:
        val = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: shape mismatch {src} vs {tuple(shape)}") from None
    return x.graph._push("reshape", (x,), val, lambda g: (g.reshape(src),))


def broadcast(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Expand ``x`` to ``shape`` under numpy rules; backward sums the copies."""
    src = x.shape
    try:
        val = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: shape mismatch {src} vs {tuple(shape)}") from None
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(src) if d == 1 and shape[lead + i] != 1
    )

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return x.graph._push("broadcast", (x,), val, vjp)


def forward_op(kind: str, inputs: list[Tensor], **attrs) -> Tensor:
    """Dispatch by op name; mirrors the individual functions above."""
    table = {
        "matmul": matmul, "add": add, "sub": sub, "mul": mul, "minimum": minimum,
        "neg": neg, "relu": relu, "silu": silu, "tanh": tanh, "sigmoid": sigmoid,
        "softplus": softplus, "log": log, "exp": exp, "square": square,
    }
    if kind in table:
        return table[kind](*inputs)
    if kind == "mean":
        return mean(inputs[0], attrs.get("axis"))
    if kind == "sum":
        return sum_(inputs[0], attrs.get("axis"))
    if kind == "concat":
        return concat(list(inputs), attrs.get("axis", -1))
    if kind == "slice":
        return slice_(inputs[0], attrs["index"])
    if kind == "broadcast":
        return broadcast(inputs[0], attrs["shape"])
    if kind == "reshape":
        return reshape(inputs[0], attrs["shape"])
    if kind == "clip":
        return clip(inputs[0], attrs["lo"], attrs["hi"])
    raise ValueError(f"unknown op kind {kind!r}")


# --------------------------------------------------------------- parameters

def bind(graph: Graph, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Register every array of a parameter dict as a leaf of ``graph``."""
    if graph.record:
        return {k: graph.leaf(v) for k, v in params.items()}
    return {k: graph.const(v) for k, v in params.items()}


def collect(grads: dict[int, np.ndarray], bound: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: grads[t.id] for k, t in bound.items()}


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    """Adam; ``step`` returns fresh arrays so earlier parameter dicts stay valid snapshots."""

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p
                continue
            m = self.b1 * self.m.get(k, 0.0) + (1.0 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1.0 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            out[k] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}
