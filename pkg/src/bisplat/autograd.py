"""Small reverse-mode differentiation core over dense numpy arrays.

A :class:`Tensor` records the op that produced it and a closure mapping the
upstream adjoint to adjoints of its parents. ``backward`` walks the graph in
reverse topological order and calls each closure exactly once.

Broadcasting is deliberately narrow: operands of an elementwise op must have
equal shapes, or the right operand may be a row vector broadcast over the
leading axis (bias addition), or a 0-d constant.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.op = op
        self.shapes = (a, b)


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name", "op", "_consumed")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None,
                 requires_grad: bool = False, name: str | None = None, op: str = "leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name
        self.op = op
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.shape}, dtype={self.dtype})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    # operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(value, name: str | None = None, dtype=np.float32) -> Tensor:
    return Tensor(np.array(value, dtype=dtype), requires_grad=True, name=name)


def make(value, parents, backward_fn, op: str) -> Tensor:
    """Create a non-leaf node; ``backward_fn(g)`` returns one adjoint per parent (or None)."""
    return Tensor(value, parents, backward_fn, op=op)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from the scalar ``root``."""
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise GraphError("backward already called on this graph; rebuild it")
    order = _toposort(root)
    for node in order:
        if node.is_leaf and node.requires_grad and node.grad is not None:
            raise GraphError(
                f"leaf {node.name or node!r} already holds a gradient; call zero_grad() first")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g if g is not None else np.zeros_like(node.value)
            continue
        if g is None or node.backward_fn is None:
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise GraphError(f"{node.op}: adjoint shape {pg.shape} != value shape {p.shape}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    root._consumed = True
    # leaves never reached through a grad-carrying path still get zeros
    for node in order:
        if node.is_leaf and node.requires_grad and node.grad is None:
            node.grad = np.zeros_like(node.value)


# ---------------------------------------------------------------------------
# elementwise binary ops


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.value.ndim == 0:
        return "scalar"
    if a.value.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1])):
        return "row"
    raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, kind: str, shape: tuple) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "scalar":
        return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)
    return g.sum(axis=0).reshape(shape)


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    kind = _broadcast_kind("add", a, b)

    def bw(g):
        return g, _reduce_to(g, kind, b.shape)

    return make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    kind = _broadcast_kind("sub", a, b)

    def bw(g):
        return g, -_reduce_to(g, kind, b.shape)

    return make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    kind = _broadcast_kind("mul", a, b)
    av, bv = a.value, b.value

    def bw(g):
        ga = g * bv if a.requires_grad else None
        gb = _reduce_to(g * av, kind, b.shape) if b.requires_grad else None
        return ga, gb

    return make(av * bv, (a, b), bw, "mul")


def safe_div(a: Tensor, b: Tensor) -> Tensor:
    """``a / b`` with b broadcast as a column; rows where b == 0 give 0.

    ``a`` is (n, k), ``b`` is (n,). Used for normalized weighted sums where an
    empty support yields a zero vector.
    """
    if a.value.ndim != 2 or b.shape != (a.shape[0],):
        raise ShapeError("safe_div", a.shape, b.shape)
    bv = b.value
    nz = bv != 0
    inv = np.zeros_like(bv)
    inv[nz] = 1.0 / bv[nz]
    out = a.value * inv[:, None]

    def bw(g):
        ga = g * inv[:, None]
        gb = -(g * out).sum(axis=1) * inv
        return ga, gb

    return make(out, (a, b), bw, "safe_div")


# ---------------------------------------------------------------------------
# linear algebra / structural ops


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return make(av @ bv, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("transpose", a.shape, ())
    return make(a.value.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return make(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.value)
        if _is_fancy(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return make(a.value[idx], (a,), bw, "slice")


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].value.ndim
    for t in tensors[1:]:
        ref, cur = list(tensors[0].shape), list(t.shape)
        del ref[ax], cur[ax]
        if ref != cur:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return make(np.concatenate([t.value for t in tensors], axis=ax), tensors, bw, "concat")


def stack_columns(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length n into an (n, k) matrix."""
    return concat([reshape(t, (-1, 1)) for t in tensors], axis=1)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    out = a.value.sum(axis=axis)
    return make(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a: Tensor) -> Tensor:
    return mul(reduce_sum(a), 1.0 / a.value.size)


# ---------------------------------------------------------------------------
# unary ops


def _unary(a: Tensor, value: np.ndarray, dfn: Callable[[np.ndarray], np.ndarray], op: str) -> Tensor:
    return make(value, (a,), lambda g: (g * dfn(value),), op)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return make(np.where(mask, a.value, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sin(a: Tensor) -> Tensor:
    x = a.value
    return make(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def cos(a: Tensor) -> Tensor:
    x = a.value
    return make(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def exp(a: Tensor) -> Tensor:
    return _unary(a, np.exp(a.value), lambda y: y, "exp")


def square(a: Tensor) -> Tensor:
    x = a.value
    return make(x * x, (a,), lambda g: (2 * g * x,), "square")


def logistic(a: Tensor) -> Tensor:
    y = _logistic(a.value)
    return _unary(a, y, lambda y: y * (1 - y), "logistic")


def _logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    return _unary(a, np.tanh(a.value), lambda y: 1 - y * y, "tanh")


def softplus(a: Tensor) -> Tensor:
    x = a.value
    y = np.logaddexp(0, x).astype(a.dtype)
    return make(y, (a,), lambda g: (g * _logistic(x),), "softplus")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.value
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make(y, (a,), bw, "softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization of a 2-d tensor followed by affine gain/bias."""
    x = a.value
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm", a.shape, gain.shape)
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gv = gain.value
    out = xhat * gv + bias.value

    def bw(g):
        gx_hat = g * gv
        n = x.shape[1]
        ga = rstd * (gx_hat - gx_hat.mean(axis=1, keepdims=True)
                     - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True) / n)
        return ga, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make(out.astype(x.dtype), (a, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Ordered collection of named learnable leaves."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.groups: dict[str, str] = {}

    def add(self, name: str, value, group: str = "networks", dtype=np.float32) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = parameter(value, name=name, dtype=dtype)
        self._params[name] = t
        self.groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.value.size for t in self._params.values()))

    def astype(self, dtype) -> None:
        for t in self._params.values():
            t.value = t.value.astype(dtype)


# ---------------------------------------------------------------------------
# finite differences


def numerical_grad(f: Callable[[], float], t: Tensor, entries: Iterable[int], h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. flat entries of ``t``."""
    flat = t.value.reshape(-1)
    out = []
    for k in entries:
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps structurally zero gradients (e.g. an attention key bias,
    which softmax ignores) from dividing rounding noise by zero.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
