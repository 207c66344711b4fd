"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to contributions for each parent.
:func:`backward` walks the graph in reverse topological order.

Broadcasting is deliberately narrow: a scalar may combine with any tensor,
and a row vector may be added to a tensor whose last axis matches it.
Everything else must agree exactly in shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape rule."""


class UnknownOpError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.value) if (self.requires_grad and not parents) else None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def item(self):
        return float(self.value.reshape(-1)[0])

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Operator sugar keeps model code readable; each maps onto a catalog op.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def make_node(value, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Create the output node of a custom primitive.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)


def _shape_error(op, *shapes):
    raise ShapeError(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")


# ---------------------------------------------------------------------------
# op catalog


def matmul(a, b) -> Tensor:
    """Matrix product; supports (m,k)@(k,n), (B,m,k)@(B,k,n) and (B,m,k)@(k,n)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ok = (
        (av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[0])
        or (av.ndim == 3 and bv.ndim == 3 and av.shape[0] == bv.shape[0] and av.shape[2] == bv.shape[1])
        or (av.ndim == 3 and bv.ndim == 2 and av.shape[2] == bv.shape[0])
    )
    if not ok:
        _shape_error("matmul", av.shape, bv.shape)
    out = av @ bv

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if av.ndim == 3 and bv.ndim == 2:
                gb = av.reshape(-1, av.shape[2]).T @ g.reshape(-1, g.shape[2])
            else:
                gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return make_node(out, (a, b), back, "matmul")


def _is_scalar(v):
    return v.size == 1 and v.ndim <= 1


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a scalar or a row vector matching a's last axis."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        kind = "same"
    elif _is_scalar(bv):
        kind = "scalar"
    elif _is_scalar(av):
        return add(b, a)
    elif av.ndim >= 1 and bv.ndim in (1, 2) and bv.shape[-1] == av.shape[-1] and bv.size == av.shape[-1]:
        kind = "row"
    else:
        _shape_error("add", av.shape, bv.shape)
    out = av + (bv.reshape(-1)[0] if kind == "scalar" else bv.reshape(-1) if kind == "row" else bv)

    def back(g):
        gb = None
        if b.requires_grad:
            if kind == "same":
                gb = g
            elif kind == "scalar":
                gb = np.full(bv.shape, g.sum())
            else:
                gb = g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(bv.shape)
        return (g if a.requires_grad else None), gb

    return make_node(out, (a, b), back, "add")


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes, or scalar times tensor."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        out = av * bv

        def back(g):
            return (g * bv if a.requires_grad else None), (g * av if b.requires_grad else None)

        return make_node(out, (a, b), back, "mul")
    if _is_scalar(bv):
        s = bv.reshape(-1)[0]

        def back_s(g):
            return (g * s if a.requires_grad else None), (np.full(bv.shape, (g * av).sum()) if b.requires_grad else None)

        return make_node(av * s, (a, b), back_s, "mul")
    if _is_scalar(av):
        return mul(b, a)
    _shape_error("mul", av.shape, bv.shape)


def scale(x, c: float) -> Tensor:
    """Multiply by a non-differentiable constant scalar."""
    x = as_tensor(x)
    c = float(c)
    return make_node(x.value * c, (x,), lambda g: (g * c,), "scale")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    vals = [t.value for t in ts]
    nd = vals[0].ndim
    ax = axis % nd if nd else 0
    for v in vals[1:]:
        if v.ndim != nd or any(v.shape[i] != vals[0].shape[i] for i in range(nd) if i != ax):
            _shape_error("concat", *[u.shape for u in vals])
    out = np.concatenate(vals, axis=ax)
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def back(g):
        res = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                res.append(g[tuple(idx)])
            else:
                res.append(None)
        return tuple(res)

    return make_node(out, ts, back, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        _shape_error("stack", *[t.shape for t in ts])
    out = np.stack([t.value for t in ts], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) if t.requires_grad else None for i, t in enumerate(ts))

    return make_node(out, ts, back, "stack")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    gate = x.value > 0
    return make_node(np.where(gate, x.value, 0.0), (x,), lambda g: (g * gate,), "relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.value)
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _lse(v, axis):
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))


def log_sum_exp(x, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) along ``axis`` with max subtraction; the axis is removed."""
    x = as_tensor(x)
    if x.value.ndim == 0:
        _shape_error("log_sum_exp", x.shape)
    keep = _lse(x.value, axis)
    out = np.squeeze(keep, axis=axis)

    def back(g):
        return (np.expand_dims(g, axis) * np.exp(x.value - keep),)

    return make_node(out, (x,), back, "log_sum_exp")


def max_pool(x, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    if x.value.ndim == 0:
        _shape_error("max_pool", x.shape)
    arg = np.argmax(x.value, axis=axis)
    out = np.take_along_axis(x.value, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_node(out, (x,), back, "max_pool")


def embedding_lookup(table, indices) -> Tensor:
    """Rows of ``table`` selected by an integer index array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.value.ndim != 2:
        _shape_error("embedding_lookup", table.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table {table.shape}")
    out = table.value[idx]

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return make_node(out, (table,), back, "embedding_lookup")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity (the same node) when not training or rate is 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.value * mask, (x,), lambda g: (g * mask,), "dropout")


def grad_reverse(x, lam: float = 1.0) -> Tensor:
    """Identity forward; multiplies the upstream gradient by ``-lam``."""
    x = as_tensor(x)
    lam = float(lam)
    return make_node(x.value.copy(), (x,), lambda g: (-lam * g,), "grad_reverse")


# -- structural helpers the model needs beyond the arithmetic catalog


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.value[index]

    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def back(g):
        gx = np.zeros_like(x.value)
        if advanced:
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return make_node(np.array(out, copy=True), (x,), back, "getitem")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        _shape_error("reshape", x.shape, shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.array(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = max(x.value.size, 1)
    return scale(sum_all(x), 1.0 / n)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy from logits (stable log1p form)."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        _shape_error("bce_with_logits", z.shape, y.shape)
    zv = z.value
    out = np.maximum(zv, 0.0) - zv * y + np.log1p(np.exp(-np.abs(zv)))
    return make_node(out, (z,), lambda g: (g * (_sigmoid(zv) - y),), "bce_with_logits")


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "stack": stack,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "log_sum_exp": log_sum_exp,
    "max_pool": max_pool,
    "scale": scale,
    "embedding_lookup": embedding_lookup,
    "dropout": dropout,
    "grad_reverse": grad_reverse,
    "getitem": getitem,
    "reshape": reshape,
    "sum": sum_all,
    "bce_with_logits": bce_with_logits,
}


def apply(op_kind: str, inputs: Sequence, **params) -> Tensor:
    """Dispatch by name, e.g. ``apply("log_sum_exp", [x], axis=0)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise UnknownOpError(f"unknown op kind {op_kind!r}") from None
    if op_kind == "concat" or op_kind == "stack":
        return fn(list(inputs), **params)
    return fn(*inputs, **params)


# ---------------------------------------------------------------------------
# graph + backward


@dataclass
class CompGraph:
    """Nodes reachable from a root, parents always before children."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "CompGraph":
        order, seen = [], set()
        stack_ = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
        return cls(order)


def backward(root: Tensor, graph: CompGraph | None = None) -> CompGraph:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar-shaped, got {root.shape}")
    if graph is None:
        graph = CompGraph.from_root(root)
    if not root.requires_grad:
        return graph
    for node in graph.nodes:
        if not node.is_leaf:
            node.grad = None
    root._accumulate(np.ones_like(root.value))
    for node in reversed(graph.nodes):
        if node.is_leaf or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is not None and parent.requires_grad:
                parent._accumulate(g)
    return graph


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class CheckReport:
    max_rel_error: float
    n_checked: int
    failures: list = field(default_factory=list)
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.failures and not self.message


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    coords: dict | None = None,
    scale: float = 1.0,
) -> CheckReport:
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``f`` must rebuild its graph on every call and be deterministic (reseed any
    dropout stream inside it). ``coords`` optionally restricts each parameter
    (by position) to a list of flat indices. Relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator. ``scale`` is the
    expected ratio analytic/numeric (``-lam`` through a gradient reversal).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    root = f()
    if not np.all(np.isfinite(root.value)):
        return CheckReport(float("inf"), 0, message="non-finite function value")
    backward(root)
    analytic = [p.grad.copy() for p in params]
    worst, failures, n = 0.0, [], 0
    for k, p in enumerate(params):
        flat = p.value.reshape(-1)
        idxs = coords.get(k, range(flat.size)) if coords else range(flat.size)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            n += 1
            a = analytic[k].reshape(-1)[i]
            if not (np.isfinite(fp) and np.isfinite(fm)):
                failures.append((k, i, a, float("nan")))
                worst = float("inf")
                continue
            num = scale * (fp - fm) / (2 * eps)
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, rel)
            if rel > tol:
                failures.append((k, i, a, num))
    return CheckReport(worst, n, failures)
