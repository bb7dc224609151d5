"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operator accepts inputs with optional leading batch axes and follows
numpy broadcasting; gradients flowing into a broadcast operand are summed
back to that operand's shape.  Matrix semantics apply to the trailing two
axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteGradient(FloatingPointError):
    """Raised by an optimizer when a gradient contains NaN or inf."""


class Node:
    """A value in the computation graph.

    Attributes:
        value: forward value, a float64 ndarray (float32 is kept as is, for
            reduced-precision training).
        grad: accumulated gradient of the loss w.r.t. ``value`` (same shape),
            or None before ``backward`` touches it.
        op: operator tag ("leaf" for inputs and parameters).
        parents: input nodes.
        requires_grad: leaves with this flag are trainable parameters.
    """

    __array_priority__ = 1000  # so ndarray <op> Node defers to Node

    def __init__(self, value, op: str = "leaf", parents: Sequence["Node"] = (),
                 requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value)
        if value.dtype != np.float32:
            value = value.astype(np.float64, copy=False)
        self.value = value
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{tag}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_node(other), -1.0))

    def __rsub__(self, other):
        return add(as_node(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_node(other), self)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)


def parameter(value, name: str | None = None, dtype=np.float64) -> Node:
    """Trainable leaf."""
    return Node(np.array(value, dtype=dtype), requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


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


def _make(value, op, parents, backward_fn) -> Node:
    out = Node(value, op=op, parents=parents)
    if out.requires_grad:
        out._backward = backward_fn
    return out


def _broadcast_shape(op, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {' and '.join(map(str, shapes))}") from None


# ---------------------------------------------------------------------------
# operators


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    av, bv = a.value, b.value

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            if av.ndim == 2 and bv.ndim > 2:
                # shared left operand: contract the batch axes in one GEMM
                lead = tuple(range(bv.ndim - 2))
                ga = np.tensordot(g, bv, axes=(lead + (g.ndim - 1,), lead + (bv.ndim - 1,)))
            else:
                ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _make(av @ bv, "matmul", (a, b), backward_fn)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, "add", (a, b), backward_fn)


def mul(a, b) -> Node:
    """Elementwise product."""
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a.shape, b.shape)
    av, bv = a.value, b.value

    def backward_fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, "mul", (a, b), backward_fn)


def div(a, b) -> Node:
    """Elementwise quotient."""
    a, b = as_node(a), as_node(b)
    _broadcast_shape("div", a.shape, b.shape)
    av, bv = a.value, b.value
    y = av / bv

    def backward_fn(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * y / bv, bv.shape)

    return _make(y, "div", (a, b), backward_fn)


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return _make(a.value * c, "scale", (a,), lambda g: (g * c,))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))


def exp(a) -> Node:
    a = as_node(a)
    y = np.exp(a.value)
    return _make(y, "exp", (a,), lambda g: (g * y,))


def log(a) -> Node:
    a = as_node(a)
    x = a.value
    return _make(np.log(x), "log", (a,), lambda g: (g / x,))


def square(a) -> Node:
    a = as_node(a)
    x = a.value
    return _make(x * x, "square", (a,), lambda g: (2.0 * x * g,))


def abs_pow(a, eta: int) -> Node:
    """Elementwise |x|**eta for eta in {1, 2}; subgradient 0 at the origin for eta=1."""
    a = as_node(a)
    x = a.value
    if eta == 1:
        return _make(np.abs(x), "abs_pow", (a,), lambda g: (g * np.sign(x),))
    if eta == 2:
        return _make(x * x, "abs_pow", (a,), lambda g: (2.0 * x * g,))
    raise ValueError(f"abs_pow supports eta in {{1, 2}}, got {eta}")


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, "softmax", (a,), backward_fn)


def softmax_cols(a) -> Node:
    """Softmax down each column, so every column sums to one."""
    a = as_node(a)
    if a.ndim < 2:
        raise ShapeError(f"softmax_cols: need a matrix, got shape {a.shape}")
    out = softmax(a, axis=-2)
    out.op = "softmax_cols"
    return out


def layer_norm(a, gamma=1.0, beta=0.0, n_axes: int = 2, eps: float = 1e-9) -> Node:
    """Normalize over the trailing ``n_axes`` axes (the whole matrix by default).

    ``gamma`` and ``beta`` are scalars or scalar Nodes.
    """
    a, gamma, beta = as_node(a), as_node(gamma), as_node(beta)
    if gamma.value.size != 1 or beta.value.size != 1:
        raise ShapeError(f"layer_norm: gamma/beta must be scalars, got {gamma.shape} and {beta.shape}")
    n_axes = min(n_axes, a.ndim)
    axes = tuple(range(a.ndim - n_axes, a.ndim))
    x = a.value
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv, bv = gamma.value.reshape(()), beta.value.reshape(())

    def backward_fn(g):
        gx = g * gv
        m1 = gx.mean(axis=axes, keepdims=True)
        m2 = (gx * xhat).mean(axis=axes, keepdims=True)
        da = inv * (gx - m1 - xhat * m2)
        dgamma = np.sum(g * xhat).reshape(gamma.shape)
        dbeta = np.sum(g).reshape(beta.shape)
        return da, dgamma, dbeta

    return _make(gv * xhat + bv, "layer_norm", (a, gamma, beta), backward_fn)


def concat_cols(nodes: Sequence) -> Node:
    nodes = [as_node(n) for n in nodes]
    lead = {n.shape[:-1] for n in nodes}
    if len(lead) != 1:
        raise ShapeError(f"concat_cols: row/batch shapes differ: {[n.shape for n in nodes]}")
    widths = [n.shape[-1] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=-1))

    return _make(np.concatenate([n.value for n in nodes], axis=-1), "concat_cols", nodes, backward_fn)


def reshape(a, shape) -> Node:
    a = as_node(a)
    try:
        y = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(y, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Node:
    """Swap the trailing two axes."""
    a = as_node(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2-D, got {a.shape}")
    return _make(np.swapaxes(a.value, -1, -2), "transpose", (a,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_(a, index) -> Node:
    a = as_node(a)
    y = a.value[index]

    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward_fn(g):
        full = np.zeros_like(a.value)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(y, "slice", (a,), backward_fn)


def sum_(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    y = a.value.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(y, "sum", (a,), backward_fn)


def mean(a, axis=None) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# graph traversal


def topo_order(root: Node) -> list[Node]:
    """Nodes reachable from ``root``, parents before children."""
    order: list[Node] = []
    seen: set[int] = set()
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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> list[Node]:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node requiring grad.

    Gradients accumulate, so call ``zero_grad`` on parameters between passes.
    Returns the topological order that was traversed.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.dtype != parent.value.dtype:
                pg = pg.astype(parent.value.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return order


def zero_grad(params: Iterable[Node]):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizers


def _check_finite(params):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.count_nonzero(~np.isfinite(p.grad)))
            raise NonFiniteGradient(
                f"non-finite gradient in parameter {p.name or '?'} shape {p.shape}: "
                f"{bad} of {p.grad.size} entries")


class Adam:
    """Adam with bias correction; parameters are updated in place."""

    def __init__(self, params: Sequence[Node], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        _check_finite(self.params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        zero_grad(self.params)


class SGD:
    def __init__(self, params: Sequence[Node], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self):
        _check_finite(self.params)
        for p in self.params:
            if p.grad is not None:
                p.value -= self.lr * p.grad

    def zero_grad(self):
        zero_grad(self.params)


def adam_step(params: Sequence[Node], lr: float, moments: dict | None = None,
              betas=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """Functional Adam step: update ``params`` from their ``.grad`` in place.

    ``moments`` is the state returned by the previous call (None to start).
    """
    if moments is None:
        moments = {"t": 0, "m": [np.zeros_like(p.value) for p in params],
                   "v": [np.zeros_like(p.value) for p in params]}
    opt = Adam(params, lr=lr, betas=betas, eps=eps)
    opt.t, opt.m, opt.v = moments["t"], moments["m"], moments["v"]
    opt.step()
    moments["t"] = opt.t
    return moments


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
