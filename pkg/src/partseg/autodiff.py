"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op builds a Node holding its forward value plus vector-Jacobian-product
closures for its parents. ``backward`` walks the graph once in reverse
topological order and returns gradients for the requested leaves, so the same
graph (or shared sub-graphs) can be differentiated repeatedly without state
leaking between calls. Everything is dtype-agnostic: float32 graphs stay
float32, float64 stays float64.
"""

import numpy as np


class Node:
    __slots__ = ("value", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value):
    return Node(value)


def _wrap(x, dtype):
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a = _wrap(a, None if not isinstance(b, Node) else b.value.dtype)
    b = _wrap(b, a.value.dtype)
    return Node(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a, b):
    a = _wrap(a, None if not isinstance(b, Node) else b.value.dtype)
    b = _wrap(b, a.value.dtype)
    return Node(
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b):
    a = _wrap(a, None if not isinstance(b, Node) else b.value.dtype)
    b = _wrap(b, a.value.dtype)
    return Node(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def matmul(a, b):
    return Node(
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def affine(x, w, b):
    """x @ w + b in one node (b broadcasts over rows)."""
    return Node(
        x.value @ w.value + b.value,
        (x, w, b),
        (
            lambda g: g @ w.value.T,
            lambda g: x.value.T @ g,
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def relu(a):
    return Node(np.maximum(a.value, 0), (a,), (lambda g: g * (a.value > 0),))


def sigmoid(a):
    v = a.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return Node(out, (a,), (lambda g: g * out * (1.0 - out),))


def log(a):
    return Node(np.log(a.value), (a,), (lambda g: g / a.value,))


def power(a, exponent):
    v = a.value
    return Node(v ** exponent, (a,), (lambda g: g * exponent * v ** (exponent - 1),))


def clip(a, lo, hi):
    """Clamp values; the gradient passes through only strictly inside the band."""
    inside = (a.value > lo) & (a.value < hi)
    return Node(np.clip(a.value, lo, hi), (a,), (lambda g: g * inside,))


def concat(nodes, axis=1):
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)
    value = np.concatenate([n.value for n in nodes], axis=axis)

    def make_vjp(i):
        sl = [slice(None)] * value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return Node(value, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))))


def amax(a, axis=0):
    """Maximum along one axis; gradient routes to the first argmax (lowest index)."""
    idx = np.argmax(a.value, axis=axis)
    value = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return out

    return Node(value, (a,), (vjp,))


def nsum(a, axis=None):
    if axis is None:
        return Node(a.value.sum(), (a,), (lambda g: np.broadcast_to(g, a.value.shape),))
    return Node(
        a.value.sum(axis=axis),
        (a,),
        (lambda g: np.broadcast_to(np.expand_dims(g, axis), a.value.shape),)
    )


def nmean(a, axis=None):
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(nsum(a, axis=axis), 1.0 / count)


def reshape(a, shape):
    old = a.value.shape
    return Node(a.value.reshape(shape), (a,), (lambda g: g.reshape(old),))


def getitem(a, key):
    def vjp(g):
        out = np.zeros_like(a.value)
        out[key] = g
        return out

    return Node(a.value[key], (a,), (vjp,))


def _topo_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root, wrt):
    """Gradients of a scalar ``root`` with respect to the ``wrt`` leaves.

    Returns a list of arrays aligned with ``wrt``; leaves the graph untouched,
    so repeated calls (e.g. gradient accumulation over shared sub-graphs) are
    safe.
    """
    assert root.value.ndim == 0, "backward expects a scalar root"
    order = _topo_order(root)
    keep = {id(w) for w in wrt}
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = contrib
        if id(node) not in keep:
            del grads[id(node)]
    return [grads.get(id(w), np.zeros_like(w.value)) for w in wrt]
