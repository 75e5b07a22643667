"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Every differentiable op appends a node to the :class:`Graph` owned by its
tracked inputs. Backward rules are written with the same ops, so a backward
pass run with ``build_higher_order=True`` records its own nodes and can be
differentiated again (double backprop).

    g = Graph()
    x = g.leaf(np.array([3.0]))
    y = (x * x).sum()
    (dx,) = backward(y, [x])          # [6.0]
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DegenerateInputError(ArithmeticError):
    pass


class ContractError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("op", "parents", "vjp", "selective")

    def __init__(self, op: str, parents: tuple, vjp: Callable | None):
        self.op = op
        self.parents = parents
        self.vjp = vjp
        # vjps that accept a per-parent "needs gradient" mask
        self.selective = op in ("matmul", "mul")


class Graph:
    """Append-only list of nodes; parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.recording = True

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data) -> "Tensor":
        # no copy: callers must not mutate ``data`` while the graph is in use
        arr = np.asarray(data, dtype=np.float64)
        self.nodes.append(Node("leaf", (), None))
        return Tensor(arr, self, len(self.nodes) - 1)

    def record(self, op, data, parents, vjp) -> "Tensor":
        self.nodes.append(Node(op, parents, vjp))
        return Tensor(data, self, len(self.nodes) - 1)

    @contextmanager
    def paused(self):
        prev = self.recording
        self.recording = False
        try:
            yield
        finally:
            self.recording = prev


class Tensor:
    __slots__ = ("data", "graph", "node")

    def __init__(self, data, graph: Graph | None = None, node: int | None = None):
        if not isinstance(data, np.ndarray) or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.graph = graph
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def tracked(self):
        return self.node is not None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    __array_priority__ = 100

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _graph_of(*xs: Tensor) -> Graph | None:
    for x in xs:
        if x.node is not None and x.graph.recording:
            return x.graph
    return None


def _emit(op, data, parents, vjp) -> Tensor:
    g = _graph_of(*parents)
    if g is None:
        return Tensor(data)
    return g.record(op, data, parents, vjp)


# -- shape plumbing ---------------------------------------------------------

def sum_to(x, shape) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = len(x.shape) - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    out = np.sum(x.data, axis=axes, keepdims=True)
    out = out.reshape(shape)
    return _emit("sum_to", out, (x,), lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    out = np.broadcast_to(x.data, shape).copy()
    return _emit("broadcast_to", out, (x,), lambda g: (sum_to(g, x.shape),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _emit("reshape", out, (x,), lambda g: (reshape(g, x.shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if len(x.shape) != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _emit("transpose", x.data.T, (x,), lambda g: (transpose(g),))


# -- arithmetic ---------------------------------------------------------------

def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(scale(g, -1.0), b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def vjp(g, need=(True, True)):
        return (sum_to(mul(g, b), a.shape) if need[0] else None,
                sum_to(mul(g, a), b.shape) if need[1] else None)

    return _emit("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def vjp(g):
        ga = div(g, b)
        gb = scale(mul(ga, div(a, b)), -1.0)
        return sum_to(ga, a.shape), sum_to(gb, b.shape)

    return _emit("div", out, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _emit("scale", x.data * c, (x,), lambda g: (scale(g, c),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _emit("square", x.data * x.data, (x,), lambda g: (mul(g, scale(x, 2.0)),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def vjp(g):
        if np.any(out == 0.0):
            raise DegenerateInputError("sqrt gradient is undefined at 0")
        return (div(g, scale(y, 2.0)),)

    y = _emit("sqrt", out, (x,), vjp)
    return y


def log1p(x) -> Tensor:
    x = as_tensor(x)
    return _emit("log1p", np.log1p(x.data), (x,), lambda g: (div(g, add(x, 1.0)),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (mul(g, sub(1.0, square(y))),)

    y = _emit("tanh", out, (x,), vjp)
    return y


def leaky_relu(x, negative_slope: float = 0.001) -> Tensor:
    if negative_slope < 0:
        raise ValueError("negative_slope must be >= 0")
    x = as_tensor(x)
    # slope at exactly 0 is the positive branch
    mask = np.where(x.data >= 0.0, 1.0, negative_slope)
    return _emit("leaky_relu", x.data * mask, (x,), lambda g: (mul(g, Tensor(mask)),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def vjp(g, need=(True, True)):
        return (matmul(g, transpose(b)) if need[0] else None,
                matmul(transpose(a), g) if need[1] else None)

    return _emit("matmul", a.data @ b.data, (a, b), vjp)


# -- reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _keep_shape(shape, axes):
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.data.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    kshape = _keep_shape(x.shape, axes)

    def vjp(g):
        return (broadcast_to(reshape(g, kshape), x.shape),)

    return _emit("sum", out, (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.data.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(tsum(x, axis, keepdims), 1.0 / count)


def l2_norm(x, axis=None, keepdims=False) -> Tensor:
    """sqrt of the sum of squares; gradient at the zero vector raises."""
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("l2_norm of an empty tensor")
    axes = _norm_axis(axis, x.data.ndim)
    out = np.sqrt(np.sum(x.data * x.data, axis=axes, keepdims=keepdims))
    kshape = _keep_shape(x.shape, axes)

    def vjp(g):
        if np.any(out == 0.0):
            raise DegenerateInputError("l2_norm gradient is undefined at the zero vector")
        ratio = div(reshape(g, kshape), reshape(y, kshape))
        return (mul(x, ratio),)

    y = _emit("l2_norm", out, (x,), vjp)
    return y


# -- structure ----------------------------------------------------------------

def _slice(x, axis, start, stop) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    out = x.data[tuple(idx)].copy()
    full = x.shape
    return _emit("slice", out, (x,), lambda g: (_pad(g, axis, start, full),))


def _pad(g, axis, start, full_shape) -> Tensor:
    g = as_tensor(g)
    out = np.zeros(full_shape)
    idx = [slice(None)] * len(full_shape)
    stop = start + g.shape[axis]
    idx[axis] = slice(start, stop)
    out[tuple(idx)] = g.data
    return _emit("pad", out, (g,), lambda h: (_slice(h, axis, start, stop),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of nothing")
    ndim = ts[0].data.ndim
    axis = axis % ndim
    for t in ts[1:]:
        if t.data.ndim != ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g):
        return tuple(_slice(g, axis, int(bounds[i]), int(bounds[i + 1])) for i in range(len(ts)))

    return _emit("concat", out, tuple(ts), vjp)


def take_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    n = x.shape[0]
    return _emit("take_rows", x.data[idx], (x,), lambda g: (_scatter_rows(g, idx, n),))


def _scatter_rows(g, idx, n) -> Tensor:
    g = as_tensor(g)
    out = np.zeros((n,) + g.shape[1:])
    np.add.at(out, idx, g.data)
    return _emit("scatter_rows", out, (g,), lambda h: (take_rows(h, idx),))


# -- differentiation ------------------------------------------------------------

def _needs_grad(graph: Graph, lo: int, hi: int, targets: set[int]) -> set[int]:
    """Node ids in [lo, hi] that have some target among their ancestors."""
    need = set(targets)
    nodes = graph.nodes
    for i in range(lo, hi + 1):
        if i in need:
            continue
        for p in nodes[i].parents:
            if p.node is not None and p.graph is graph and p.node in need:
                need.add(i)
                break
    return need


def backward(output: Tensor, wrt: Sequence[Tensor], build_higher_order: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    With ``build_higher_order`` the returned gradients are graph nodes and can
    themselves be differentiated. Tensors that ``output`` does not depend on
    get a zero gradient.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    graph = output.graph
    zeros = [Tensor(np.zeros(w.shape)) for w in wrt]
    if graph is None or output.node is None:
        return zeros
    targets = {w.node for w in wrt if w.graph is graph and w.node is not None}
    if not targets:
        return zeros
    need = _needs_grad(graph, min(targets), output.node, targets)
    if output.node not in need:
        return zeros

    grads: dict[int, Tensor] = {output.node: Tensor(np.ones(output.shape))}
    stop = min(targets)
    ctx = graph.paused() if not build_higher_order else _nullctx()
    with ctx:
        for i in range(output.node, stop - 1, -1):
            g = grads.get(i)
            if g is None:
                continue
            node = graph.nodes[i]
            if node.vjp is None:
                continue
            if i in targets and not any(
                p.node in need for p in node.parents if p.graph is graph and p.node is not None
            ):
                continue
            wanted = tuple(p.node is not None and p.graph is graph and p.node in need
                           for p in node.parents)
            pgrads = node.vjp(g, wanted) if node.selective else node.vjp(g)
            for p, pg, w in zip(node.parents, pgrads, wanted):
                if not w:
                    continue
                prev = grads.get(p.node)
                grads[p.node] = pg if prev is None else add(prev, pg)
            if i not in targets:
                del grads[i]

    out = []
    for w, z in zip(wrt, zeros):
        g = grads.get(w.node) if w.graph is graph else None
        if g is None:
            out.append(z)
        else:
            out.append(g if build_higher_order else g.detach())
    return out


@contextmanager
def _nullctx():
    yield


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {what}")
    return t
