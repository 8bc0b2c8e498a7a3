"""A small tape-based reverse-mode differentiation engine over float64 arrays.

A :class:`Graph` records every operation as it runs, so node ids are already
in topological order and :func:`backward` is a single reverse sweep. Graphs
are rebuilt for every evaluation; nothing is shared between graphs.

Example::

    g = Graph()
    w = g.parameter(np.array([[1.0], [2.0]]), "w")
    y = dc.sum(dc.square(dc.matmul(x, w)))
    grads = dc.backward(y)      # {w.id: dy/dw}
"""

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class DomainError(ArithmeticError):
    """Raised when an op receives a value outside its mathematical domain."""


class NumericError(ArithmeticError):
    """Raised when a computation produced a non-finite value."""


class UsageError(ValueError):
    """Raised for calls that violate an operation's preconditions."""


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "value", "trainable", "name", "_backward")

    def __init__(self, graph, op, inputs, value, backward_fn=None, trainable=False, name=None):
        self.graph = graph
        self.id = len(graph.nodes)
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.trainable = trainable
        self.name = name
        self._backward = backward_fn
        graph.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.size != 1:
            raise UsageError(f"item() on node of shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

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


class Graph:
    """Operation tape. ``clamp_count`` accumulates every clamp event recorded in it."""

    def __init__(self):
        self.nodes = []
        self.clamp_count = 0

    def constant(self, value):
        return Node(self, "const", (), _as_array(value))

    def parameter(self, value, name=None):
        return Node(self, "param", (), _as_array(value).copy(), trainable=True, name=name)

    @property
    def parameters(self):
        return [n.id for n in self.nodes if n.trainable]

    def record(self, op, inputs, value, backward_fn):
        """Append an op node. ``backward_fn(g)`` returns one gradient (or None) per input."""
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{op}: produced non-finite values")
        return Node(self, op, [i.id for i in inputs], value, backward_fn)


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _graph_of(args):
    for a in args:
        if isinstance(a, Node):
            return a.graph
    return Graph()


def _lift(graph, args):
    out = []
    for a in args:
        if isinstance(a, Node):
            if a.graph is not graph:
                raise UsageError("operands belong to different graphs")
            out.append(a)
        else:
            out.append(graph.constant(a))
    return out


def as_node(value, graph=None):
    if isinstance(value, Node):
        return value
    return (graph or Graph()).constant(value)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# binary ops


def matmul(a, b):
    g = _graph_of((a, b))
    a, b = _lift(g, (a, b))
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return g.record("matmul", (a, b), av @ bv, lambda gr: (gr @ bv.T, av.T @ gr))


def add(a, b):
    g = _graph_of((a, b))
    a, b = _lift(g, (a, b))
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return g.record("add", (a, b), a.value + b.value,
                    lambda gr: (unbroadcast(gr, sa), unbroadcast(gr, sb)))


def sub(a, b):
    g = _graph_of((a, b))
    a, b = _lift(g, (a, b))
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return g.record("sub", (a, b), a.value - b.value,
                    lambda gr: (unbroadcast(gr, sa), unbroadcast(-gr, sb)))


def mul(a, b):
    g = _graph_of((a, b))
    a, b = _lift(g, (a, b))
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return g.record("mul", (a, b), av * bv,
                    lambda gr: (unbroadcast(gr * bv, av.shape), unbroadcast(gr * av, bv.shape)))


def scale(a, c):
    """Multiply by a Python scalar."""
    c = float(c)
    (a,) = _lift(_graph_of((a,)), (a,))
    return a.graph.record("scale", (a,), a.value * c, lambda gr: (gr * c,))


def add_scalar(a, c):
    c = float(c)
    (a,) = _lift(_graph_of((a,)), (a,))
    return a.graph.record("add_scalar", (a,), a.value + c, lambda gr: (gr,))


def concat(nodes):
    """Concatenate along the last axis."""
    g = _graph_of(nodes)
    nodes = _lift(g, nodes)
    lead = {n.shape[:-1] for n in nodes}
    if len(lead) != 1:
        raise ShapeError("concat", *(n.shape for n in nodes))
    bounds = np.cumsum([n.shape[-1] for n in nodes])[:-1]
    return g.record("concat", nodes, np.concatenate([n.value for n in nodes], axis=-1),
                    lambda gr: tuple(np.split(gr, bounds, axis=-1)))


# ---------------------------------------------------------------------------
# unary ops


def _unary(op, a, value, local_grad):
    (a,) = _lift(_graph_of((a,)), (a,))
    return a.graph.record(op, (a,), value(a.value), lambda gr, av=a.value: (gr * local_grad(av),))


def neg(a):
    (a,) = _lift(_graph_of((a,)), (a,))
    return a.graph.record("neg", (a,), -a.value, lambda gr: (-gr,))


def tanh(a):
    (a,) = _lift(_graph_of((a,)), (a,))
    t = np.tanh(a.value)
    return a.graph.record("tanh", (a,), t, lambda gr: (gr * (1.0 - t * t),))


def sigmoid(a):
    (a,) = _lift(_graph_of((a,)), (a,))
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return a.graph.record("sigmoid", (a,), s, lambda gr: (gr * s * (1.0 - s),))


def exp(a):
    (a,) = _lift(_graph_of((a,)), (a,))
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return a.graph.record("exp", (a,), y, lambda gr: (gr * y,))


def square(a):
    return _unary("square", a, lambda v: v * v, lambda v: 2.0 * v)


def log(a, floor=None):
    """Natural log.

    With ``floor=None`` any value <= 0 raises :class:`DomainError`. With a
    floor, values below it (zero included) are clamped, the graph's clamp
    counter records how many, and clamped entries pass no gradient.
    """
    (a,) = _lift(_graph_of((a,)), (a,))
    x = a.value
    if np.any(np.isnan(x)):
        raise DomainError("log: NaN input")
    if floor is None:
        if np.any(x <= 0.0):
            raise DomainError(f"log: non-positive input (min {float(x.min())!r})")
        return a.graph.record("log", (a,), np.log(x), lambda gr: (gr / x,))
    if np.any(x < 0.0):
        raise DomainError(f"log: negative input (min {float(x.min())!r})")
    low = x < floor
    a.graph.clamp_count += int(low.sum())
    xc = np.where(low, floor, x)
    return a.graph.record("log", (a,), np.log(xc), lambda gr: (np.where(low, 0.0, gr / xc),))


def clip(a, lo, hi):
    """Clamp into [lo, hi]; clamped entries pass no gradient and are counted."""
    (a,) = _lift(_graph_of((a,)), (a,))
    x = a.value
    out = (x < lo) | (x > hi)
    a.graph.clamp_count += int(out.sum())
    return a.graph.record("clip", (a,), np.clip(x, lo, hi), lambda gr: (np.where(out, 0.0, gr),))


def transpose(a):
    (a,) = _lift(_graph_of((a,)), (a,))
    if a.value.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return a.graph.record("transpose", (a,), a.value.T, lambda gr: (gr.T,))


def _reduce_backward(gr, shape, axis):
    if axis is None:
        return np.broadcast_to(gr, shape).copy()
    return np.broadcast_to(np.expand_dims(gr, axis), shape).copy()


def sum(a, axis=None):
    (a,) = _lift(_graph_of((a,)), (a,))
    shape = a.shape
    if axis is not None and not -len(shape) <= axis < len(shape):
        raise ShapeError("sum", shape)
    return a.graph.record("sum", (a,), np.asarray(a.value.sum(axis=axis)),
                          lambda gr: (_reduce_backward(gr, shape, axis),))


def mean(a, axis=None):
    (a,) = _lift(_graph_of((a,)), (a,))
    shape = a.shape
    if axis is not None and not -len(shape) <= axis < len(shape):
        raise ShapeError("mean", shape)
    n = a.value.size if axis is None else shape[axis]
    return a.graph.record("mean", (a,), np.asarray(a.value.mean(axis=axis)),
                          lambda gr: (_reduce_backward(gr, shape, axis) / n,))


# ---------------------------------------------------------------------------
# reverse sweep


def backward(root):
    """Gradients of scalar ``root`` w.r.t. every trainable leaf of its graph.

    Returns ``{param_node_id: gradient}``; parameters the root does not depend
    on get zero arrays.
    """
    if root.value.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    graph = root.graph
    grads = {root.id: np.ones_like(root.value)}
    for node in reversed(graph.nodes[:root.id + 1]):
        gr = grads.pop(node.id, None) if not node.trainable else grads.get(node.id)
        if gr is None or node._backward is None:
            continue
        for inp, gi in zip(node.inputs, node._backward(gr)):
            if gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    return {pid: grads.get(pid, np.zeros_like(graph.nodes[pid].value)) for pid in graph.parameters}


# ---------------------------------------------------------------------------
# finite-difference certifier


@dataclass
class CoordinateResult:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class CheckReport:
    n_checked: int
    max_rel_err: float
    tolerance: float
    failures: list = field(default_factory=list)
    worst: CoordinateResult = None

    @property
    def passed(self):
        return not self.failures


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(loss_fn, params, step=1e-5, tolerance=1e-4, max_coords=500, seed=0,
                      grads=None, floor=1e-6):
    """Compare reverse-mode gradients of ``loss_fn`` with central differences.

    ``loss_fn`` receives ``{name: Node}`` bound in a fresh graph and must
    return a scalar node; it has to be deterministic. ``params`` maps names to
    arrays. All coordinates are checked when there are at most ``max_coords``,
    otherwise a seeded random subset of that size. ``grads`` (name -> array)
    replaces the reverse-mode gradients, which is how tests inject faults.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    if grads is None:
        g = Graph()
        bound = {k: g.parameter(v, k) for k, v in params.items()}
        root = loss_fn(bound)
        by_id = backward(root)
        grads = {k: by_id[n.id] for k, n in bound.items()}

    coords = [(k, i) for k, v in params.items() for i in range(v.size)]
    if len(coords) > max_coords:
        pick = np.sort(np.random.default_rng(seed).choice(len(coords), max_coords, replace=False))
        coords = [coords[p] for p in pick]

    def evaluate(name, flat, delta):
        g = Graph()
        bound = {}
        for k, v in params.items():
            if k == name:
                v = v.copy()
                v.reshape(-1)[flat] += delta
            bound[k] = g.constant(v)
        return loss_fn(bound).item()

    report = CheckReport(n_checked=len(coords), max_rel_err=0.0, tolerance=tolerance)
    for name, flat in coords:
        index = tuple(int(i) for i in np.unravel_index(flat, params[name].shape))
        try:
            fp = evaluate(name, flat, step)
            fm = evaluate(name, flat, -step)
        except (NumericError, DomainError) as exc:
            raise NumericError(f"non-finite loss perturbing {name}{list(index)}: {exc}") from exc
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss perturbing {name}{list(index)}")
        numeric = (fp - fm) / (2.0 * step)
        analytic = float(grads[name].reshape(-1)[flat])
        err = relative_error(analytic, numeric, floor)
        res = CoordinateResult(name, tuple(int(i) for i in index), analytic, numeric, err)
        if err > report.max_rel_err or report.worst is None:
            report.max_rel_err = max(err, report.max_rel_err)
            report.worst = res
        if err > tolerance:
            report.failures.append(res)
    return report
