"""Minimal reverse-mode differentiation over dense 2-D float64 matrices.

Every primitive works in two modes.  Called with plain arrays it evaluates
eagerly and returns an ``ndarray``; called with at least one :class:`Node`
it records itself on that node's :class:`Tape` so gradients can be pulled
back later with :func:`backward`.

All values are 2-D.  Scalars are ``(1, 1)`` and vectors are rows ``(1, n)``
or columns ``(n, 1)``.  ``add`` and ``mul`` broadcast singleton axes.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01


class DiffError(Exception):
    """Base class for errors raised by the differentiation core."""


class ShapeError(DiffError, ValueError):
    pass


class NonFiniteError(DiffError, FloatingPointError):
    pass


class TapeConsumedError(DiffError, RuntimeError):
    pass


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


def _coerce(a):
    # 2-D float64 arrays pass through unchecked; a non-finite entry still
    # surfaces in the output check of the primitive consuming it
    if type(a) is np.ndarray and a.ndim == 2 and a.dtype == np.float64:
        return a
    return as_tensor(a)


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in evaluation order, which is a valid topological
    order, so the backward sweep simply walks the list in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[Node] = []
        self.input_keys: list | None = None
        self.output: Node | None = None
        self.consumed = False

    def variable(self, value) -> "Node":
        node = Node(as_tensor(value), self, (), None, "input")
        self.nodes.append(node)
        self.inputs.append(node)
        return node

    def __len__(self):
        return len(self.nodes)


class Node:
    """A recorded value together with how to pull gradients to its parents."""

    __slots__ = ("value", "tape", "parents", "vjp", "op", "index")

    def __init__(self, value, tape, parents, vjp, op):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.index = len(tape.nodes)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"


def value_of(x):
    """Underlying array of a node, or ``x`` itself."""
    return x.value if isinstance(x, Node) else x


_value = value_of


def _apply(name: str, forward: Callable, vjp: Callable, *args):
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is not None and a.tape is not tape:
                raise DiffError(f"{name}: operands recorded on different tapes")
            tape = a.tape
    vals = [_value(a) if isinstance(a, Node) else _coerce(a) for a in args]
    out = forward(*vals)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{name}: non-finite output")
    if tape is None:
        return out
    if tape.consumed:
        raise TapeConsumedError("cannot record on a tape after backward()")
    parents = tuple(a if isinstance(a, Node) else None for a in args)
    node = Node(out, tape, parents, lambda g: vjp(g, out, *vals), name)
    tape.nodes.append(node)
    return node


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(name, a, b):
    out = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")
    return tuple(out)


# ---------------------------------------------------------------- primitives


def matmul(a, b):
    def fwd(x, y):
        if x.shape[1] != y.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {x.shape} by {y.shape}")
        return x @ y

    ga = isinstance(a, Node)
    gb = isinstance(b, Node)

    def vjp(g, out, x, y):
        # skip products for constant operands
        return (g @ y.T if ga else None, x.T @ g if gb else None)

    return _apply("matmul", fwd, vjp, a, b)


def add(a, b):
    def fwd(x, y):
        _broadcast_shape("add", x, y)
        return x + y

    return _apply(
        "add",
        fwd,
        lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        a,
        b,
    )


def mul(a, b):
    """Elementwise (Hadamard) product with singleton broadcasting."""

    def fwd(x, y):
        _broadcast_shape("mul", x, y)
        return x * y

    return _apply(
        "mul",
        fwd,
        lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        a,
        b,
    )


def row_slice(a, start: int, stop: int):
    """Rows ``start:stop`` of ``a``."""

    def fwd(x):
        if not (0 <= start < stop <= x.shape[0]):
            raise ShapeError(f"row_slice: [{start}:{stop}] out of range for {x.shape}")
        return x[start:stop]

    def vjp(g, out, x):
        full = np.zeros_like(x)
        full[start:stop] = g
        return (full,)

    return _apply("row_slice", fwd, vjp, a)


def scale(a, c: float):
    c = float(c)
    return _apply("scale", lambda x: c * x, lambda g, out, x: (c * g,), a)


def transpose(a):
    return _apply("transpose", lambda x: x.T.copy(), lambda g, out, x: (g.T,), a)


def reshape(a, shape, order="C"):
    shape = tuple(shape)

    def fwd(x):
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}")
        return np.reshape(x, shape, order=order).copy()

    return _apply(
        "reshape", fwd, lambda g, out, x: (np.reshape(g, x.shape, order=order),), a
    )


def leaky_relu(a, slope: float = LEAKY_SLOPE):
    # the derivative at exactly 0 takes the positive branch
    return _apply(
        "leaky_relu",
        lambda x: np.where(x >= 0, x, slope * x),
        lambda g, out, x: (np.where(x >= 0, g, slope * g),),
        a,
    )


def relu(a):
    return _apply(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda g, out, x: (np.where(x >= 0, g, 0.0),),
        a,
    )


def absolute(a):
    return _apply(
        "abs",
        np.abs,
        lambda g, out, x: (np.where(x >= 0, g, -g),),
        a,
    )


def sum(a, axis: int | None = None):  # noqa: A001 - mirrors numpy naming
    if axis is None:

        def fwd(x):
            return np.array([[x.sum()]])

        def vjp(g, out, x):
            return (np.full(x.shape, g[0, 0]),)

    elif axis in (0, 1):

        def fwd(x):
            return x.sum(axis=axis, keepdims=True)

        def vjp(g, out, x):
            return (np.broadcast_to(g, x.shape).copy(),)

    else:
        raise ShapeError(f"sum: axis must be None, 0 or 1, got {axis}")
    return _apply("sum", fwd, vjp, a)


def power(a, p: float):
    p = float(p)

    def fwd(x):
        if not p.is_integer() and np.any(x < 0):
            raise ShapeError("power: negative base with non-integer exponent")
        if p < 0 and np.any(x == 0):
            raise NonFiniteError("power: zero base with negative exponent")
        return x**p

    return _apply("power", fwd, lambda g, out, x: (g * p * x ** (p - 1.0),), a)


def frob_sq(a):
    """Squared Frobenius norm, returned as a (1, 1) tensor."""
    return _apply(
        "frob_sq",
        lambda x: np.array([[np.sum(x * x)]]),
        lambda g, out, x: (2.0 * g[0, 0] * x,),
        a,
    )


def row_normalize(a):
    """Map each row to ``|x| / sum(|x|)``; all-zero rows map to the uniform row.

    This is the normalized absolute-value rectification onto the unit simplex.
    """

    def fwd(x):
        ax = np.abs(x)
        s = ax.sum(axis=1, keepdims=True)
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, ax / safe, 1.0 / x.shape[1])

    def vjp(g, out, x):
        ax = np.abs(x)
        s = ax.sum(axis=1, keepdims=True)
        safe = np.where(s > 0, s, 1.0)
        sign = np.where(x >= 0, 1.0, -1.0)
        # d(out_i)/d|x_j| = (delta_ij - out_i) / s
        inner = (g * out).sum(axis=1, keepdims=True)
        gx = sign * (g - inner) / safe
        return (np.where(s > 0, gx, 0.0),)

    return _apply("row_normalize", fwd, vjp, a)


def concat(*parts):
    """Concatenate along columns; all parts share the row count."""

    def fwd(*xs):
        rows = {x.shape[0] for x in xs}
        if len(rows) != 1:
            raise ShapeError(f"concat: row counts differ {[x.shape for x in xs]}")
        return np.concatenate(xs, axis=1)

    def vjp(g, out, *xs):
        edges = np.cumsum([0] + [x.shape[1] for x in xs])
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(xs)))

    return _apply("concat", fwd, vjp, *parts)


# ---------------------------------------------------------------- driving


def record_forward(graph: Callable, inputs):
    """Evaluate ``graph`` on fresh tape variables.

    ``inputs`` is a sequence (passed positionally) or a mapping (passed as a
    single dict of nodes).  Returns ``(output_value, tape)``.
    """
    tape = Tape()
    if isinstance(inputs, Mapping):
        tape.input_keys = list(inputs)
        nodes = {k: tape.variable(v) for k, v in inputs.items()}
        out = graph(nodes)
    else:
        nodes = [tape.variable(v) for v in inputs]
        out = graph(*nodes)
    if not isinstance(out, Node):
        # graph ignored its inputs entirely
        out = Node(as_tensor(out), tape, (), None, "constant")
        tape.nodes.append(out)
    tape.output = out
    return out.value, tape


def backward(tape: Tape, seed=None):
    """Pull ``seed`` back through ``tape``; one gradient per recorded input.

    A tape can be swept only once.
    """
    if tape.consumed:
        raise TapeConsumedError("tape already consumed by a previous backward()")
    out = tape.output
    if out is None:
        raise DiffError("tape has no output; use record_forward()")
    seed = np.ones_like(out.value) if seed is None else as_tensor(seed)
    if seed.shape != out.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} != output {out.shape}")
    tape.consumed = True

    adj: dict[int, np.ndarray] = {out.index: seed}
    for node in reversed(tape.nodes[: out.index + 1]):
        if node.vjp is None:
            continue
        g = adj.pop(node.index, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent is None or pg is None:
                continue
            # adjoints are never mutated in place, so views are safe to keep
            if parent.index in adj:
                adj[parent.index] = adj[parent.index] + pg
            else:
                adj[parent.index] = pg

    grads = [adj.get(n.index, np.zeros_like(n.value)) for n in tape.inputs]
    if tape.input_keys is not None:
        return dict(zip(tape.input_keys, grads))
    return grads


def value_and_grad(fn: Callable, params: Mapping[str, np.ndarray]):
    """Scalar ``fn(nodes_dict)`` and its gradient w.r.t. every entry of ``params``."""
    val, tape = record_forward(fn, params)
    if val.shape != (1, 1):
        raise ShapeError(f"value_and_grad: expected scalar output, got {val.shape}")
    return float(val[0, 0]), backward(tape)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    """First/second moment estimates keyed like the parameters, plus step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr: float, inplace: bool = False):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``.

    With ``inplace=False`` nothing passed in is modified.  ``inplace=True``
    overwrites the parameter and moment arrays, which saves allocations in
    long training loops.
    """
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: non-finite gradient for {k!r}")
        if g.shape != params[k].shape:
            raise ShapeError(f"adam_step: grad {k!r} shape {g.shape} != {params[k].shape}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    if inplace:
        new_params, new_m, new_v = params, state.m, state.v
    else:
        new_params, new_m, new_v = dict(params), {}, {}
    for k, p in params.items():
        if k not in grads:
            continue
        g = grads[k]
        if inplace:
            m = state.m.setdefault(k, np.zeros_like(p))
            v = state.v.setdefault(k, np.zeros_like(p))
            tmp = np.multiply(g, 1.0 - b1)
            m *= b1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v *= b2
            v += tmp
            np.divide(v, bc2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += state.eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr / bc1
            p -= tmp
        else:
            m = b1 * state.m.get(k, np.zeros_like(p)) + (1.0 - b1) * g
            v = b2 * state.v.get(k, np.zeros_like(p)) + (1.0 - b2) * (g * g)
            new_params[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            new_m[k], new_v[k] = m, v
    if not inplace:
        for k in state.m:
            new_m.setdefault(k, state.m[k])
            new_v.setdefault(k, state.v[k])
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


# ---------------------------------------------------------------- checking


def grad_check(loss: Callable, params: Mapping[str, np.ndarray], grads=None, h=1e-6):
    """Largest relative discrepancy between analytic and central-difference gradients.

    ``loss`` maps a dict of arrays to a float.  If ``grads`` is not given it is
    obtained by recording ``loss`` on a tape, so ``loss`` must then be written
    with the primitives in this module.
    """
    params = {k: as_tensor(v).copy() for k, v in params.items()}
    if grads is None:
        _, grads = value_and_grad(loss, params)
    worst = 0.0
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = _scalar(loss(params))
            p[idx] = old - h
            fm = _scalar(loss(params))
            p[idx] = old
            fd = (fp - fm) / (2.0 * h)
            an = g[idx]
            err = abs(an - fd) / (abs(an) + abs(fd) + 1e-12)
            worst = max(worst, err)
    return worst


def _scalar(x) -> float:
    x = _value(x)
    return float(np.asarray(x).reshape(-1)[0])


__all__ = [
    "AdamState",
    "DiffError",
    "LEAKY_SLOPE",
    "NonFiniteError",
    "Node",
    "ShapeError",
    "Tape",
    "TapeConsumedError",
    "absolute",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "frob_sq",
    "grad_check",
    "leaky_relu",
    "matmul",
    "mul",
    "power",
    "record_forward",
    "relu",
    "reshape",
    "row_normalize",
    "row_slice",
    "scale",
    "sum",
    "transpose",
    "value_and_grad",
    "value_of",
]
