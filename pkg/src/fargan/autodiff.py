"""Dense float64 tensors and a taped reverse-mode autodiff engine.

Every operation is appended to a :class:`Tape`.  Two reverse sweeps are
available:

* :func:`backward` walks the tape with numpy vector-Jacobian products and
  returns plain arrays.
* :func:`input_gradient_graph` walks the tape *symbolically*, recording the
  vector-Jacobian products as new tape nodes.  The resulting gradient is an
  ordinary :class:`Var`, so a later :func:`backward` differentiates through
  it (double backprop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class SecondOrderError(RuntimeError):
    """An op on the path has no symbolic (second-order) rule."""


def as_tensor(data, copy: bool = True) -> np.ndarray:
    """Coerce ``data`` to a float64 array, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("tensor values must be finite")
    return arr


# ---------------------------------------------------------------------------
# numerics shared by forward rules
# ---------------------------------------------------------------------------


def stable_sigmoid(x):
    """Sigmoid evaluated with separate branches for x >= 0 and x < 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x), finite for every finite x."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` computed one row at a time.

    BLAS picks different kernels (and summation orders) depending on the
    number of rows; a stacked (B, 1, k) @ (k, n) product does not, so a row
    gives bit-identical output whether evaluated alone or inside a batch.
    """
    return np.matmul(x[:, None, :], w)[:, 0, :]


def sum_to(arr: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast result back to ``shape``."""
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    if lead:
        arr = arr.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and arr.shape[i] != 1)
    if axes:
        arr = arr.sum(axis=axes, keepdims=True)
    return arr


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Node:
    __slots__ = ("op", "parents", "value", "attrs")

    def __init__(self, op, parents, value, attrs):
        self.op = op
        self.parents = parents
        self.value = value
        self.attrs = attrs


class Tape:
    """Append-only list of nodes; parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> "Var":
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def var(self, value, copy: bool = True) -> "Var":
        """Add a leaf holding ``value``.

        With ``copy=False`` the leaf aliases the caller's array, which must
        not be mutated while the tape is in use.
        """
        return self._push(Node("leaf", (), as_tensor(value, copy), None))

    const = var

    def record(self, op: str, inputs: Sequence["Var"], **attrs) -> "Var":
        try:
            rule = OPS[op]
        except KeyError:
            raise ValueError(f"unknown op {op!r}") from None
        parents = []
        for v in inputs:
            if v.tape is not self:
                raise ValueError(f"{op}: input belongs to a different tape")
            parents.append(v.id)
        values = [self.nodes[i].value for i in parents]
        if rule.check is not None:
            rule.check(op, [v.shape for v in values], attrs)
        value = rule.forward(values, attrs)
        return self._push(Node(op, tuple(parents), value, attrs))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; returns the fresh values."""
        out: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                out.append(node.value)
            else:
                out.append(OPS[node.op].forward([out[i] for i in node.parents], node.attrs))
        return out


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple:
        return self.tape.nodes[self.id].value.shape

    def __repr__(self):
        return f"Var(id={self.id}, op={self.tape.nodes[self.id].op}, shape={self.shape})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", [self], c=float(other))
        return self.tape.record("mul", [self, self._lift(other)])

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.record("scale", [self], c=-1.0)

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    @property
    def T(self):
        return self.tape.record("transpose", [self])

    def sum(self):
        return self.tape.record("sum", [self])

    def mean(self):
        return self.tape.record("mean", [self])


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------

# numeric VJP: (g, input values, output value, attrs) -> list of arrays or None
NumericVjp = Callable[[np.ndarray, list, np.ndarray, dict], list]
# symbolic VJP: (tape, g Var, input Vars, output Var, attrs) -> list of Var or None
SymbolicVjp = Callable[[Tape, Var, list, Var, dict], list]


@dataclass
class OpRule:
    forward: Callable[[list, dict], np.ndarray]
    vjp: NumericVjp
    svjp: Optional[SymbolicVjp]
    check: Optional[Callable] = None


def _shape_fail(op, shapes, why=""):
    msg = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
    raise ShapeError(msg + (f" ({why})" if why else ""))


def _check_broadcast(op, shapes, attrs):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError:
        _shape_fail(op, shapes, "not broadcastable")


def _check_matmul(op, shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        _shape_fail(op, shapes)


def _check_linear(op, shapes, attrs):
    x, w, b = shapes
    if len(x) != 2 or len(w) != 2 or len(b) != 1 or x[1] != w[1] or b[0] != w[0]:
        _shape_fail(op, shapes)


def _check_2d(op, shapes, attrs):
    if len(shapes[0]) != 2:
        _shape_fail(op, shapes, "expected a matrix")


def _check_concat(op, shapes, attrs):
    if not shapes:
        raise ShapeError("concat_rows: no inputs")
    tails = {tuple(s[1:]) for s in shapes}
    if any(len(s) != 2 for s in shapes) or len(tails) != 1:
        _shape_fail(op, shapes, "row blocks must be matrices with equal width")


def _check_to_shape(op, shapes, attrs):
    target = tuple(attrs["shape"])
    src = tuple(shapes[0])
    ok = True
    try:
        big = np.broadcast_shapes(src, target)
    except ValueError:
        ok = False
    else:
        want = target if op == "broadcast_to" else src
        ok = big == want
    if not ok:
        _shape_fail(op, [src, target])


def _check_slice(op, shapes, attrs):
    s = shapes[0]
    if len(s) != 2:
        _shape_fail(op, shapes, "expected a matrix")
    if op == "slice_rows" and not 0 <= attrs["start"] <= attrs["stop"] <= s[0]:
        _shape_fail(op, shapes, f"rows {attrs['start']}:{attrs['stop']} out of range")
    if op == "pad_rows" and attrs["stop"] - attrs["start"] != s[0]:
        _shape_fail(op, shapes, "pad window does not match row count")


def _r(tape: Tape, op: str, *inputs: Var, **attrs) -> Var:
    return tape.record(op, list(inputs), **attrs)


def _fw_pad(values, attrs):
    (x,) = values
    out = np.zeros((attrs["rows"],) + x.shape[1:])
    out[attrs["start"]:attrs["stop"]] = x
    return out


OPS: dict[str, OpRule] = {}


def _register(name, forward, vjp, svjp, check=None):
    OPS[name] = OpRule(forward, vjp, svjp, check)


_register(
    "add",
    lambda v, a: v[0] + v[1],
    lambda g, v, out, a: [sum_to(g, v[0].shape), sum_to(g, v[1].shape)],
    lambda t, g, x, out, a: [
        _r(t, "sum_to", g, shape=x[0].shape),
        _r(t, "sum_to", g, shape=x[1].shape),
    ],
    _check_broadcast,
)
_register(
    "sub",
    lambda v, a: v[0] - v[1],
    lambda g, v, out, a: [sum_to(g, v[0].shape), -sum_to(g, v[1].shape)],
    lambda t, g, x, out, a: [
        _r(t, "sum_to", g, shape=x[0].shape),
        _r(t, "scale", _r(t, "sum_to", g, shape=x[1].shape), c=-1.0),
    ],
    _check_broadcast,
)
_register(
    "mul",
    lambda v, a: v[0] * v[1],
    lambda g, v, out, a: [sum_to(g * v[1], v[0].shape), sum_to(g * v[0], v[1].shape)],
    lambda t, g, x, out, a: [
        _r(t, "sum_to", _r(t, "mul", g, x[1]), shape=x[0].shape),
        _r(t, "sum_to", _r(t, "mul", g, x[0]), shape=x[1].shape),
    ],
    _check_broadcast,
)
_register(
    "scale",
    lambda v, a: v[0] * a["c"],
    lambda g, v, out, a: [g * a["c"]],
    lambda t, g, x, out, a: [_r(t, "scale", g, c=a["c"])],
)
_register(
    "matmul",
    lambda v, a: matmul(v[0], v[1]),
    lambda g, v, out, a: [matmul(g, v[1].T), matmul(v[0].T, g)],
    lambda t, g, x, out, a: [
        _r(t, "matmul", g, _r(t, "transpose", x[1])),
        _r(t, "matmul", _r(t, "transpose", x[0]), g),
    ],
    _check_matmul,
)
# x @ W.T + b for a batch x (B, in), weight W (out, in), bias b (out,)
_register(
    "linear",
    lambda v, a: rowwise_matmul(v[0], v[1].T) + v[2],
    lambda g, v, out, a: [g @ v[1], g.T @ v[0], g.sum(axis=0)],
    lambda t, g, x, out, a: [
        _r(t, "matmul", g, x[1]),
        _r(t, "matmul", _r(t, "transpose", g), x[0]),
        _r(t, "sum_to", g, shape=x[2].shape),
    ],
    _check_linear,
)
_register(
    "transpose",
    lambda v, a: np.ascontiguousarray(v[0].T),
    lambda g, v, out, a: [g.T],
    lambda t, g, x, out, a: [_r(t, "transpose", g)],
    _check_2d,
)
_register(
    "relu",
    lambda v, a: np.maximum(v[0], 0.0),
    lambda g, v, out, a: [g * (v[0] > 0)],
    lambda t, g, x, out, a: [_r(t, "mul", g, _r(t, "step", x[0]))],
)
# derivative of relu; its own derivative is zero everywhere (including at 0)
_register(
    "step",
    lambda v, a: (v[0] > 0).astype(np.float64),
    lambda g, v, out, a: [None],
    lambda t, g, x, out, a: [None],
)
_register(
    "sigmoid",
    lambda v, a: stable_sigmoid(v[0]),
    lambda g, v, out, a: [g * out * stable_sigmoid(-v[0])],
    lambda t, g, x, out, a: [
        _r(t, "mul", g, _r(t, "mul", out, _r(t, "sigmoid", _r(t, "scale", x[0], c=-1.0))))
    ],
)
_register(
    "log_sigmoid",
    lambda v, a: log_sigmoid(v[0]),
    lambda g, v, out, a: [g * stable_sigmoid(-v[0])],
    lambda t, g, x, out, a: [
        _r(t, "mul", g, _r(t, "sigmoid", _r(t, "scale", x[0], c=-1.0)))
    ],
)
_register(
    "log",
    lambda v, a: np.log(v[0]),
    lambda g, v, out, a: [g / v[0]],
    lambda t, g, x, out, a: [_r(t, "mul", g, _r(t, "reciprocal", x[0]))],
)
_register(
    "reciprocal",
    lambda v, a: 1.0 / v[0],
    lambda g, v, out, a: [-g * out * out],
    lambda t, g, x, out, a: [
        _r(t, "scale", _r(t, "mul", g, _r(t, "square", out)), c=-1.0)
    ],
)
_register(
    "square",
    lambda v, a: v[0] * v[0],
    lambda g, v, out, a: [2.0 * g * v[0]],
    lambda t, g, x, out, a: [_r(t, "mul", g, _r(t, "scale", x[0], c=2.0))],
)
_register(
    "sum",
    lambda v, a: np.asarray(v[0].sum()),
    lambda g, v, out, a: [np.broadcast_to(g, v[0].shape)],
    lambda t, g, x, out, a: [_r(t, "broadcast_to", g, shape=x[0].shape)],
)
_register(
    "mean",
    lambda v, a: np.asarray(v[0].mean()),
    lambda g, v, out, a: [np.broadcast_to(g / v[0].size, v[0].shape)],
    lambda t, g, x, out, a: [
        _r(t, "broadcast_to", _r(t, "scale", g, c=1.0 / max(1, math.prod(x[0].shape))),
           shape=x[0].shape)
    ],
)
_register(
    "l2sq",
    lambda v, a: np.asarray(np.sum(v[0] * v[0])),
    lambda g, v, out, a: [2.0 * g * v[0]],
    lambda t, g, x, out, a: [
        _r(t, "mul", _r(t, "broadcast_to", g, shape=x[0].shape), _r(t, "scale", x[0], c=2.0))
    ],
)
_register(
    "sum_to",
    lambda v, a: sum_to(v[0], tuple(a["shape"])),
    lambda g, v, out, a: [np.broadcast_to(g, v[0].shape)],
    lambda t, g, x, out, a: [_r(t, "broadcast_to", g, shape=x[0].shape)],
    _check_to_shape,
)
_register(
    "broadcast_to",
    lambda v, a: np.ascontiguousarray(np.broadcast_to(v[0], tuple(a["shape"]))),
    lambda g, v, out, a: [sum_to(g, v[0].shape)],
    lambda t, g, x, out, a: [_r(t, "sum_to", g, shape=x[0].shape)],
    _check_to_shape,
)


def _vjp_concat(g, v, out, a):
    grads, start = [], 0
    for x in v:
        grads.append(g[start:start + x.shape[0]])
        start += x.shape[0]
    return grads


def _svjp_concat(t, g, x, out, a):
    grads, start = [], 0
    for xi in x:
        stop = start + xi.shape[0]
        grads.append(_r(t, "slice_rows", g, start=start, stop=stop))
        start = stop
    return grads


_register(
    "concat_rows",
    lambda v, a: np.concatenate(v, axis=0),
    _vjp_concat,
    _svjp_concat,
    _check_concat,
)
_register(
    "slice_rows",
    lambda v, a: v[0][a["start"]:a["stop"]].copy(),
    lambda g, v, out, a: [_fw_pad([g], {"rows": v[0].shape[0], **a})],
    lambda t, g, x, out, a: [
        _r(t, "pad_rows", g, rows=x[0].shape[0], start=a["start"], stop=a["stop"])
    ],
    _check_slice,
)
_register(
    "pad_rows",
    _fw_pad,
    lambda g, v, out, a: [g[a["start"]:a["stop"]]],
    lambda t, g, x, out, a: [_r(t, "slice_rows", g, start=a["start"], stop=a["stop"])],
    _check_slice,
)


# ---------------------------------------------------------------------------
# convenience wrappers
# ---------------------------------------------------------------------------


def linear(x: Var, w: Var, b: Var) -> Var:
    return x.tape.record("linear", [x, w, b])


def relu(x: Var) -> Var:
    return x.tape.record("relu", [x])


def sigmoid(x: Var) -> Var:
    return x.tape.record("sigmoid", [x])


def logsigmoid(x: Var) -> Var:
    return x.tape.record("log_sigmoid", [x])


def log(x: Var) -> Var:
    return x.tape.record("log", [x])


def square(x: Var) -> Var:
    return x.tape.record("square", [x])


def l2sq(x: Var) -> Var:
    return x.tape.record("l2sq", [x])


def concat_rows(parts: Sequence[Var]) -> Var:
    return parts[0].tape.record("concat_rows", list(parts))


def slice_rows(x: Var, start: int, stop: int) -> Var:
    return x.tape.record("slice_rows", [x], start=start, stop=stop)


# ---------------------------------------------------------------------------
# reverse sweeps
# ---------------------------------------------------------------------------


def _dependents(nodes: list[Node], sources: set, stop: int) -> set:
    """Ids in ``[min(sources), stop]`` that have a source among their ancestors."""
    dep = set(sources)
    for i in range(min(sources), stop + 1):
        if i not in dep and any(p in dep for p in nodes[i].parents):
            dep.add(i)
    return dep


def backward(tape: Tape, output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of scalar ``output`` with respect to each of ``wrt``."""
    if output.shape != ():
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    if not wrt:
        return []
    nodes = tape.nodes
    wanted = {w.id for w in wrt}
    live = _dependents(nodes, wanted, output.id)
    grads: dict[int, np.ndarray] = {}
    if output.id in live:
        grads[output.id] = np.ones(())
    for i in range(output.id, min(wanted) - 1, -1):
        g = grads.get(i) if i in wanted else grads.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        if node.op == "leaf":
            continue
        parent_vals = [nodes[p].value for p in node.parents]
        pg = OPS[node.op].vjp(g, parent_vals, node.value, node.attrs)
        for p, gp in zip(node.parents, pg):
            if gp is None or p not in live:
                continue
            grads[p] = gp if p not in grads else grads[p] + gp
    out = []
    for w in wrt:
        g = grads.get(w.id)
        out.append(np.zeros(w.shape) if g is None else np.array(g, dtype=np.float64))
    return out


def input_gradient_graph(tape: Tape, output: Var, input: Var) -> Var:
    """Record d(output)/d(input) on the tape and return it as a Var.

    The returned Var is built from ordinary tape ops, so it can itself be
    passed through :func:`backward`.
    """
    if output.shape != ():
        raise ShapeError(
            f"input_gradient_graph: output must be scalar, got shape {output.shape}"
        )
    nodes = tape.nodes
    if nodes[input.id].op != "leaf":
        raise ValueError("input_gradient_graph: input must be a leaf variable")
    live = _dependents(nodes, {input.id}, output.id)
    if output.id not in live:
        return tape.const(np.zeros(input.shape))
    grads: dict[int, Var] = {output.id: tape.const(np.ones(()))}
    for i in range(output.id, input.id, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        rule = OPS[node.op]
        if rule.svjp is None:
            raise SecondOrderError(f"no second-order rule registered for op {node.op!r}")
        parents = [Var(tape, p) for p in node.parents]
        pg = rule.svjp(tape, g, parents, Var(tape, i), node.attrs)
        for p, gp in zip(node.parents, pg):
            if gp is None or p not in live:
                continue
            grads[p] = gp if p not in grads else tape.record("add", [grads[p], gp])
    g = grads.get(input.id)
    if g is None:
        return tape.const(np.zeros(input.shape))
    return g
