"""Dense float64 tensors with reverse-mode differentiation.

Every trainable computation in the package is expressed through the
primitives in this module, so one finite-difference harness can audit
all gradients in one place. Values are numpy float64 arrays, row-major,
made read-only on node creation; any op that produces a NaN/Inf raises
immediately rather than letting the poison spread.

Broadcasting is deliberately restricted to adding a bias vector to the
rows of a matrix; everything else requires explicit ``reshape``.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, NumericError

Array = np.ndarray


def _contiguous(arr: Array) -> Array:
    # np.ascontiguousarray would promote 0-d scalars to shape (1,)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def tensor(values) -> Array:
    """Validated tensor value: float64, C-contiguous, finite, read-only."""
    arr = _contiguous(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor values must be finite")
    if arr.flags["WRITEABLE"]:
        arr = arr.copy()  # never lock or alias caller-owned memory
    arr.setflags(write=False)
    return arr


def _result(values: Array, op: str) -> Array:
    # op outputs are fresh arrays (or views of already-locked values),
    # so locking in place is safe and avoids copies
    arr = _contiguous(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"op {op!r} produced non-finite values")
    arr.setflags(write=False)
    return arr


class Node:
    """One computation-graph node: op kind, inputs, value, gradient slot."""

    __slots__ = ("op", "parents", "value", "grad", "_vjp")

    def __init__(
        self,
        op: str,
        parents: Sequence["Node"],
        value: Array,
        vjp: Callable[[Array], tuple] | None = None,
    ):
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        self.grad: Array | None = None
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Parameter(Node):
    """Leaf node whose value and gradient slot persist across graphs."""

    __slots__ = ("name",)

    def __init__(self, name: str, values):
        super().__init__("param", (), tensor(values))
        self.name = name
        self.grad = np.zeros(self.value.shape)

    def assign(self, values) -> None:
        arr = tensor(values)
        if arr.shape != self.value.shape:
            raise DimensionError(
                f"parameter {self.name!r}: cannot assign shape {arr.shape} "
                f"over {self.value.shape}"
            )
        self.value = arr


class ParameterStore:
    """Ordered registry of trainable tensors with gradient slots.

    Insertion order is the canonical parameter order used by the
    optimizer and the checkpoint layout, so it must be deterministic
    given a model configuration.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values) -> Parameter:
        if name in self._params:
            raise DimensionError(f"duplicate parameter name {name!r}")
        p = Parameter(name, values)
        self._params[name] = p
        return p

    def get(self, name: str) -> Parameter:
        try:
            return self._params[name]
        except KeyError:
            raise DimensionError(f"unknown parameter {name!r}") from None

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros(p.value.shape)

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params


def constant(values) -> Node:
    """Leaf node that never receives a gradient."""
    return Node("const", (), tensor(values))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        raise DimensionError(f"glorot init supports 1-D/2-D shapes, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``grad`` for every node reachable from a scalar loss.

    Gradients of reachable nodes are reset first, so calling this twice
    on the same graph yields identical results. Parameters outside the
    graph are untouched; callers accumulate batches by summing losses
    into a single graph before one backward pass.
    """
    if loss.value.shape != ():
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros(node.value.shape)
    loss.grad = np.ones(())
    for node in reversed(order):
        if node._vjp is None or not node.parents:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is not None:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise DimensionError("matmul supports 1-D and 2-D operands only")
    if av.shape[-1] != (bv.shape[0] if bv.ndim >= 1 else None):
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    value = _result(av @ bv, "matmul")

    def vjp(g: Array) -> tuple:
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av

    return Node("matmul", (a, b), value, vjp)


def add(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    bias_rows = av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]
    if av.shape != bv.shape and not bias_rows:
        raise DimensionError(f"add shape mismatch: {av.shape} + {bv.shape}")
    value = _result(av + bv, "add")

    def vjp(g: Array) -> tuple:
        return g, g.sum(axis=0) if bias_rows else g

    return Node("add", (a, b), value, vjp)


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub shape mismatch: {a.value.shape} - {b.value.shape}")
    return Node("sub", (a, b), _result(a.value - b.value, "sub"), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product of same-shape tensors."""
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise DimensionError(f"mul shape mismatch: {av.shape} * {bv.shape}")
    return Node("mul", (a, b), _result(av * bv, "mul"), lambda g: (g * bv, g * av))


def smul(s: Node, x: Node) -> Node:
    """Trainable scalar times tensor."""
    if s.value.shape != ():
        raise DimensionError(f"smul scalar operand has shape {s.value.shape}")
    sv, xv = s.value, x.value
    value = _result(sv * xv, "smul")
    return Node("smul", (s, x), value, lambda g: (np.asarray((g * xv).sum()), sv * g))


def scale(x: Node, c: float) -> Node:
    """Constant scalar times tensor."""
    return Node("scale", (x,), _result(c * x.value, "scale"), lambda g: (c * g,))


def concat(a: Node, b: Node, axis: int = 0) -> Node:
    av, bv = a.value, b.value
    if av.ndim != bv.ndim or av.ndim not in (1, 2):
        raise DimensionError(f"concat needs matching 1-D/2-D ranks: {av.shape}, {bv.shape}")
    value = _result(np.concatenate([av, bv], axis=axis), "concat")
    split = av.shape[axis]

    def vjp(g: Array) -> tuple:
        take = [slice(None)] * g.ndim
        keep = [slice(None)] * g.ndim
        take[axis] = slice(0, split)
        keep[axis] = slice(split, None)
        return g[tuple(take)], g[tuple(keep)]

    return Node("concat", (a, b), value, vjp)


def relu(x: Node) -> Node:
    xv = x.value
    return Node("relu", (x,), _result(np.maximum(xv, 0.0), "relu"), lambda g: (g * (xv > 0),))


def leaky_relu(x: Node, slope: float = 0.01) -> Node:
    xv = x.value
    value = _result(np.where(xv > 0, xv, slope * xv), "leaky_relu")
    return Node("leaky_relu", (x,), value, lambda g: (g * np.where(xv > 0, 1.0, slope),))


def sigmoid(x: Node) -> Node:
    xv = x.value
    s = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))),
                 np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
    value = _result(s, "sigmoid")
    return Node("sigmoid", (x,), value, lambda g: (g * s * (1.0 - s),))


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)
    return Node("tanh", (x,), _result(t, "tanh"), lambda g: (g * (1.0 - t * t),))


def softmax(x: Node) -> Node:
    """Softmax along the last axis; rows of the result sum to one."""
    xv = x.value
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    value = _result(s, "softmax")

    def vjp(g: Array) -> tuple:
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Node("softmax", (x,), value, vjp)


def softplus(x: Node) -> Node:
    """log(1 + exp(x)), evaluated in the overflow-safe form."""
    xv = x.value
    value = _result(np.log1p(np.exp(-np.abs(xv))) + np.maximum(xv, 0.0), "softplus")

    def vjp(g: Array) -> tuple:
        s = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))),
                     np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
        return (g * s,)

    return Node("softplus", (x,), value, vjp)


def logsumexp(x: Node) -> Node:
    """Stable log-sum-exp of a 1-D tensor, as a scalar."""
    xv = x.value
    if xv.ndim != 1:
        raise DimensionError(f"logsumexp expects a 1-D tensor, got {xv.shape}")
    m = xv.max()
    value = _result(np.asarray(m + np.log(np.exp(xv - m).sum())), "logsumexp")

    def vjp(g: Array) -> tuple:
        e = np.exp(xv - m)
        return (g * e / e.sum(),)

    return Node("logsumexp", (x,), value, vjp)


def pick(x: Node, index: int) -> Node:
    """Scalar selection of one flat entry."""
    flat = x.value.reshape(-1)
    if not 0 <= index < flat.shape[0]:
        raise DimensionError(f"pick index {index} out of range for shape {x.value.shape}")
    value = _result(np.asarray(flat[index]), "pick")

    def vjp(g: Array) -> tuple:
        out = np.zeros(flat.shape[0])
        out[index] = g
        return (out.reshape(x.value.shape),)

    return Node("pick", (x,), value, vjp)


def slice1d(x: Node, start: int, stop: int) -> Node:
    if x.value.ndim != 1:
        raise DimensionError(f"slice1d expects a 1-D tensor, got {x.value.shape}")
    value = _result(x.value[start:stop], "slice1d")

    def vjp(g: Array) -> tuple:
        out = np.zeros(x.value.shape)
        out[start:stop] = g
        return (out,)

    return Node("slice1d", (x,), value, vjp)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    if int(np.prod(shape)) != x.value.size:
        raise DimensionError(f"reshape {x.value.shape} -> {shape} changes size")
    value = _result(x.value.reshape(shape), "reshape")
    return Node("reshape", (x,), value, lambda g: (g.reshape(x.value.shape),))


def mean_rows(x: Node) -> Node:
    """Mean over the rows of a matrix: |V| x d -> d."""
    xv = x.value
    if xv.ndim != 2 or xv.shape[0] == 0:
        raise DimensionError(f"mean_rows expects a nonempty 2-D tensor, got {xv.shape}")
    n = xv.shape[0]
    value = _result(xv.mean(axis=0), "mean_rows")
    return Node("mean_rows", (x,), value, lambda g: (np.tile(g / n, (n, 1)),))


def tsum(x: Node) -> Node:
    """Full reduction to a scalar."""
    value = _result(np.asarray(x.value.sum()), "sum")
    return Node("sum", (x,), value, lambda g: (g * np.ones(x.value.shape),))


def sq_l2_norm(x: Node) -> Node:
    """Squared Euclidean norm, sum of squared entries."""
    xv = x.value
    value = _result(np.asarray((xv * xv).sum()), "sq_l2_norm")
    return Node("sq_l2_norm", (x,), value, lambda g: (2.0 * xv * g,))
