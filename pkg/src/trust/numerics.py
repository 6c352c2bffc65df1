"""Dense float64 matrices with reverse-mode differentiation.

Every loss in the trainer is assembled from the ops below on a
`DiffGraph` tape; `backward` computes exact gradients in reverse
topological order and `grad_check` validates any loss against central
finite differences. Matrices are plain 2-D float64 numpy arrays; each op
validates that its result is finite and raises otherwise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

Array = np.ndarray


def as_matrix(data, name: str = "matrix") -> Array:
    """Coerce to a finite, C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    _check_finite(m, name)
    return m


def _check_finite(m: Array, name: str) -> None:
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")


class Node:
    """One recorded operation: its kind, parent node ids and value."""

    __slots__ = ("graph", "id", "op", "parents", "value")

    def __init__(self, graph: "DiffGraph", node_id: int, op: str,
                 parents: tuple[int, ...], value: Array):
        self.graph = graph
        self.id = node_id
        self.op = op
        self.parents = parents
        self.value = value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def grad(self) -> Array:
        if self.graph.gradients is None:
            raise RuntimeError("backward has not been run on this graph")
        return self.graph.gradients[self.id]

    def __repr__(self) -> str:  # pragma: no cover
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"


class DiffGraph:
    """Append-only tape of ops; parents always precede children."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        # vjps[i](grad_out) -> per-parent gradient contributions
        self._vjps: list[Callable[[Array], tuple[Array, ...]]] = []
        self.gradients: list[Array] | None = None

    def _record(self, op: str, parents: tuple[Node, ...], value: Array,
                vjp: Callable[[Array], tuple[Array, ...]]) -> Node:
        # overflow/underflow surfaces as NonFiniteError, not a warning
        _check_finite(value, f"result of {op}")
        for p in parents:
            if p.graph is not self:
                raise ShapeError(f"{op}: input node belongs to a different graph")
        node = Node(self, len(self.nodes), op, tuple(p.id for p in parents), value)
        self.nodes.append(node)
        self._vjps.append(vjp)
        self.gradients = None
        return node

    # -- source nodes ----------------------------------------------------

    def leaf(self, value, name: str = "leaf") -> Node:
        """A differentiable input (model parameter or checked feature)."""
        return self._record("leaf", (), as_matrix(value, name), lambda g: ())

    def const(self, value, name: str = "const") -> Node:
        """A non-learned input; gradients still accumulate but are unused."""
        return self._record("const", (), as_matrix(value, name), lambda g: ())

    # -- arithmetic -------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        """Elementwise a + b; b may be 1 x cols for a row-broadcast bias."""
        if a.shape == b.shape:
            vjp = lambda g: (g, g)
        elif b.shape == (1, a.shape[1]):
            vjp = lambda g: (g, g.sum(axis=0, keepdims=True))
        else:
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
        with np.errstate(over="ignore"):
            value = a.value + b.value
        return self._record("add", (a, b), value, vjp)

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
        return self._record("sub", (a, b), a.value - b.value, lambda g: (g, -g))

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise product, same shapes only."""
        if a.shape != b.shape:
            raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        return self._record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        with np.errstate(over="ignore"):
            value = av @ bv
        return self._record("matmul", (a, b), value,
                            lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a: Node) -> Node:
        return self._record("transpose", (a,), np.ascontiguousarray(a.value.T),
                            lambda g: (np.ascontiguousarray(g.T),))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        if not np.isfinite(c):
            raise NonFiniteError("scale factor must be finite")
        return self._record("scale", (a,), c * a.value, lambda g: (c * g,))

    # -- elementwise nonlinearities ----------------------------------------

    def exp(self, a: Node) -> Node:
        with np.errstate(over="ignore"):
            out = np.exp(a.value)
        return self._record("exp", (a,), out, lambda g: (g * out,))

    def log(self, a: Node) -> Node:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a.value)
        av = a.value
        return self._record("log", (a,), out, lambda g: (g / av,))

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)
        return self._record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))

    # -- row-wise ops ------------------------------------------------------

    def row_softmax(self, a: Node) -> Node:
        # max-shift: inputs up to +-hundreds (scaled similarities) stay stable
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def vjp(g: Array) -> tuple[Array, ...]:
            inner = (g * out).sum(axis=1, keepdims=True)
            return ((g - inner) * out,)

        return self._record("row_softmax", (a,), out, vjp)

    def row_log_softmax(self, a: Node) -> Node:
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        out = shifted - lse
        soft = np.exp(out)

        def vjp(g: Array) -> tuple[Array, ...]:
            return (g - soft * g.sum(axis=1, keepdims=True),)

        return self._record("row_log_softmax", (a,), out, vjp)

    def l2_normalize_rows(self, a: Node) -> Node:
        # scaled norm: dividing by the row max first keeps tiny rows from
        # underflowing in the squares, so outputs stay unit to ~1 ulp
        absmax = np.abs(a.value).max(axis=1, keepdims=True)
        if np.any(absmax == 0.0):
            raise ShapeError("l2_normalize_rows: zero-norm row")
        scaled = a.value / absmax
        norms = absmax * np.sqrt((scaled * scaled).sum(axis=1, keepdims=True))
        out = a.value / norms

        def vjp(g: Array) -> tuple[Array, ...]:
            inner = (g * out).sum(axis=1, keepdims=True)
            return ((g - out * inner) / norms,)

        return self._record("l2_normalize_rows", (a,), out, vjp)

    def row_sum(self, a: Node) -> Node:
        """(n, m) -> (n, 1)."""
        n, m = a.shape
        return self._record("row_sum", (a,), a.value.sum(axis=1, keepdims=True),
                            lambda g: (np.broadcast_to(g, (n, m)).copy(),))

    def sum_all(self, a: Node) -> Node:
        """Total sum as a 1 x 1 matrix."""
        out = np.array([[a.value.sum()]])
        shape = a.shape
        return self._record("sum_all", (a,), out,
                            lambda g: (np.full(shape, g[0, 0]),))

    # -- structural ops ----------------------------------------------------

    def gather_rows(self, a: Node, indices) -> Node:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError("gather_rows: indices must be 1-D")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ShapeError("gather_rows: index out of range")
        shape = a.shape

        def vjp(g: Array) -> tuple[Array, ...]:
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return self._record("gather_rows", (a,), a.value[idx].copy(), vjp)

    def stop_gradient(self, a: Node) -> Node:
        """Value passes through; gradient is zero."""
        shape = a.shape
        return self._record("stop_gradient", (a,), a.value.copy(),
                            lambda g: (np.zeros(shape),))


def backward(graph: DiffGraph, output: Node) -> list[Array]:
    """Populate graph.gradients from a scalar output node.

    Nodes are visited in reverse insertion order, which is a reverse
    topological order because parents always precede children on the tape.
    """
    if output.graph is not graph:
        raise ShapeError("backward: output node belongs to a different graph")
    if output.shape != (1, 1):
        raise ShapeError(f"backward: output must be 1x1, got {output.shape}")

    grads: list[Array | None] = [None] * len(graph.nodes)
    grads[output.id] = np.ones((1, 1))
    for node in reversed(graph.nodes[: output.id + 1]):
        g = grads[node.id]
        if g is None:
            continue
        for parent_id, contribution in zip(node.parents, graph._vjps[node.id](g)):
            if grads[parent_id] is None:
                grads[parent_id] = contribution.copy()
            else:
                grads[parent_id] += contribution
    full = [g if g is not None else np.zeros(n.shape)
            for g, n in zip(grads, graph.nodes)]
    graph.gradients = full
    return full


# Signature of a loss builder: given a fresh graph, leaf nodes for the
# parameters and a seed that freezes any internal randomness, return the
# scalar loss node.
LossBuilder = Callable[[DiffGraph, list[Node], int], Node]


def grad_check(build_loss: LossBuilder, params: Sequence[Array],
               h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss` must be a pure function of (params, seed): the same seed is
    passed to every evaluation so the finite differences probe exactly the
    function the tape differentiates. Relative error per coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    arrays = [as_matrix(p, f"params[{i}]") for i, p in enumerate(params)]

    def value_at(perturbed: list[Array]) -> float:
        g = DiffGraph()
        nodes = [g.leaf(a, f"params[{i}]") for i, a in enumerate(perturbed)]
        out = build_loss(g, nodes, seed)
        if out.shape != (1, 1):
            raise ShapeError("grad_check: loss must be scalar (1x1)")
        return float(out.value[0, 0])

    graph = DiffGraph()
    leaves = [graph.leaf(a, f"params[{i}]") for i, a in enumerate(arrays)]
    out = build_loss(graph, leaves, seed)
    if out.shape != (1, 1):
        raise ShapeError("grad_check: loss must be scalar (1x1)")
    grads = backward(graph, out)

    worst = 0.0
    work = [a.copy() for a in arrays]
    for k, a in enumerate(arrays):
        analytic = grads[leaves[k].id]
        for idx in np.ndindex(*a.shape):
            orig = work[k][idx]
            work[k][idx] = orig + h
            f_plus = value_at(work)
            work[k][idx] = orig - h
            f_minus = value_at(work)
            work[k][idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[idx] - numeric) / max(
                1.0, abs(analytic[idx]), abs(numeric))
            worst = max(worst, err)
    return worst
