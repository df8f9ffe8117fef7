"""Reverse-mode automatic differentiation over float64 tensors.

Graphs are built define-by-run: every primitive appends a node whose id is larger
than the ids of its parents, so node order is a topological order. A node's value
is computed eagerly when all parent values are known; graphs with unbound input
leaves are evaluated later by ``forward_eval``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import ArityError, MissingInputError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

ComputeFn = Callable[[Sequence[Tensor]], Tensor]
# vjp(upstream gradient, parent values, node value) -> one gradient (or None) per parent
VjpFn = Callable[[Tensor, Sequence[Tensor], Tensor], Sequence[Optional[Tensor]]]

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")


@dataclass(eq=False)
class Node:
    """One recorded value of a computation."""

    id: int
    op: str
    parents: tuple
    graph: "Graph" = field(repr=False)
    value: Optional[Tensor] = None
    name: Optional[str] = None
    compute: Optional[ComputeFn] = field(default=None, repr=False)
    vjp: Optional[VjpFn] = field(default=None, repr=False)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.op in ("input", "parameter")

    @property
    def shape(self) -> tuple:
        if self.value is None:
            raise MissingInputError(f"Node {self.id} ({self.op}) has no value yet")
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(self.graph, other))

    def __radd__(self, other):
        return add(_lift(self.graph, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.graph, other))

    def __rsub__(self, other):
        return sub(_lift(self.graph, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(self.graph, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _lift(self.graph, other))

    def __neg__(self):
        return scale(self, -1.0)


class Graph:
    """Ordered node list plus the name index of its leaves."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._leaves: Dict[str, int] = {}

    def _append(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def input(self, name: str, value: Optional[Tensor] = None) -> Node:
        """Create an input leaf; the value may be bound later."""
        if name in self._leaves:
            raise ValueError(f"Leaf '{name}' already exists")
        array = None if value is None else np.asarray(value, dtype=np.float64)
        node = Node(id=len(self.nodes), op="input", parents=(), graph=self, value=array, name=name)
        self._leaves[name] = node.id
        return self._append(node)

    def parameter(self, name: str, value: Tensor) -> Node:
        """Return the parameter leaf called ``name``, creating it on first use."""
        if name in self._leaves:
            return self.nodes[self._leaves[name]]
        node = Node(
            id=len(self.nodes),
            op="parameter",
            parents=(),
            graph=self,
            value=np.asarray(value, dtype=np.float64),
            name=name,
        )
        self._leaves[name] = node.id
        return self._append(node)

    def constant(self, value) -> Node:
        """Non-differentiable value (data batches, masks)."""
        array = np.asarray(value, dtype=np.float64)
        return self._append(Node(id=len(self.nodes), op="const", parents=(), graph=self, value=array))

    def bind(self, name: str, value: Tensor) -> None:
        """Bind a value to a leaf and invalidate every derived value."""
        if name not in self._leaves:
            raise MissingInputError(f"No leaf named '{name}'")
        self.nodes[self._leaves[name]].value = np.asarray(value, dtype=np.float64)
        for node in self.nodes:
            if node.compute is not None:
                node.value = None

    def apply(
        self,
        op: str,
        parents: Sequence[Node],
        compute: ComputeFn,
        vjp: VjpFn,
    ) -> Node:
        """
        Record a primitive. This is also the hook for custom-gradient nodes.

        Args:
            op: Operation tag
            parents: Parent nodes (must belong to this graph)
            compute: Forward function of the parent values
            vjp: Vector-Jacobian product returning one gradient per parent

        Returns:
            The new node, with its value computed when all parents have values
        """
        for parent in parents:
            if parent.graph is not self:
                raise ValueError(f"Node {parent.id} belongs to a different graph")
        node = Node(
            id=len(self.nodes),
            op=op,
            parents=tuple(p.id for p in parents),
            graph=self,
            compute=compute,
            vjp=vjp,
        )
        if all(p.value is not None for p in parents):
            node.value = compute([p.value for p in parents])
        return self._append(node)

    @property
    def leaf_ids(self) -> List[int]:
        return sorted(self._leaves.values())

    def leaf(self, name: str) -> Node:
        return self.nodes[self._leaves[name]]

    def named_gradients(
        self, gradients: Dict[int, Tensor], parameters_only: bool = True
    ) -> Dict[str, Tensor]:
        """Re-key a ``backward`` result by leaf name."""
        named = {}
        for name, node_id in self._leaves.items():
            if parameters_only and self.nodes[node_id].op != "parameter":
                continue
            if node_id in gradients:
                named[name] = gradients[node_id]
        return named


def _lift(graph: Graph, value) -> Node:
    return value if isinstance(value, Node) else graph.constant(value)


def _node_id(node: Union[Node, int]) -> int:
    return node.id if isinstance(node, Node) else int(node)


def _ancestors(graph: Graph, output: int) -> List[int]:
    seen = set()
    stack = [output]
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        stack.extend(graph.nodes[current].parents)
    return sorted(seen)


def forward_eval(graph: Graph, output: Union[Node, int]) -> Tensor:
    """
    Evaluate a node, computing and caching every missing intermediate value.

    Raises:
        MissingInputError: If an ancestor leaf has no bound value
    """
    output_id = _node_id(output)
    for node_id in _ancestors(graph, output_id):
        node = graph.nodes[node_id]
        if node.value is not None:
            continue
        if node.compute is None:
            raise MissingInputError(f"Leaf '{node.name}' (node {node.id}) has no bound value")
        node.value = node.compute([graph.nodes[p].value for p in node.parents])
    return graph.nodes[output_id].value


def backward(graph: Graph, loss: Union[Node, int]) -> Dict[int, Tensor]:
    """
    Gradients of a scalar loss with respect to every leaf.

    Gradients are accumulated in a local table, so repeated calls on the same graph
    return identical results.

    Returns:
        Map leaf id -> gradient (zeros for leaves the loss does not depend on)

    Raises:
        ShapeError: If the loss is not scalar-valued
    """
    loss_id = _node_id(loss)
    value = forward_eval(graph, loss_id)
    if value.size != 1:
        raise ShapeError(f"Loss must be scalar, got shape {tuple(value.shape)}")

    grads: Dict[int, Tensor] = {loss_id: np.ones_like(value)}
    for node in reversed(graph.nodes[: loss_id + 1]):
        upstream = grads.get(node.id)
        if upstream is None or node.vjp is None:
            continue
        parent_values = [graph.nodes[p].value for p in node.parents]
        parent_grads = node.vjp(upstream, parent_values, node.value)
        for parent_id, grad in zip(node.parents, parent_grads):
            if grad is None:
                continue
            if parent_id in grads:
                grads[parent_id] = grads[parent_id] + grad
            else:
                grads[parent_id] = grad

    result = {}
    for leaf_id in graph.leaf_ids:
        leaf = graph.nodes[leaf_id]
        if leaf_id in grads:
            result[leaf_id] = grads[leaf_id]
        elif leaf.value is not None:
            result[leaf_id] = np.zeros_like(leaf.value)
    return result


# ============================================================================
# Primitives
# ============================================================================


def _unbroadcast(grad: Tensor, shape: tuple) -> Tensor:
    """Sum a broadcast gradient back to the operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Node, b: Node) -> Node:
    if a.value is not None and b.value is not None:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(
                f"Cannot multiply shapes {tuple(a.value.shape)} and {tuple(b.value.shape)}"
            )
    return a.graph.apply(
        "matmul",
        [a, b],
        lambda v: v[0] @ v[1],
        lambda g, v, out: (g @ v[1].T, v[0].T @ g),
    )


def add(a: Node, b: Node) -> Node:
    return a.graph.apply(
        "add",
        [a, b],
        lambda v: v[0] + v[1],
        lambda g, v, out: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)),
    )


def sub(a: Node, b: Node) -> Node:
    return a.graph.apply(
        "sub",
        [a, b],
        lambda v: v[0] - v[1],
        lambda g, v, out: (_unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)),
    )


def mul(a: Node, b: Node) -> Node:
    return a.graph.apply(
        "mul",
        [a, b],
        lambda v: v[0] * v[1],
        lambda g, v, out: (_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)),
    )


def scale(a: Node, factor: float) -> Node:
    return a.graph.apply("scale", [a], lambda v: v[0] * factor, lambda g, v, out: (g * factor,))


def tanh(a: Node) -> Node:
    return a.graph.apply("tanh", [a], lambda v: np.tanh(v[0]), lambda g, v, out: (g * (1.0 - out * out),))


def relu(a: Node) -> Node:
    return a.graph.apply(
        "relu",
        [a],
        lambda v: np.maximum(v[0], 0.0),
        lambda g, v, out: (g * (v[0] > 0.0),),
    )


def sigmoid(a: Node) -> Node:
    def compute(v):
        return 0.5 * (1.0 + np.tanh(0.5 * v[0]))

    return a.graph.apply("sigmoid", [a], compute, lambda g, v, out: (g * out * (1.0 - out),))


def absolute(a: Node) -> Node:
    return a.graph.apply("abs", [a], lambda v: np.abs(v[0]), lambda g, v, out: (g * np.sign(v[0]),))


def activate(a: Node, kind: str) -> Node:
    """Apply an activation by name; ``linear`` returns the node unchanged."""
    if kind == "linear":
        return a
    if kind == "tanh":
        return tanh(a)
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"Unknown activation '{kind}', expected one of {ACTIVATIONS}")


def transpose(a: Node) -> Node:
    return a.graph.apply("transpose", [a], lambda v: v[0].T, lambda g, v, out: (g.T,))


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    if not nodes:
        raise ArityError("concat needs at least one node")
    graph = nodes[0].graph

    def vjp(g, v, out):
        bounds = np.cumsum([x.shape[axis] for x in v])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return graph.apply("concat", list(nodes), lambda v: np.concatenate(v, axis=axis), vjp)


def reduce_sum(a: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    def vjp(g, v, out):
        if axis is None:
            return (np.broadcast_to(g, v[0].shape).copy(),)
        grad = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(grad, v[0].shape).copy(),)

    return a.graph.apply(
        "sum", [a], lambda v: np.asarray(np.sum(v[0], axis=axis, keepdims=keepdims)), vjp
    )


def reduce_mean(a: Node) -> Node:
    def vjp(g, v, out):
        return (np.full(v[0].shape, float(g) / v[0].size),)

    return a.graph.apply("mean", [a], lambda v: np.asarray(np.mean(v[0])), vjp)


def sum_of_squares(a: Node) -> Node:
    return a.graph.apply(
        "sum_of_squares",
        [a],
        lambda v: np.asarray(np.sum(v[0] * v[0])),
        lambda g, v, out: (2.0 * g * v[0],),
    )


def max_views(nodes: Sequence[Node]) -> Node:
    """Elementwise maximum across equally shaped nodes; ties go to the lowest index."""
    if not nodes:
        raise ArityError("max_views needs at least one node")
    graph = nodes[0].graph

    def compute(v):
        return np.max(np.stack(v), axis=0)

    def vjp(g, v, out):
        winner = np.argmax(np.stack(v), axis=0)  # first maximum
        return tuple(g * (winner == k) for k in range(len(v)))

    return graph.apply("max_views", list(nodes), compute, vjp)


def normalize_rows(a: Node, eps: float = 1e-12) -> Node:
    """Scale each row to unit L2 norm."""

    def compute(v):
        norms = np.sqrt(np.sum(v[0] * v[0], axis=1, keepdims=True)) + eps
        return v[0] / norms

    def vjp(g, v, out):
        norms = np.sqrt(np.sum(v[0] * v[0], axis=1, keepdims=True)) + eps
        radial = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * radial) / norms,)

    return a.graph.apply("normalize_rows", [a], compute, vjp)


def low_rank_outer(embeddings: Sequence[Node], factors: Sequence[Node], bias: Node) -> Node:
    """
    Outer-product contraction with a rank-R factorized weight tensor.

    out[n, k] = sum_r prod_v <factors[v][r, k, :], embeddings[v][n, :]> + bias[k]

    Args:
        embeddings: V nodes of shape (N, d_v)
        factors: V nodes of shape (R, D_out, d_v)
        bias: Node of shape (D_out,)
    """
    if len(embeddings) != len(factors):
        raise ArityError(f"{len(embeddings)} embeddings but {len(factors)} factor tensors")
    n_views = len(embeddings)
    graph = bias.graph

    def projections(v):
        return [np.einsum("ni,rki->nrk", v[i], v[n_views + i]) for i in range(n_views)]

    def others(proj, skip):
        product = np.ones_like(proj[0])
        for i, p in enumerate(proj):
            if i != skip:
                product = product * p
        return product

    def compute(v):
        proj = projections(v)
        return others(proj, -1).sum(axis=1) + v[-1]

    def vjp(g, v, out):
        proj = projections(v)
        upstream = g[:, None, :]
        grad_h, grad_w = [], []
        for i in range(n_views):
            d_proj = upstream * others(proj, i)
            grad_h.append(np.einsum("nrk,rki->ni", d_proj, v[n_views + i]))
            grad_w.append(np.einsum("nrk,ni->rki", d_proj, v[i]))
        return tuple(grad_h + grad_w + [g.sum(axis=0)])

    return graph.apply("low_rank_outer", list(embeddings) + list(factors) + [bias], compute, vjp)
