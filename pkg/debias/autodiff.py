"""
Reverse-mode automatic differentiation
Define-by-run computation graphs over dense float64 numpy tensors
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from debias.errors import ConfigError, LabelError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

# Tensor values are plain read-only float64 arrays
Tensor = np.ndarray

_param_counter = itertools.count()


def tensor(values, shape=None) -> Tensor:
    """
    Build an immutable float64 tensor

    Args:
        values: nested sequence, scalar or array
        shape: optional shape to reshape the row-major values into

    Returns:
        read-only float64 array
    """
    array = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape) or int(np.prod(shape)) != array.size:
            raise ShapeError("tensor", array.shape, shape)
        array = array.reshape(shape)
    if any(s <= 0 for s in array.shape):
        raise ShapeError("tensor", array.shape)
    _check_finite("tensor", array)
    array.flags.writeable = False
    return array


def _check_finite(op, array):
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _freeze(array):
    array = np.asarray(array, dtype=np.float64)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ReversalCoefficient:
    """Backward-pass scale of a gradient reversal node"""

    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0:
            raise ConfigError(f"reversal scale must be a finite non-negative number, got {self.scale}")


class Node:
    """A vertex of the computation graph"""

    __slots__ = ("op", "parents", "value", "grad", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="constant", backward=None, requires_grad=None):
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self._backward = backward if requires_grad else None
        self.grad = np.zeros(value.shape) if requires_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros(self.value.shape)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"


class Parameter(Node):
    """A trainable leaf of the graph"""

    __slots__ = ("name",)

    def __init__(self, value, name=None):
        super().__init__(tensor(value), op="parameter", requires_grad=True)
        self.name = name or f"param{next(_param_counter)}"

    def assign(self, values):
        """Replace the value with a new immutable tensor of the same shape"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.value.shape:
            raise ShapeError("assign", self.value.shape, values.shape)
        _check_finite(f"assign({self.name})", values)
        self.value = _freeze(values.copy())

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def constant(values) -> Node:
    """Wrap values as a leaf that never receives gradient"""
    if isinstance(values, Node):
        return values
    return Node(tensor(values), op="constant", requires_grad=False)


def _as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _make(op, value, parents, backward):
    _check_finite(op, value)
    return Node(_freeze(value), parents=parents, op=op, backward=backward)


# ---------------------------------------------------------------------------
# forward operations
# ---------------------------------------------------------------------------

def matmul(a, b) -> Node:
    """Matrix-matrix, vector-matrix or matrix-vector product"""
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or (av.ndim == 1 and bv.ndim == 1):
        raise ShapeError("matmul", av.shape, bv.shape)
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError("matmul", av.shape, bv.shape)

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        return np.outer(g, bv), av.T @ g

    return _make("matmul", av @ bv, (a, b), backward)


def _broadcast_kind(op, av, bv):
    if av.shape == bv.shape:
        return "same"
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        return "row_b"
    if av.ndim == 1 and bv.ndim == 2 and bv.shape[1] == av.shape[0]:
        return "row_a"
    raise ShapeError(op, av.shape, bv.shape)


def _unbroadcast(kind, ga, gb):
    if kind == "row_b":
        return ga, gb.sum(axis=0)
    if kind == "row_a":
        return ga.sum(axis=0), gb
    return ga, gb


def add(a, b) -> Node:
    """Elementwise sum; a 1-D operand is added to every row of a 2-D one"""
    a, b = _as_node(a), _as_node(b)
    kind = _broadcast_kind("add", a.value, b.value)

    def backward(g):
        return _unbroadcast(kind, g, g)

    return _make("add", a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    kind = _broadcast_kind("sub", a.value, b.value)

    def backward(g):
        return _unbroadcast(kind, g, -g)

    return _make("sub", a.value - b.value, (a, b), backward)


def elementwise_mul(a, b) -> Node:
    """Hadamard product of equally shaped tensors"""
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise ShapeError("elementwise_mul", a.shape, b.shape)
    av, bv = a.value, b.value

    def backward(g):
        return g * bv, g * av

    return _make("elementwise_mul", av * bv, (a, b), backward)


def scale(a, factor: float) -> Node:
    """Multiply by a fixed real number"""
    a = _as_node(a)
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _make("scale", a.value * factor, (a,), backward)


def tanh(a) -> Node:
    a = _as_node(a)
    out = np.tanh(a.value)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (a,), backward)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    """Concatenate along the last axis"""
    nodes = [_as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat", ())
    ndim = nodes[0].value.ndim
    axis = axis % ndim
    for n in nodes[1:]:
        lead = [s for i, s in enumerate(n.shape) if i != axis]
        first = [s for i, s in enumerate(nodes[0].shape) if i != axis]
        if n.value.ndim != ndim or lead != first:
            raise ShapeError("concat", nodes[0].shape, n.shape)
    widths = [n.shape[axis] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([n.value for n in nodes], axis=axis), nodes, backward)


def reduce_sum(a, axis: Optional[int] = None) -> Node:
    a = _as_node(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.asarray(a.value.sum(axis=axis)), (a,), backward)


def mean(a, axis: Optional[int] = None) -> Node:
    a = _as_node(a)
    shape = a.shape
    count = a.value.size if axis is None else shape[axis]

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return _make("mean", np.asarray(a.value.mean(axis=axis)), (a,), backward)


def segment_mean(a, lengths) -> Node:
    """
    Mean over consecutive row segments

    Args:
        a: node [N, d]
        lengths: positive segment lengths summing to N

    Returns:
        node [len(lengths), d]
    """
    a = _as_node(a)
    lengths = np.asarray(lengths, dtype=np.int64)
    if a.value.ndim != 2 or lengths.ndim != 1 or lengths.sum() != a.shape[0] or np.any(lengths <= 0):
        raise ShapeError("segment_mean", a.shape, lengths.shape)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    out = np.add.reduceat(a.value, starts, axis=0) / lengths[:, None]

    def backward(g):
        return (np.repeat(g / lengths[:, None], lengths, axis=0),)

    return _make("segment_mean", out, (a,), backward)


def row_slice(a, start: int, stop: int) -> Node:
    """Rows start..stop-1 of a 2-D node"""
    a = _as_node(a)
    if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
        raise ShapeError("row_slice", a.shape, (start, stop))
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape)
        grad[start:stop] = g
        return (grad,)

    return _make("row_slice", a.value[start:stop], (a,), backward)


def max_over_time(steps: Sequence, mask=None) -> Node:
    """
    Elementwise maximum over a sequence of equally shaped step tensors

    Args:
        steps: T nodes, each [k] or [B, k]
        mask: optional boolean array [T] or [B, T]; False marks padding

    Returns:
        node of the step shape; ties resolve to the lowest time index
    """
    steps = [_as_node(s) for s in steps]
    if not steps:
        raise ShapeError("max_over_time", ())
    for s in steps[1:]:
        if s.shape != steps[0].shape:
            raise ShapeError("max_over_time", steps[0].shape, s.shape)
    stacked = np.stack([s.value for s in steps], axis=0)  # [T, ...]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        step_mask = mask.T if mask.ndim == 2 else mask
        if step_mask.shape[0] != len(steps) or step_mask.shape[1:] != steps[0].shape[:-1]:
            raise ShapeError("max_over_time", step_mask.shape, stacked.shape)
        if not np.all(step_mask.any(axis=0)):
            raise ShapeError("max_over_time", step_mask.shape)
        scores = np.where(step_mask[..., None], stacked, -np.inf)
    else:
        scores = stacked
    winner = np.argmax(scores, axis=0)
    out = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def backward(g):
        grads = []
        for t in range(len(steps)):
            grads.append(np.where(winner == t, g, 0.0))
        return tuple(grads)

    return _make("max_over_time", out, steps, backward)


def embedding(table, ids) -> Node:
    """Gather rows of an embedding table"""
    table = _as_node(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.value.ndim != 2 or ids.ndim != 1:
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, (int(ids.max()),))

    def backward(g):
        grad = np.zeros(table.shape)
        np.add.at(grad, ids, g)
        return (grad,)

    return _make("embedding", table.value[ids], (table,), backward)


def softmax_cross_entropy(logits, labels) -> Node:
    """
    Per-example −log softmax(logits)[label]

    Args:
        logits: node of shape [C] or [B, C]
        labels: class index, or integer array of length B

    Returns:
        scalar node for 1-D logits, [B] node for 2-D logits
    """
    logits = _as_node(logits)
    z = logits.value
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    labels = np.atleast_1d(np.asarray(labels))
    if z2.ndim != 2 or labels.shape != (z2.shape[0],):
        raise ShapeError("softmax_cross_entropy", z.shape, labels.shape)
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers, got {labels.dtype}")
    classes = z2.shape[1]
    if labels.min() < 0 or labels.max() >= classes:
        raise LabelError(f"label out of range [0, {classes}): {labels.min()}..{labels.max()}")

    shift = z2.max(axis=1, keepdims=True)
    exp = np.exp(z2 - shift)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = z2 - shift - np.log(total)
    rows = np.arange(z2.shape[0])
    losses = -log_probs[rows, labels]
    probs = exp / total

    def backward(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        grad = grad * np.reshape(g, (-1, 1))
        return (grad[0] if single else grad,)

    value = np.asarray(losses[0]) if single else losses
    return _make("softmax_cross_entropy", value, (logits,), backward)


def grad_reverse(x, coefficient: ReversalCoefficient) -> Node:
    """
    Identity on the forward pass; scales the upstream gradient by −scale
    on the backward pass
    """
    x = _as_node(x)
    factor = -float(coefficient.scale)

    def backward(g):
        return (g * factor,)

    # same array object: the forward value is bitwise the input
    return Node(x.value, parents=(x,), op="grad_reverse", backward=backward)


def identity(x) -> Node:
    x = _as_node(x)

    def backward(g):
        return (g,)

    return Node(x.value, parents=(x,), op="identity", backward=backward)


def detach(x) -> Node:
    """Same value, cut from the graph"""
    x = _as_node(x)
    return Node(x.value, op="detach", requires_grad=False)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Node) -> List[Node]:
    order = []
    visited = set()
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
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node, params: Optional[Iterable[Parameter]] = None) -> Dict[str, np.ndarray]:
    """
    Accumulate ∂loss/∂leaf into every reachable parameter

    Args:
        loss: scalar node
        params: optional parameters to report; unreachable ones map to their
            (zeroed) accumulators

    Returns:
        gradient map keyed by parameter name
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ShapeError("backward", loss.shape)
    order = _topological_order(loss)
    for node in order:
        if not isinstance(node, Parameter) and node.requires_grad:
            node.grad = np.zeros(node.value.shape)
    if loss.requires_grad:
        loss.grad = loss.grad + np.ones(loss.value.shape)

    for node in reversed(order):
        if node._backward is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            parent.grad = parent.grad + np.reshape(pg, parent.value.shape)

    if params is None:
        params = [n for n in order if isinstance(n, Parameter)]
    return {p.name: p.grad for p in params}


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(loss_fn: Callable[[], Node], param: Parameter, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of ∂loss/∂param; loss_fn rebuilds the graph"""
    original = param.value.copy()
    grad = np.zeros(original.shape)
    flat = grad.reshape(-1)
    for i in range(original.size):
        probe = original.copy().reshape(-1)
        probe[i] += step
        param.assign(probe.reshape(original.shape))
        plus = float(loss_fn().value)
        probe[i] -= 2 * step
        param.assign(probe.reshape(original.shape))
        minus = float(loss_fn().value)
        flat[i] = (plus - minus) / (2 * step)
    param.assign(original)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(loss_fn: Callable[[], Node], params: Sequence[Parameter], step: float = 1e-5) -> float:
    """
    Compare analytic and central-difference gradients

    Returns:
        maximum elementwise relative error over all parameters
    """
    zero_grad(params)
    analytic = backward(loss_fn(), params)
    analytic = {name: g.copy() for name, g in analytic.items()}
    worst = 0.0
    for p in params:
        numeric = numerical_gradient(loss_fn, p, step)
        worst = max(worst, relative_error(analytic[p.name], numeric))
    zero_grad(params)
    return worst
