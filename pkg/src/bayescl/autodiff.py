"""Reverse-mode automatic differentiation over dense array graphs.

A :class:`Tape` records every primitive applied to :class:`Var` values, each node
keeping its parents and one vector-Jacobian product per parent. Primitives are
fused dense operations (matmul, bias-add, tanh, sigmoid, softmax, logsumexp, ...)
rather than scalar arithmetic, which keeps tapes short for the small networks used
here.

Every primitive also accepts plain numpy arrays; when no operand is a ``Var`` the
primitive simply returns the numpy result. Model code is therefore written once
and runs either plainly or on a tape.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as _np_logsumexp

from .errors import EmptyTapeError, NonFiniteValueError

ArrayLike = Any
VectorJacobian = Callable[[np.ndarray], np.ndarray]


class OpKind(Enum):
    """Primitive node kinds recorded on a tape."""

    # Leaves
    INPUT = "INPUT"
    CONST = "CONST"

    # Elementwise arithmetic
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    DIV = "DIV"
    NEG = "NEG"
    SQUARE = "SQUARE"
    EXP = "EXP"
    LOG = "LOG"

    # Activations
    TANH = "TANH"
    RELU = "RELU"
    SIGMOID = "SIGMOID"
    LOG_SIGMOID = "LOG_SIGMOID"

    # Dense fused ops
    MATMUL = "MATMUL"
    BIAS_ADD = "BIAS_ADD"
    SUM = "SUM"
    SOFTMAX = "SOFTMAX"
    LOG_SOFTMAX = "LOG_SOFTMAX"
    LOGSUMEXP = "LOGSUMEXP"

    # Structural
    INDEX = "INDEX"
    RESHAPE = "RESHAPE"
    CONCAT = "CONCAT"


@dataclass
class Node:
    """A recorded primitive application."""

    kind: OpKind
    parents: tuple[int, ...]
    value: np.ndarray
    vjps: tuple[VectorJacobian, ...] = ()


class Tape:
    """Single-owner record of a forward pass.

    Nodes are appended in evaluation order, so parents always precede children.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[int] = []
        self.output: int | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def input(self, value: ArrayLike) -> "Var":
        """Register a differentiable input and return its variable."""
        var = self.record(OpKind.INPUT, (), _as_float_array(value), ())
        self.inputs.append(var.index)
        return var

    def constant(self, value: ArrayLike) -> "Var":
        return self.record(OpKind.CONST, (), _as_float_array(value), ())

    def record(
        self,
        kind: OpKind,
        parents: Sequence["Var"],
        value: np.ndarray,
        vjps: Sequence[VectorJacobian],
    ) -> "Var":
        index = len(self.nodes)
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteValueError(index, kind.value)
        for parent in parents:
            if parent.tape is not self:
                raise ValueError("Cannot combine variables from different tapes")
        self.nodes.append(
            Node(kind, tuple(p.index for p in parents), value, tuple(vjps))
        )
        return Var(self, index)


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("index", "tape")
    # Make numpy defer binary operators to the Var implementations.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        kind = self.tape.nodes[self.index].kind.value
        return f"Var(node={self.index}, kind={kind}, shape={self.shape})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


@dataclass(frozen=True)
class Gradient:
    """Partial derivatives aligned with the differentiated inputs.

    Attributes:
        values: Flat concatenation of all input gradients, index-aligned with the
            concatenated (flattened) inputs.
        per_input: One array per input, shaped like that input.

    """

    values: np.ndarray
    per_input: tuple[np.ndarray, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.values)


def _as_float_array(value: ArrayLike) -> np.ndarray:
    if hasattr(value, "values") and not isinstance(value, np.ndarray):
        value = value.values
    return np.array(value, dtype=np.float64)


def _tape_of(*operands) -> Tape | None:
    for operand in operands:
        if isinstance(operand, Var):
            return operand.tape
    return None


def _val(operand) -> np.ndarray:
    if isinstance(operand, Var):
        return operand.value
    return np.asarray(operand, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(kind: OpKind, a, b, fn, grad_a, grad_b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = fn(av, bv)
    if tape is None:
        return out
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(grad_a(g, av, bv, out), av.shape))
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(grad_b(g, av, bv, out), bv.shape))
    return tape.record(kind, parents, out, vjps)


def _unary(kind: OpKind, a, fn, grad_fn):
    if not isinstance(a, Var):
        return fn(_val(a))
    av = a.value
    out = fn(av)
    return a.tape.record(kind, [a], out, [lambda g: grad_fn(g, av, out)])


def add(a, b):
    return _binary(OpKind.ADD, a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def bias_add(x, bias):
    """Add a bias row vector to every row of ``x``."""
    return _binary(OpKind.BIAS_ADD, x, bias, np.add, lambda g, *_: g, lambda g, *_: g)


def sub(a, b):
    return _binary(OpKind.SUB, a, b, np.subtract, lambda g, *_: g, lambda g, *_: -g)


def mul(a, b):
    return _binary(
        OpKind.MUL,
        a,
        b,
        np.multiply,
        lambda g, av, bv, out: g * bv,
        lambda g, av, bv, out: g * av,
    )


def div(a, b):
    return _binary(
        OpKind.DIV,
        a,
        b,
        np.divide,
        lambda g, av, bv, out: g / bv,
        lambda g, av, bv, out: -g * out / bv,
    )


def neg(a):
    return _unary(OpKind.NEG, a, np.negative, lambda g, av, out: -g)


def square(a):
    return _unary(OpKind.SQUARE, a, np.square, lambda g, av, out: 2.0 * g * av)


def exp(a):
    return _unary(OpKind.EXP, a, np.exp, lambda g, av, out: g * out)


def log(a):
    return _unary(OpKind.LOG, a, np.log, lambda g, av, out: g / av)


def tanh(a):
    return _unary(OpKind.TANH, a, np.tanh, lambda g, av, out: g * (1.0 - out**2))


def relu(a):
    return _unary(
        OpKind.RELU,
        a,
        lambda v: np.maximum(v, 0.0),
        lambda g, av, out: g * (av > 0.0),
    )


def sigmoid(a):
    return _unary(OpKind.SIGMOID, a, expit, lambda g, av, out: g * out * (1.0 - out))


def log_sigmoid(a):
    """Numerically stable ``log(sigmoid(a))``."""
    return _unary(
        OpKind.LOG_SIGMOID,
        a,
        lambda v: -np.logaddexp(0.0, -v),
        lambda g, av, out: g * expit(-av),
    )


def matmul(a, b):
    if _val(a).ndim != 2 or _val(b).ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {_val(a).shape} and {_val(b).shape}"
        )
    return _binary(
        OpKind.MATMUL,
        a,
        b,
        np.matmul,
        lambda g, av, bv, out: g @ bv.T,
        lambda g, av, bv, out: av.T @ g,
    )


def sum_(a, axis: int | None = None, keepdims: bool = False):
    if not isinstance(a, Var):
        return np.sum(_val(a), axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    out = np.sum(av, axis=axis, keepdims=keepdims)
    return a.tape.record(OpKind.SUM, [a], out, [vjp])


def _softmax(v: np.ndarray, axis: int) -> np.ndarray:
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a, axis: int = -1):
    def grad(g, av, out):
        return out * (g - np.sum(g * out, axis=axis, keepdims=True))

    return _unary(OpKind.SOFTMAX, a, lambda v: _softmax(v, axis), grad)


def log_softmax(a, axis: int = -1):
    def fn(v):
        return v - _np_logsumexp(v, axis=axis, keepdims=True)

    def grad(g, av, out):
        return g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)

    return _unary(OpKind.LOG_SOFTMAX, a, fn, grad)


def logsumexp(a, axis: int | None = None, keepdims: bool = False):
    def fn(v):
        return _np_logsumexp(v, axis=axis, keepdims=keepdims)

    def grad(g, av, out):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            out = np.expand_dims(out, axis)
        return g * np.exp(av - out)

    return _unary(OpKind.LOGSUMEXP, a, fn, grad)


def index(a, key):
    """Gather ``a[key]`` with any numpy index; gradients scatter-add back."""
    if not isinstance(a, Var):
        return _val(a)[key]
    av = a.value

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, key, g)
        return full

    return a.tape.record(OpKind.INDEX, [a], av[key], [vjp])


def reshape(a, shape: tuple[int, ...]):
    if not isinstance(a, Var):
        return np.reshape(_val(a), shape)
    av = a.value
    return a.tape.record(
        OpKind.RESHAPE, [a], av.reshape(shape), [lambda g: g.reshape(av.shape)]
    )


def concatenate(parts: Sequence):
    """Concatenate 1-D operands."""
    values = [_val(p).ravel() for p in parts]
    out = np.concatenate(values)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    parents, vjps = [], []
    offset = 0
    for part, value in zip(parts, values, strict=True):
        start, stop = offset, offset + value.size
        if isinstance(part, Var):
            shape = part.shape
            parents.append(part)
            vjps.append(
                lambda g, start=start, stop=stop, shape=shape: g[start:stop].reshape(
                    shape
                )
            )
        offset = stop
    return tape.record(OpKind.CONCAT, parents, out, vjps)


def evaluate(
    graph: Callable[..., Any], inputs: ArrayLike | Sequence[ArrayLike]
) -> tuple[float, Tape]:
    """Run ``graph`` on fresh tape inputs and return its scalar value and the tape.

    Args:
        graph: Callable taking one ``Var`` per input and returning a scalar
        inputs: One array-like (a ParamVector is accepted) or a tuple/list of them

    Returns:
        The forward value and the tape recording the computation

    Raises:
        NonFiniteValueError: If any intermediate node is NaN or Inf
        ValueError: If the graph output is not a scalar

    """
    tape = Tape()
    if isinstance(inputs, (tuple, list)):
        variables = [tape.input(x) for x in inputs]
    else:
        variables = [tape.input(inputs)]
    out = graph(*variables)
    if not isinstance(out, Var):
        out = tape.constant(out)
    if out.value.size != 1:
        raise ValueError(f"Graph output must be scalar, got shape {out.shape}")
    tape.output = out.index
    return float(out.value.reshape(())), tape


def backward(tape: Tape) -> Gradient:
    """Propagate adjoints from the tape output back to every input.

    Raises:
        EmptyTapeError: If the tape has no nodes or no designated output
        NonFiniteValueError: If an adjoint becomes NaN or Inf

    """
    if not tape.nodes or tape.output is None:
        raise EmptyTapeError("Cannot run backward on an empty tape")

    adjoints: list[np.ndarray | None] = [None] * len(tape.nodes)
    adjoints[tape.output] = np.ones_like(tape.nodes[tape.output].value)
    for i in range(tape.output, -1, -1):
        grad = adjoints[i]
        if grad is None:
            continue
        node = tape.nodes[i]
        for parent, vjp in zip(node.parents, node.vjps, strict=True):
            contribution = vjp(grad)
            if not np.all(np.isfinite(contribution)):
                raise NonFiniteValueError(i, node.kind.value, stage="backward")
            if adjoints[parent] is None:
                adjoints[parent] = contribution
            else:
                adjoints[parent] = adjoints[parent] + contribution

    per_input = []
    for i in tape.inputs:
        grad = adjoints[i]
        shape = tape.nodes[i].value.shape
        per_input.append(np.zeros(shape) if grad is None else np.asarray(grad))
    flat = (
        np.concatenate([g.ravel() for g in per_input]) if per_input else np.zeros(0)
    )
    return Gradient(values=flat, per_input=tuple(per_input))


def value_and_grad(
    graph: Callable[..., Any], inputs: ArrayLike | Sequence[ArrayLike]
) -> tuple[float, np.ndarray]:
    """Evaluate ``graph`` and return its value with the flat gradient."""
    value, tape = evaluate(graph, inputs)
    return value, backward(tape).values


def check_gradient(
    graph: Callable[..., Any], x: ArrayLike, eps: float = 1e-5
) -> float:
    """Compare the tape gradient against central finite differences.

    Args:
        graph: Single-input scalar graph
        x: Point of evaluation (array or ParamVector)
        eps: Finite-difference step, also the denominator floor

    Returns:
        max_i |analytic_i - numeric_i| / (|analytic_i| + eps)

    """
    point = _as_float_array(x)
    _, analytic = value_and_grad(graph, point)
    flat = point.ravel()
    errors = np.zeros(flat.size)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += eps
        minus[i] -= eps
        f_plus, _ = evaluate(graph, plus.reshape(point.shape))
        f_minus, _ = evaluate(graph, minus.reshape(point.shape))
        numeric = (f_plus - f_minus) / (2.0 * eps)
        errors[i] = abs(analytic[i] - numeric) / (abs(analytic[i]) + eps)
    return float(errors.max()) if errors.size else 0.0
