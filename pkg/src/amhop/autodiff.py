"""Dense float64 tensors with reverse-mode automatic differentiation.

A small dynamic-graph engine: each operation records its input nodes and a
backward closure on its output, and :func:`backward` replays the recorded
graph in reverse topological order, accumulating (never overwriting) into
``grad`` slots.  Scope is exactly what the sequence models in this package
need: strict-shape elementwise math, 1-D/2-D matmul, concatenation, masked
softmax, log-sum-exp, and a central finite-difference oracle
(:func:`grad_check`) used throughout the test suite.

Everything is float64.  There is no broadcasting beyond scalar-times-tensor
(:func:`scale`); any other shape disagreement raises :class:`ShapeMismatchError`.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatchError",
    "MaskError",
    "no_grad",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "matmul",
    "concat",
    "stack_rows",
    "take_row",
    "tsum",
    "pick",
    "logsumexp",
    "softmax",
    "backward",
    "zero_grads",
    "grad_check",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class MaskError(ValueError):
    """Raised when a softmax mask leaves no valid position."""


# Gradient recording switch; flipped by no_grad() for cheap re-evaluation
# (finite differences, inference).  One-element list so closures see updates.
_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable graph recording inside the context."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    Tensors are immutable after creation except for ``grad``; parameters are
    mutated in place only by the optimizer between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """A learnable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ"
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape("mul", a, b)
    da, db = a.data, b.data
    return _record(da * db, (a, b), lambda g: (g * db, g * da))


def scale(a: Tensor, s: float) -> Tensor:
    """Scalar-times-tensor, the only permitted broadcast."""
    s = float(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Two-branch form stays finite for any finite input.
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands.

    Supports (m,k)@(k,n), (m,k)@(k,), (k,)@(k,n) and (k,)@(k,).  Gradients
    are the usual transposed products / outer products.
    """
    da, db = a.data, b.data
    if da.ndim not in (1, 2) or db.ndim not in (1, 2):
        raise ShapeMismatchError(
            f"matmul: operands must be 1-D or 2-D, got {da.shape} and {db.shape}"
        )
    inner_a = da.shape[-1]
    inner_b = db.shape[0]
    if inner_a != inner_b:
        raise ShapeMismatchError(
            f"matmul: inner extents differ for shapes {da.shape} and {db.shape}"
        )
    out = da @ db

    def backward_fn(g):
        if da.ndim == 2 and db.ndim == 2:
            return g @ db.T, da.T @ g
        if da.ndim == 2 and db.ndim == 1:
            return np.outer(g, db), da.T @ g
        if da.ndim == 1 and db.ndim == 2:
            return db @ g, np.outer(da, g)
        return g * db, g * da

    return _record(out, (a, b), backward_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; backward slices the gradient back."""
    if not parts:
        raise ShapeMismatchError("concat: need at least one part")
    ndim = parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise ShapeMismatchError(
                f"concat: rank mismatch between {parts[0].data.shape} and {p.data.shape}"
            )
        for ax in range(ndim):
            if ax != axis and p.data.shape[ax] != parts[0].data.shape[ax]:
                raise ShapeMismatchError(
                    f"concat: non-concat extents differ: {parts[0].data.shape} vs {p.data.shape}"
                )
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(parts), backward_fn)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a 2-D matrix (row per input)."""
    if not rows:
        raise ShapeMismatchError("stack_rows: need at least one row")
    width = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != width:
            raise ShapeMismatchError(
                f"stack_rows: expected 1-D rows of shape {width}, got {r.data.shape}"
            )
    out = np.stack([r.data for r in rows])

    def backward_fn(g):
        return tuple(g[i] for i in range(len(rows)))

    return _record(out, tuple(rows), backward_fn)


def take_row(m: Tensor, index: int) -> Tensor:
    """Row lookup (embedding gather); backward scatters into the matrix."""
    if m.data.ndim != 2:
        raise ShapeMismatchError(f"take_row: expected a matrix, got shape {m.data.shape}")
    n_rows = m.data.shape[0]
    if not 0 <= index < n_rows:
        raise IndexError(f"take_row: row {index} out of range for {n_rows} rows")
    out = m.data[index].copy()

    def backward_fn(g):
        gm = np.zeros_like(m.data)
        gm[index] = g
        return (gm,)

    return _record(out, (m,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(a.data.sum())
    return _record(out, (a,), lambda g: (np.full_like(a.data, float(g)),))


def pick(a: Tensor, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    if a.data.ndim != 1:
        raise ShapeMismatchError(f"pick: expected a vector, got shape {a.data.shape}")
    if not 0 <= index < a.data.shape[0]:
        raise IndexError(f"pick: index {index} out of range for length {a.data.shape[0]}")
    out = np.asarray(a.data[index])

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[index] = float(g)
        return (ga,)

    return _record(out, (a,), backward_fn)


def logsumexp(a: Tensor) -> Tensor:
    """log(sum(exp(x))) over a 1-D tensor, max-shifted for overflow safety."""
    if a.data.ndim != 1:
        raise ShapeMismatchError(f"logsumexp: expected a vector, got shape {a.data.shape}")
    x = a.data
    m = np.max(x)
    e = np.exp(x - m)
    s = e.sum()
    out = np.asarray(m + np.log(s))
    soft = e / s

    def backward_fn(g):
        return (float(g) * soft,)

    return _record(out, (a,), backward_fn)


def softmax(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Masked softmax over a 1-D tensor.

    ``mask`` is a boolean vector marking valid positions; masked positions get
    weight exactly 0 and receive no gradient.  Scores are max-shifted over the
    valid positions, so overflow is impossible for finite inputs.
    """
    if a.data.ndim != 1:
        raise ShapeMismatchError(f"softmax: expected a vector, got shape {a.data.shape}")
    x = a.data
    if mask is None:
        valid = np.ones(x.shape[0], dtype=bool)
    else:
        valid = np.asarray(mask, dtype=bool)
        if valid.shape != x.shape:
            raise ShapeMismatchError(
                f"softmax: mask shape {valid.shape} does not match input shape {x.shape}"
            )
    if not valid.any():
        raise MaskError("softmax: all positions masked")
    shifted = x - np.max(x[valid])
    e = np.where(valid, np.exp(np.where(valid, shifted, 0.0)), 0.0)
    y = e / e.sum()

    def backward_fn(g):
        inner = np.dot(g, y)
        return (y * (g - inner),)

    return _record(y, (a,), backward_fn)


def _toposort(root: Tensor) -> list:
    """Iterative post-order over the recorded graph (parents before children)."""
    order: list = []
    visited: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients accumulate: a tensor feeding the loss along several paths
    receives the sum of all path gradients.
    """
    if loss.data.shape != ():
        raise ShapeMismatchError(
            f"backward: loss must be scalar, got shape {loss.data.shape}"
        )
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad += g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(
    f: Callable[[], Tensor],
    params: dict,
    eps: float = 1e-5,
    rel_floor: float = 1e-5,
    f_numeric: Optional[Callable[[], float]] = None,
) -> dict:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must rebuild and return the scalar loss from the current parameter
    values on every call.  Every element of every parameter is perturbed by
    ±eps; the report maps parameter name to the maximum elementwise relative
    error ``|a - n| / max(|a|, |n|, rel_floor)``.

    ``f_numeric``, when given, is a cheaper float-valued evaluation of the
    same loss used for the perturbed evaluations (an independently coded
    forward makes the check stricter, not weaker: any disagreement between
    the two forwards shows up as a gradient mismatch).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    zero_grads(params.values())
    loss = f()
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    evaluate = f_numeric if f_numeric is not None else (lambda: float(f().data))
    report = {}
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = evaluate()
                flat[i] = orig - eps
                f_minus = evaluate()
                flat[i] = orig
                numeric[i] = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)
            if flat.size == 0:
                report[name] = 0.0
                continue
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), rel_floor)
            report[name] = float(np.max(np.abs(a - numeric) / denom))
    return report
