"""Small reverse-mode autodiff over dense 2-D float64 matrices.

Only the operations the pipeline needs are provided. Every node stores its
value as a C-contiguous ``(rows, cols)`` float64 array; scalars are 1x1.
Binary operations broadcast over singleton rows/columns the way numpy does,
and the backward pass sums gradients back to the operand's shape.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalError


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by {what}")


def _as_2d(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got {arr.ndim}")
    return np.ascontiguousarray(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class Matrix:
    """A node in the computation graph.

    Constants are Matrices with ``requires_grad=False``; they take part in
    forward computation but the backward pass never visits them.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.value = _as_2d(data)
        _check_finite(self.value, _op or "constructor")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape}, op={self._op!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Matrix):
    """Trainable matrix with Adam moment buffers."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, _op="parameter")
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def constant(data) -> Matrix:
    return data if isinstance(data, Matrix) else Matrix(data)


def _node(value: np.ndarray, parents: tuple, op: str, backward) -> Matrix:
    out = Matrix.__new__(Matrix)
    _check_finite(value, op)
    out.value = np.ascontiguousarray(value)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = parents if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._op = op
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Matrix:
    a, b = constant(a), constant(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), "add", backward)


def sub(a, b) -> Matrix:
    a, b = constant(a), constant(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), "sub", backward)


def mul(a, b) -> Matrix:
    a, b = constant(a), constant(b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), "mul", backward)


def scale(a: Matrix, c: float) -> Matrix:
    a = constant(a)
    c = float(c)
    return _node(a.value * c, (a,), "scale", lambda g: (g * c,))


def relu(a: Matrix) -> Matrix:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = constant(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), "relu", lambda g: (g * mask,))


def exp(a: Matrix) -> Matrix:
    a = constant(a)
    out = np.exp(a.value)
    return _node(out, (a,), "exp", lambda g: (g * out,))


def log(a: Matrix) -> Matrix:
    a = constant(a)
    if np.any(a.value <= 0):
        raise NumericalError("log of a nonpositive entry")
    return _node(np.log(a.value), (a,), "log", lambda g: (g / a.value,))


def power(a: Matrix, p: float) -> Matrix:
    a = constant(a)
    p = float(p)
    out = np.power(a.value, p)

    def backward(g):
        return (g * p * np.power(a.value, p - 1.0),)

    return _node(out, (a,), "power", backward)


def clip(a: Matrix, lo: float, hi: float) -> Matrix:
    a = constant(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), "clip", lambda g: (g * inside,))


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Matrix:
    a, b = constant(a), constant(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), "matmul", backward)


def transpose(a: Matrix) -> Matrix:
    a = constant(a)
    return _node(a.value.T.copy(), (a,), "transpose", lambda g: (g.T,))


def total(a: Matrix) -> Matrix:
    """Sum of all entries as a 1x1 matrix."""
    a = constant(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), (a,), "sum",
                 lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Matrix) -> Matrix:
    a = constant(a)
    return scale(total(a), 1.0 / a.value.size)


def row_sum(a: Matrix) -> Matrix:
    a = constant(a)
    shape = a.shape
    return _node(a.value.sum(axis=1, keepdims=True), (a,), "row_sum",
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def col_sum(a: Matrix) -> Matrix:
    a = constant(a)
    shape = a.shape
    return _node(a.value.sum(axis=0, keepdims=True), (a,), "col_sum",
                 lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------- row-wise

def row_l2_normalize(a: Matrix) -> Matrix:
    """Scale every nonzero row to unit Euclidean norm; zero rows pass as zeros."""
    a = constant(a)
    norms = np.sqrt(np.einsum("ij,ij->i", a.value, a.value))[:, None]
    nonzero = norms > 0
    safe = np.where(nonzero, norms, 1.0)
    out = np.where(nonzero, a.value / safe, a.value)

    def backward(g):
        proj = np.einsum("ij,ij->i", g, out)[:, None]
        return (np.where(nonzero, (g - out * proj) / safe, 0.0),)

    return _node(out, (a,), "row_l2_normalize", backward)


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Matrix) -> Matrix:
    a = constant(a)
    out = _stable_softmax(a.value)

    def backward(g):
        dot = np.einsum("ij,ij->i", g, out)[:, None]
        return (out * (g - dot),)

    return _node(out, (a,), "row_softmax", backward)


def row_log_softmax(a: Matrix) -> Matrix:
    a = constant(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _node(out, (a,), "row_log_softmax", backward)


def cosine_similarity_matrix(e: Matrix) -> Matrix:
    """Pairwise cosine similarity of rows.

    The result is exactly symmetric, clipped to [-1, 1], has a unit diagonal
    for nonzero rows and is 0 in every row/column of an all-zero row.
    """
    e = constant(e)
    if e.rows < 1:
        raise ValueError("cosine similarity needs at least one row")
    n = row_l2_normalize(e)
    s = matmul(n, transpose(n))
    s = scale(add(s, transpose(s)), 0.5)
    s = clip(s, -1.0, 1.0)
    nonzero = (np.abs(e.value).sum(axis=1) > 0).astype(np.float64)
    eye = np.eye(e.rows)
    return add(mul(s, 1.0 - eye), eye * nonzero[:, None])


# ---------------------------------------------------------------- backward

def backprop_gradients(loss: Matrix) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable Parameter."""
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be a 1x1 scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Matrix] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericalError(f"non-finite gradient in reverse pass through {node._op}")
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
