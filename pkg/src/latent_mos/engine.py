"""Reverse-mode differentiation over dense float64 tensors.

Every op returns a new :class:`Tensor`; when any input is tracked the result
records its parents and a closure mapping the upstream gradient to one
gradient per parent.  :func:`backward` walks the recorded graph in reverse
creation order, which is a valid reverse topological order because a node
is always created after its parents.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "EngineError", "DimensionError", "NonFiniteError",
    "ContractError", "tensor", "as_tensor", "apply_op", "no_grad",
    "matmul", "add", "sub", "mul", "div", "neg", "tanh", "sigmoid", "exp",
    "log", "softplus", "square", "sin", "cos", "sum", "mean", "concat",
    "stack", "transpose", "reshape", "softmax", "norm", "where", "activation",
    "backward", "finite_diff_check",
]


class EngineError(Exception):
    pass


class DimensionError(EngineError, ValueError):
    pass


class NonFiniteError(EngineError, FloatingPointError):
    pass


class ContractError(EngineError):
    pass


_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        bad = np.argwhere(~np.isfinite(data))
        where_ = tuple(int(i) for i in bad[0]) if data.ndim else ()
        raise NonFiniteError(f"{op}: non-finite value at index {where_}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "op", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None
        self._id = next(_ids)
        self.op = "leaf"
        self.name = name

    @classmethod
    def _node(cls, data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = True
        t.grad = None
        t._parents = parents
        t._backward = backward
        t._id = next(_ids)
        t.op = op
        t.name = None
        return t

    @classmethod
    def _const(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._id = next(_ids)
        t.op = "const"
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._const(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Named trainable tensor; its gradient accumulates until reset."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return self.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    _check_finite(arr, "tensor")
    return Tensor._const(arr)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return Tensor(x, requires_grad=requires_grad)


def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap a forward result; register a tape node if any parent is tracked.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    _check_finite(data, op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor._node(data, tuple(parents), backward, op)
    return Tensor._const(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return apply_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return apply_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)
    return apply_op(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NonFiniteError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)
    return apply_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics (both operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch extents differ, {a.shape} x {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb
    return apply_op(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- elementwise

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return apply_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return apply_op(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        idx = tuple(int(i) for i in np.argwhere(x.data <= 0)[0])
        raise NonFiniteError(f"log: non-positive argument at index {idx}")
    xd = x.data
    return apply_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    y = np.logaddexp(0.0, xd)
    return apply_op(y, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * xd)),), "softplus")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return apply_op(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def sin(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return apply_op(np.sin(xd), (x,), lambda g: (g * np.cos(xd),), "sin")


def cos(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return apply_op(np.cos(xd), (x,), lambda g: (-g * np.sin(xd),), "cos")


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "softplus": softplus}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def where(cond, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape
    return apply_op(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                                            _unbroadcast(np.where(cond, 0.0, g), sb)), "where")


# ---------------------------------------------------------------- reductions & shape

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return apply_op(np.asarray(out), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat: empty input")
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))
    return apply_op(out, tuple(xs), bw, "concat")


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):]) for x in xs]
    return concat(expanded, axis=axis)


def _getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape
    out = x.data[idx]
    fancy = any(isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)
    return apply_op(np.array(out, dtype=np.float64), (x,), bw, "slice")


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("transpose: need at least 2-D")
    return apply_op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: {e}") from None
    return apply_op(out, (x,), lambda g: (g.reshape(old),), "reshape")


def softmax(logits, axis: int = -1) -> Tensor:
    x = as_tensor(logits)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax: empty input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return apply_op(y, (x,), bw, "softmax")


def norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``."""
    x = as_tensor(x)
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (g * np.where(n > 0, xd / safe, 0.0),)
    out = n if keepdims else np.squeeze(n, axis=axis)
    return apply_op(out, (x,), bw, "norm")


# ---------------------------------------------------------------- gradients

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by tracked operations")
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack_.extend(p for p in t._parents if p.requires_grad and p._id not in nodes)
    grads = {loss._id: np.ones_like(loss.data)}
    for i in sorted(nodes, reverse=True):
        t = nodes[i]
        g = grads.pop(i, None)
        if g is None:
            continue
        if t._backward is None:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(p._id)
            grads[p._id] = pg if prev is None else prev + pg


def finite_diff_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
                      max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``f`` is re-evaluated with each parameter entry nudged in place.  With
    ``max_entries`` only that many seeded-random entries per tensor are probed.
    """
    pick = np.random.default_rng(seed)
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss = f()
    backward(loss)
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = p.grad.reshape(-1).copy()
            flat = p.data.reshape(-1)
            if not np.shares_memory(flat, p.data):
                raise ContractError(f"parameter {p.name!r} is not contiguous")
            entries = range(flat.size)
            if max_entries is not None and flat.size > max_entries:
                entries = np.sort(pick.choice(flat.size, size=max_entries, replace=False))
            for i in entries:
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NonFiniteError(f"finite_diff_check: f not finite near {p.name}[{i}]")
                num = (fp - fm) / (2.0 * eps)
                worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(num)))
    return worst
