"""Reverse-mode differentiation over dense numpy arrays.

A :class:`Tape` records every operation of one forward evaluation. Nodes are
appended in creation order, which is already a topological order, so the
backward pass is a single reverse sweep with a fixed accumulation order.

Only the operators the training objectives need are provided. Anything else
raises :class:`UnsupportedOperation` rather than silently producing a value
without a gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Layout",
    "NonFiniteError",
    "Params",
    "Tape",
    "UnsupportedOperation",
    "Var",
    "add",
    "clip",
    "cov_rows",
    "custom",
    "dot",
    "dummy_scale_grad",
    "evaluate",
    "exp",
    "finite_difference_check",
    "flat_slice",
    "grad",
    "log",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "square",
    "sub",
    "sum",
    "take",
    "transpose",
    "variance",
]


class NonFiniteError(FloatingPointError):
    """An intermediate value contained NaN or infinity."""


class UnsupportedOperation(TypeError):
    """The requested operation has no differentiable implementation."""


class Var:
    __slots__ = ("value", "tape", "parents", "vjp", "op", "index", "requires_grad")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, tape, parents=(), vjp=None, op="const", requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.index = -1
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(op={self.op!r}, index={self.index}, shape={self.shape})"

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
        if isinstance(other, Var):
            raise UnsupportedOperation("division by a differentiable value is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        raise UnsupportedOperation("use take() or flat_slice() for indexing")

    def __pow__(self, other):
        raise UnsupportedOperation("use square() instead of **")

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Record of one forward evaluation."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def leaf(self, value) -> Var:
        v = Var(np.array(value, dtype=np.float64), self, op="leaf", requires_grad=True)
        return self._register(v)

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self)

    def _register(self, v: Var) -> Var:
        if not np.all(np.isfinite(v.value)):
            raise NonFiniteError(f"non-finite value at node #{len(self.nodes)} ({v.op})")
        v.index = len(self.nodes)
        self.nodes.append(v)
        return v

    def record(self, op: str, value, parents: Sequence[Var], vjp) -> Var:
        value = np.asarray(value, dtype=np.float64)
        needs = any(p.requires_grad for p in parents)
        v = Var(value, self, tuple(parents), vjp, op, requires_grad=needs)
        return self._register(v)

    def backward(self, out: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {out.index: np.ones_like(out.value)}
        for node in reversed(self.nodes[: out.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.vjp is None:
                if g is not None:
                    grads[node.index] = g
                continue
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        return [grads.get(w.index, np.zeros_like(w.value)) for w in wrt]


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise UnsupportedOperation("at least one operand must be a Var")


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands belong to different tapes")
        return x
    return tape.const(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return tape.record("add", a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return tape.record("sub", a.value - b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return tape.record("mul", av * bv, (a, b),
                       lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def square(x: Var) -> Var:
    xv = x.value
    return x.tape.record("square", xv * xv, (x,), lambda g: (2.0 * g * xv,))


def sigmoid(x: Var) -> Var:
    s = _sigmoid(x.value)
    return x.tape.record("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def log(x: Var) -> Var:
    xv = x.value
    if np.any(xv <= 0):
        raise NonFiniteError(f"log of non-positive value at node #{len(x.tape.nodes)} (log)")
    return x.tape.record("log", np.log(xv), (x,), lambda g: (g / xv,))


def exp(x: Var) -> Var:
    e = np.exp(x.value)
    return x.tape.record("exp", e, (x,), lambda g: (g * e,))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.tape.record("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def clip(x: Var, lo: float, hi: float) -> Var:
    inside = (x.value >= lo) & (x.value <= hi)
    return x.tape.record("clip", np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def dummy_scale_grad(logits: Var, targets: np.ndarray) -> Var:
    """Elementwise derivative of BCE-with-logits w.r.t. a scalar logit multiplier at 1.

    For each cell this is ``z * (sigmoid(z) - y)``; the node's own backward
    supplies ``d/dz`` of that expression, so squaring it downstream yields a
    penalty whose parameter gradient contains the needed second-order term.
    """
    z = logits.value
    y = np.asarray(targets, dtype=np.float64)
    s = _sigmoid(z)
    local = (s - y) + z * s * (1.0 - s)
    return logits.tape.record("dummy_scale_grad", z * (s - y), (logits,), lambda g: (g * local,))


# -- linear algebra and reductions ------------------------------------------

def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise UnsupportedOperation("matmul supports 1-D and 2-D operands only")

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return tape.record("matmul", av @ bv, (a, b), vjp)


def dot(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.ndim != 1 or b.ndim != 1:
        raise UnsupportedOperation("dot expects two vectors")
    return matmul(a, b)


def transpose(x: Var) -> Var:
    return x.tape.record("transpose", x.value.T, (x,), lambda g: (g.T,))


def sum(x: Var, axis: int | None = None) -> Var:  # noqa: A001
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return x.tape.record("sum", x.value.sum(axis=axis), (x,), vjp)


def mean(x: Var, axis: int | None = None) -> Var:
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def variance(x: Var) -> Var:
    """Population variance of all entries (divides by the element count)."""
    xv = x.value
    centered = xv - xv.mean()
    n = xv.size
    return x.tape.record("variance", np.mean(centered * centered), (x,),
                         lambda g: (g * 2.0 * centered / n,))


def softmax(x: Var, axis: int = -1) -> Var:
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return x.tape.record("softmax", y, (x,),
                         lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def cov_rows(x: Var) -> Var:
    """Covariance of the rows of an (n, k) matrix with 1/(n-1) normalization.

    A single row has no spread; the zero matrix is returned for n = 1.
    """
    xv = x.value
    n, k = xv.shape
    if n < 2:
        return x.tape.record("cov_rows", np.zeros((k, k)), (x,), lambda g: (np.zeros_like(xv),))
    centered = xv - xv.mean(axis=0)
    c = centered.T @ centered / (n - 1)
    return x.tape.record("cov_rows", c, (x,), lambda g: (centered @ (g + g.T) / (n - 1),))


# -- shape and indexing -------------------------------------------------------

def take(x: Var, idx) -> Var:
    """Rows ``x[idx]``; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return x.tape.record("take", x.value[idx], (x,), vjp)


def flat_slice(x: Var, start: int, stop: int) -> Var:
    size = x.shape[0]

    def vjp(g):
        out = np.zeros(size)
        out[start:stop] = g
        return (out,)

    return x.tape.record("flat_slice", x.value[start:stop], (x,), vjp)


def reshape(x: Var, shape: tuple[int, ...]) -> Var:
    old = x.shape
    return x.tape.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def custom(op: str, value, parents: Sequence[Var], vjp: Callable) -> Var:
    """Record a fused node whose backward is supplied by the caller."""
    tape = _tape_of(*parents)
    return tape.record(op, value, [_lift(p, tape) for p in parents], vjp)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- parameters ------------------------------------------------------------

@dataclass(frozen=True)
class Layout:
    """Named slices of a flat parameter vector."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in layout: {names}")

    @property
    def size(self) -> int:
        return int(np.sum([int(np.prod(s)) for _, s in self.entries], dtype=np.int64))

    def spans(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        out, offset = {}, 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            out[name] = (offset, offset + n, shape)
            offset += n
        return out

    def unpack(self, flat):
        """Split a flat array or Var into named, reshaped pieces."""
        out = {}
        for name, (a, b, shape) in self.spans().items():
            if isinstance(flat, Var):
                out[name] = reshape(flat_slice(flat, a, b), shape)
            else:
                out[name] = np.asarray(flat)[a:b].reshape(shape)
        return out

    def pack(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name, shape in self.entries:
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            parts.append(arr.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class Params:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != self.layout.size:
            raise ValueError(
                f"parameter vector of length {self.values.size} does not tile layout of size {self.layout.size}")

    def named(self) -> dict[str, np.ndarray]:
        return self.layout.unpack(self.values)

    def copy(self) -> "Params":
        return Params(self.values.copy(), self.layout)


# -- drivers ---------------------------------------------------------------

def evaluate(f: Callable[[Var], Var], values: np.ndarray) -> float:
    tape = Tape()
    out = f(tape.leaf(values))
    if out.value.size != 1:
        raise ValueError(f"objective must return a scalar, got shape {out.shape}")
    return float(out.value)


def grad(f: Callable[[Var], Var], p: Params | np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of scalar ``f`` at ``p``.

    ``f`` receives the flat parameter vector as a :class:`Var`; use
    ``layout.unpack`` inside ``f`` for named access.
    """
    values = p.values if isinstance(p, Params) else np.asarray(p, dtype=np.float64)
    tape = Tape()
    theta = tape.leaf(values)
    out = f(theta)
    if not isinstance(out, Var) or out.value.size != 1:
        raise ValueError("objective must return a scalar Var")
    (g,) = tape.backward(out, [theta])
    return float(out.value), g


def finite_difference_check(f: Callable[[Var], Var], p: Params | np.ndarray, step: float = 1e-5,
                            floor: float = 1e-6) -> float:
    """Largest coordinate-wise relative error between analytic and central-difference gradients.

    The denominator is ``max(|analytic|, |numeric|, floor)``. Central
    differences at ``step`` resolve gradients only to about ``eps * |f| / step``
    (~1e-11 here), so components below ``floor`` are judged on an absolute
    scale instead of a meaningless relative one.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    values = p.values if isinstance(p, Params) else np.asarray(p, dtype=np.float64)
    _, analytic = grad(f, values)
    worst = 0.0
    for i in range(values.size):
        up, down = values.copy(), values.copy()
        up[i] += step
        down[i] -= step
        fu, fd = evaluate(f, up), evaluate(f, down)
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise NonFiniteError(f"objective not finite at perturbed coordinate {i}")
        numeric = (fu - fd) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
