"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs include a trainable
leaf.  Values are plain numpy arrays; each recorded :class:`Var` keeps its
parents together with a vector-Jacobian product closure.  Tapes are cheap
and meant to be thrown away after a single loss evaluation.

Example::

    tape = Tape()
    x = tape.leaf(np.array([3.0]), "x")
    loss = sum_(mul(x, x))
    grads = tape.backward(loss)      # {"x": array([6.])}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError

__all__ = [
    "Var",
    "Tape",
    "const",
    "make_op",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "softplus",
    "logsumexp",
    "l2_normalize",
    "sum_",
    "mean",
    "concat",
    "gather",
    "transpose",
    "reshape",
    "detach",
    "stable_sigmoid",
    "GradCheckReport",
    "grad_check",
]


def stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


class Var:
    """A value in the computation, optionally tracked by a tape."""

    __slots__ = ("value", "tape", "parents", "name", "requires_grad", "grad")

    def __init__(self, value, tape=None, parents=(), name=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.name = name
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of operations for one loss evaluation."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def leaf(self, value, name: str) -> Var:
        """Register a trainable parameter.  The array is copied."""
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"leaf {name!r} has non-finite entries")
        v = Var(arr, tape=self, name=name, requires_grad=True)
        self.leaves[name] = v
        self.nodes.append(v)
        return v

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Propagate d(loss)/d(node) back to every leaf.

        Returns a mapping from leaf name to gradient.  Leaves that the loss
        does not depend on get a zero array.
        """
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        if loss.requires_grad:
            if loss.tape is not self:
                raise ValueError("loss was not recorded on this tape")
            loss.grad = np.ones_like(loss.value)
            for node in reversed(self.nodes):
                g = node.grad
                if g is None:
                    continue
                for parent, vjp in node.parents:
                    if not parent.requires_grad:
                        continue
                    contrib = vjp(g)
                    if parent.grad is None:
                        parent.grad = np.array(contrib, dtype=np.float64)
                    else:
                        parent.grad = parent.grad + contrib
        out = {}
        for name, v in self.leaves.items():
            out[name] = v.grad if v.grad is not None else np.zeros_like(v.value)
        return out


def const(value) -> Var:
    """Wrap an array as an untracked constant."""
    if isinstance(value, Var):
        return value
    return Var(np.asarray(value, dtype=np.float64))


def _tape_of(args):
    tape = None
    for a in args:
        if a.requires_grad:
            if tape is not None and a.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = a.tape
    return tape


def make_op(value, parents) -> Var:
    """Create a node from ``value`` and ``[(input Var, vjp), ...]``.

    ``vjp`` maps the output cotangent to the input cotangent.  This is the
    single extension point used by every primitive below.
    """
    inputs = [p for p, _ in parents]
    tape = _tape_of(inputs)
    if tape is None:
        return Var(value)
    tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
    out = Var(value, tape=tape, parents=tracked, requires_grad=True)
    tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {av.shape} x {bv.shape}")
    return make_op(
        av @ bv,
        [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)],
    )


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Var:
    a, b = const(a), const(b)
    _broadcast_shape(a.value, b.value, "add")
    sa, sb = a.value.shape, b.value.shape
    return make_op(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))],
    )


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    _broadcast_shape(a.value, b.value, "sub")
    sa, sb = a.value.shape, b.value.shape
    return make_op(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))],
    )


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    _broadcast_shape(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return make_op(
        av * bv,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def neg(a) -> Var:
    a = const(a)
    return make_op(-a.value, [(a, lambda g: -g)])


def scale(a, c: float) -> Var:
    a = const(a)
    c = float(c)
    return make_op(a.value * c, [(a, lambda g: g * c)])


def relu(a) -> Var:
    a = const(a)
    on = a.value > 0
    return make_op(np.where(on, a.value, 0.0), [(a, lambda g: g * on)])


def sigmoid(a) -> Var:
    a = const(a)
    s = stable_sigmoid(a.value)
    return make_op(s, [(a, lambda g: g * s * (1.0 - s))])


def exp(a) -> Var:
    a = const(a)
    e = np.exp(a.value)
    return make_op(e, [(a, lambda g: g * e)])


def log(a) -> Var:
    a = const(a)
    if np.any(a.value <= 0):
        raise DomainError("log of a non-positive value")
    v = a.value
    return make_op(np.log(v), [(a, lambda g: g / v)])


def softplus(a) -> Var:
    """log(1 + e^x), exact for large |x|.  softplus(-inf) = 0 with zero slope."""
    a = const(a)
    v = a.value
    return make_op(np.logaddexp(0.0, v), [(a, lambda g: g * stable_sigmoid(v))])


def logsumexp(a, axis: int = -1, mask=None) -> Var:
    """Stable log-sum-exp reducing ``axis``.

    With a boolean ``mask`` only the selected entries take part; a slice
    with nothing selected yields ``-inf`` and passes back zero gradient.
    """
    a = const(a)
    v = a.value
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
    masked = np.where(mask, v, -np.inf)
    m = np.max(masked, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(masked - m_safe)
    s = w.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.squeeze(np.log(s) + m_safe, axis=axis)

    def vjp(g):
        inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        return (np.expand_dims(g, axis) * inv) * w

    return make_op(out, [(a, vjp)])


def l2_normalize(a, axis: int = -1) -> Var:
    a = const(a)
    v = a.value
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateInputError("cannot L2-normalize a zero vector")
    u = v / norm

    def vjp(g):
        return (g - u * np.sum(g * u, axis=axis, keepdims=True)) / norm

    return make_op(u, [(a, vjp)])


def sum_(a, axis=None) -> Var:
    a = const(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return make_op(np.asarray(a.value.sum(axis=axis)), [(a, vjp)])


def mean(a, axis=None) -> Var:
    a = const(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def concat(parts, axis: int = -1) -> Var:
    parts = [const(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        lo, hi = int(bounds[i]), int(bounds[i + 1])

        def vjp(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        parents.append((p, vjp))
    return make_op(value, parents)


def gather(a, index) -> Var:
    """Row-wise column gather: ``out[i, j] = a[i, index[i, j]]``."""
    a = const(a)
    index = np.asarray(index, dtype=np.intp)
    v = a.value
    if v.ndim != 2 or index.ndim != 2 or index.shape[0] != v.shape[0]:
        raise ShapeError(f"gather: bad shapes {v.shape} and {index.shape}")
    out = np.take_along_axis(v, index, axis=1)
    rows = np.broadcast_to(np.arange(v.shape[0])[:, None], index.shape)

    def vjp(g):
        full = np.zeros_like(v)
        np.add.at(full, (rows, index), g)
        return full

    return make_op(out, [(a, vjp)])


def transpose(a) -> Var:
    a = const(a)
    return make_op(a.value.T, [(a, lambda g: g.T)])


def reshape(a, shape) -> Var:
    a = const(a)
    old = a.value.shape
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from None
    return make_op(value, [(a, lambda g: g.reshape(old))])


def detach(a) -> Var:
    """Same value, cut from the tape."""
    return Var(const(a).value)


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    n_checked: int = 0
    worst: tuple | None = None
    failures: list = field(default_factory=list)


def grad_check(
    f: Callable[[Tape, Mapping[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients with central differences, coordinate by coordinate.

    ``f`` receives a fresh tape and a dict of leaf Vars and returns a scalar
    Var.  The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        leaves = {k: tape.leaf(v, k) for k, v in values.items()}
        return tape, f(tape, leaves)

    tape, loss = evaluate(params)
    analytic = tape.backward(loss)

    max_err = 0.0
    worst = None
    failures = []
    n = 0
    for name, base in params.items():
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + eps
            hi = float(evaluate(params)[1].value)
            base[idx] = orig - eps
            lo = float(evaluate(params)[1].value)
            base[idx] = orig
            num = (hi - lo) / (2 * eps)
            ana = float(analytic[name][idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            n += 1
            if not np.isfinite(err):
                err = np.inf
            if err > max_err or worst is None:
                max_err, worst = max(err, max_err), (name, idx)
            if err > tol:
                failures.append((name, idx, ana, num))
    return GradCheckReport(
        max_rel_err=float(max_err),
        passed=not failures,
        tol=tol,
        n_checked=n,
        worst=worst,
        failures=failures,
    )
