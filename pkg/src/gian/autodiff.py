"""Dense reverse-mode differentiation on numpy arrays.

Every tensor wraps a float64 ``ndarray``. The trailing two axes are the
matrix (rows, cols); any leading axes are batch axes and broadcast the way
``numpy.matmul`` and elementwise arithmetic do.

Operations record themselves on the innermost active :class:`Tape`. Outside
a tape, ops simply compute values, which is what inference and
finite-difference probing use::

    with Tape() as tape:
        loss = reduce("sum", matmul(a, b))
    tape.backward(loss)
    a.grad
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DiffTensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "EvaluationError",
    "tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "clamped_log",
    "absolute",
    "power",
    "safe_power",
    "elementwise",
    "softmax_rows",
    "reduce",
    "sum_axis",
    "mean_axis",
    "concat_rows",
    "transpose",
    "stop_gradient",
    "straight_through_step",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An operand lies outside the mathematical domain of the op."""


class EvaluationError(ArithmeticError):
    """A function under finite-difference probing returned a non-finite value."""


_TAPES: list["Tape"] = []


class DiffTensor:
    """A float64 array that can take part in reverse-mode differentiation.

    ``grad`` is allocated on first accumulation. ``tape_id`` is the index of
    the tape record that produced the tensor, or ``None`` for leaves.
    """

    __slots__ = ("values", "grad", "tape_id", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = True, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[-2] if self.values.ndim >= 2 else 1

    @property
    def cols(self) -> int:
        return self.values.shape[-1] if self.values.ndim >= 1 else 1

    @property
    def T(self) -> "DiffTensor":
        return transpose(self)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.values.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)


def tensor(values, name: str | None = None) -> DiffTensor:
    """A leaf that collects gradients."""
    return DiffTensor(values, requires_grad=True, name=name)


def constant(values) -> DiffTensor:
    """A leaf that never collects gradients (data, masks, fixed tables)."""
    if isinstance(values, DiffTensor):
        return values
    return DiffTensor(values, requires_grad=False)


@dataclass
class _Record:
    inputs: tuple[DiffTensor, ...]
    output: DiffTensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of the operations performed inside a ``with`` block.

    Records are appended in execution order, so every input of a record was
    either produced by an earlier record or is a leaf.
    """

    records: list[_Record] = field(default_factory=list)
    visits: int = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, inputs, output, backward) -> None:
        output.tape_id = len(self.records)
        self.records.append(_Record(tuple(inputs), output, backward))

    def backward(self, root: DiffTensor) -> None:
        """Propagate d(root)/d(.) to every tensor reachable on this tape.

        ``root`` must hold exactly one element. Each record is visited once,
        in reverse order.
        """
        if root.values.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
        root.accumulate(np.ones_like(root.values))
        for rec in reversed(self.records):
            self.visits += 1
            g = rec.output.grad
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is not None and inp.requires_grad:
                    inp.accumulate(gi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else constant(x)


def _emit(values: np.ndarray, inputs: Iterable[DiffTensor], backward) -> DiffTensor:
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    out = DiffTensor.__new__(DiffTensor)
    out.values = values
    out.grad = None
    out.tape_id = None
    out.requires_grad = needs
    out.name = None
    if needs and _TAPES:
        _TAPES[-1].record(inputs, out, backward)
    return out


def _check_broadcast(kind: str, a: DiffTensor, b: DiffTensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2 or a.cols != b.rows:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not compose")
    av, bv = a.values, b.values

    def backward(g):
        return (
            g @ np.swapaxes(bv, -1, -2) if a.requires_grad else None,
            np.swapaxes(av, -1, -2) @ g if b.requires_grad else None,
        )

    return _emit(av @ bv, (a, b), backward)


def transpose(x) -> DiffTensor:
    x = _as_tensor(x)
    return _emit(np.swapaxes(x.values, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat_rows(parts: Sequence) -> DiffTensor:
    """Stack matrices along the row axis, in argument order."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.rows for p in parts])
    lead = np.broadcast_shapes(*(p.shape[:-2] for p in parts))
    vals = np.concatenate([np.broadcast_to(p.values, lead + p.shape[-2:]) for p in parts], axis=-2)

    def backward(g):
        return tuple(g[..., bounds[i] : bounds[i + 1], :] for i in range(len(parts)))

    return _emit(vals, parts, backward)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.values, b.values
    out = av / bv
    return _emit(out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(x) -> DiffTensor:
    x = _as_tensor(x)
    return _emit(-x.values, (x,), lambda g: (-g,))


def scale(x, c: float) -> DiffTensor:
    x = _as_tensor(x)
    c = float(c)
    return _emit(x.values * c, (x,), lambda g: (g * c,))


def relu(x) -> DiffTensor:
    # subgradient at exactly 0 is 0
    x = _as_tensor(x)
    on = x.values > 0
    return _emit(np.where(on, x.values, 0.0), (x,), lambda g: (g * on,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> DiffTensor:
    x = _as_tensor(x)
    s = _sigmoid(x.values)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x) -> DiffTensor:
    x = _as_tensor(x)
    e = np.exp(x.values)
    return _emit(e, (x,), lambda g: (g * e,))


def log(x) -> DiffTensor:
    x = _as_tensor(x)
    if np.any(x.values <= 0):
        raise DomainError(f"log: non-positive entry (min {x.values.min()!r})")
    xv = x.values
    return _emit(np.log(xv), (x,), lambda g: (g / xv,))


def clamped_log(x, floor: float = 1e-12) -> DiffTensor:
    """log(max(x, floor)); no gradient flows where the floor is active."""
    x = _as_tensor(x)
    live = x.values > floor
    xv = np.where(live, x.values, floor)
    return _emit(np.log(xv), (x,), lambda g: (np.where(live, g / xv, 0.0),))


def absolute(x) -> DiffTensor:
    x = _as_tensor(x)
    sgn = np.sign(x.values)
    return _emit(np.abs(x.values), (x,), lambda g: (g * sgn,))


def power(x, p: float) -> DiffTensor:
    x = _as_tensor(x)
    xv = x.values
    return _emit(xv**p, (x,), lambda g: (g * p * xv ** (p - 1),))


def safe_power(x, p: float) -> DiffTensor:
    """x**p on strictly positive entries, 0 elsewhere (pseudo-inverse rule).

    Used for degree normalisers like D^-1/2 where isolated nodes have D = 0.
    """
    x = _as_tensor(x)
    live = x.values > 0
    base = np.where(live, x.values, 1.0)
    out = np.where(live, base**p, 0.0)
    return _emit(out, (x,), lambda g: (np.where(live, g * p * base ** (p - 1), 0.0),))


_UNARY = {
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "abs": absolute,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, *args) -> DiffTensor:
    """Dispatch by name: ``elementwise("add", a, b)``, ``elementwise("scale", x, 2.0)``."""
    if op_kind in _UNARY:
        (x,) = args
        return _UNARY[op_kind](x)
    if op_kind in _BINARY:
        a, b = args
        a, b = _as_tensor(a), _as_tensor(b)
        if a.shape != b.shape:
            raise ShapeError(f"{op_kind}: shapes {a.shape} and {b.shape} differ")
        return _BINARY[op_kind](a, b)
    if op_kind == "scale":
        x, c = args
        return scale(x, c)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# Reductions and normalisation
# ---------------------------------------------------------------------------


def softmax_rows(x) -> DiffTensor:
    """Softmax over the last axis, with max-subtraction."""
    x = _as_tensor(x)
    z = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), backward)


def sum_axis(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = _as_tensor(x)
    shape = x.shape
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit(np.asarray(out, dtype=np.float64), (x,), backward)


def mean_axis(x, axis=None, keepdims: bool = False) -> DiffTensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.values.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = math.prod(x.shape[a] for a in axes)
    return scale(sum_axis(x, axis, keepdims), 1.0 / n)


def reduce(op_kind: str, x) -> DiffTensor:
    """``sum`` and ``mean`` give a scalar; ``row_mean`` gives a column vector."""
    if op_kind == "sum":
        return sum_axis(x)
    if op_kind == "mean":
        return mean_axis(x)
    if op_kind == "row_mean":
        return mean_axis(x, axis=-1, keepdims=True)
    raise ValueError(f"unknown reduction {op_kind!r}")


# ---------------------------------------------------------------------------
# Gradient routing
# ---------------------------------------------------------------------------


def stop_gradient(x) -> DiffTensor:
    x = _as_tensor(x)
    return constant(x.values)


def straight_through_step(x, temperature: float = 1.0) -> DiffTensor:
    """Forward: 1 where x > 0 else 0. Backward: derivative of sigmoid(x / temperature)."""
    x = _as_tensor(x)
    s = _sigmoid(x.values / temperature)
    hard = (x.values > 0).astype(np.float64)
    return _emit(hard, (x,), lambda g: (g * s * (1.0 - s) / temperature,))


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


def _param_list(params) -> list[DiffTensor]:
    if isinstance(params, Mapping):
        return list(params.values())
    if isinstance(params, DiffTensor):
        return [params]
    return list(params)


def grad_check(
    f: Callable[[], DiffTensor],
    params,
    step: float = 1e-5,
    entries: Sequence[tuple[int, tuple[int, ...]]] | None = None,
) -> float:
    """Largest relative disagreement between taped and central-difference gradients.

    ``f`` rebuilds the scalar from the current values of ``params`` each call.
    The error per coordinate is ``|a - c| / max(1, |a|, |c|)``. ``entries``
    restricts the probe to ``(param_index, multi_index)`` pairs.
    """
    plist = _param_list(params)
    for p in plist:
        p.zero_grad()
    with Tape() as tape:
        root = f()
    tape.backward(root)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in plist]

    def probe() -> float:
        v = f().item()
        if not math.isfinite(v):
            raise EvaluationError("function is not finite at a probe point")
        return v

    if entries is None:
        entries = [(k, idx) for k, p in enumerate(plist) for idx in np.ndindex(p.shape)]
    worst = 0.0
    for k, idx in entries:
        vals = plist[k].values
        orig = vals[idx]
        vals[idx] = orig + step
        fp = probe()
        vals[idx] = orig - step
        fm = probe()
        vals[idx] = orig
        c = (fp - fm) / (2.0 * step)
        a = float(analytic[k][idx])
        worst = max(worst, abs(a - c) / max(1.0, abs(a), abs(c)))
    return worst
