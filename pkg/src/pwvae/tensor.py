"""Dense float64 tensors with taped reverse-mode differentiation.

Operations execute eagerly on numpy arrays.  Inside a ``with Tape():``
block every operation additionally records a backward rule; calling
``Tape.backward`` on a scalar result then accumulates gradients for every
tensor that participated, visiting operations in exact reverse execution
order.  Outside a tape the same functions are plain forward computations.

Tensors are immutable once created and a tape is rebuilt for every
forward pass, so independent tapes may run concurrently over disjoint
data (the active-tape stack is thread local).
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "as_tensor",
    "custom_op",
    "add",
    "sub",
    "mul",
    "div",
    "scale_shift",
    "matvec",
    "affine",
    "dot",
    "sum_all",
    "concat",
    "exp_clamped",
    "log",
    "sqrt",
    "softplus",
    "softsign",
    "prelu",
    "log_softmax",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class TapeError(RuntimeError):
    """Tape used outside its contract (non-scalar root, repeated backward)."""


class Tensor:
    """Immutable dense array of 64-bit floats."""

    __slots__ = ("data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.data.shape} is not scalar")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # Arithmetic sugar; Tensor-Tensor ops require identical shapes,
    # python scalars broadcast elementwise.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scale_shift(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return scale_shift(self, 1.0, -float(other))

    def __rsub__(self, other):
        return scale_shift(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale_shift(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale_shift(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return scale_shift(self, -1.0, 0.0)


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


def _wrap(values: np.ndarray) -> Tensor:
    """Wrap an array we own without copying it."""
    t = Tensor.__new__(Tensor)
    arr = np.asarray(values, dtype=np.float64)
    arr.flags.writeable = False
    t.data = arr
    return t


_LOCAL = threading.local()


def _stack() -> list:
    try:
        return _LOCAL.stack
    except AttributeError:
        _LOCAL.stack = []
        return _LOCAL.stack


def _active():
    s = _stack()
    return s[-1] if s else None


def _record(out: Tensor, inputs, backward) -> None:
    tape = _active()
    if tape is not None:
        tape._records.append((out, inputs, backward))


class Tape:
    """Ordered record of executed operations for one forward pass.

    Gradient slots are keyed by tensor identity; tensors that never
    contributed to the backward root read back as zero gradients.
    A tape supports exactly one ``backward`` call.
    """

    def __init__(self):
        self._records = []
        self._grads = None

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise TapeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def backward(self, root: Tensor) -> None:
        if self._grads is not None:
            raise TapeError("backward already ran on this tape; higher-order gradients are unsupported")
        if root.data.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.data.shape}")
        grads: dict[Tensor, np.ndarray] = {root: np.ones_like(root.data)}
        for out, inputs, backward in reversed(self._records):
            g = grads.get(out)
            if g is None:
                continue
            for tensor, gi in zip(inputs, backward(g)):
                if gi is None:
                    continue
                acc = grads.get(tensor)
                if acc is None:
                    # Copy: backward rules may hand back views of g itself.
                    grads[tensor] = np.array(gi, dtype=np.float64)
                else:
                    acc += gi
        self._grads = grads

    def grad(self, t: Tensor) -> np.ndarray:
        if self._grads is None:
            raise TapeError("backward has not run on this tape")
        g = self._grads.get(t)
        return np.zeros_like(t.data) if g is None else g


def custom_op(values, inputs, backward) -> Tensor:
    """Wrap externally computed values as one taped operation.

    ``backward`` maps the output gradient to a tuple of input gradients
    aligned with ``inputs``.
    """
    out = _wrap(np.asarray(values, dtype=np.float64))
    _record(out, tuple(inputs), backward)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = _wrap(a.data + b.data)
    _record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = _wrap(a.data - b.data)
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    out = _wrap(ad * bd)
    _record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = _wrap(ad / bd)
    _record(out, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))
    return out


def scale_shift(x: Tensor, scale: float, shift: float) -> Tensor:
    """Elementwise scale*x + shift for python-float scale and shift."""
    out = _wrap(x.data * scale + shift)
    _record(out, (x,), lambda g: (g * scale,))
    return out


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: matrix {w.data.shape} does not conform with vector {x.data.shape}")
    wd, xd = w.data, x.data
    out = _wrap(wd @ xd)
    _record(out, (w, x), lambda g: (np.outer(g, xd), wd.T @ g))
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for matrix w (k, m), vectors x (m,) and b (k,)."""
    return add(matvec(w, x), b)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"dot: expected vectors, got {a.data.shape} and {b.data.shape}")
    _same_shape(a, b, "dot")
    ad, bd = a.data, b.data
    out = _wrap(np.asarray(ad @ bd))
    _record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def sum_all(x: Tensor) -> Tensor:
    xd = x.data
    out = _wrap(np.asarray(xd.sum()))
    _record(out, (x,), lambda g: (g * np.ones_like(xd),))
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"concat: expected vectors, got {a.data.shape} and {b.data.shape}")
    na = a.data.shape[0]
    out = _wrap(np.concatenate([a.data, b.data]))
    _record(out, (a, b), lambda g: (g[:na], g[na:]))
    return out


def exp_clamped(x: Tensor, lo: float = -30.0, hi: float = 30.0) -> Tensor:
    """exp of x clamped to [lo, hi]; gradient is zero outside the clamp range."""
    xd = x.data
    out_data = np.exp(np.clip(xd, lo, hi))
    inside = (xd >= lo) & (xd <= hi)
    out = _wrap(out_data)
    _record(out, (x,), lambda g: (g * out_data * inside,))
    return out


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = _wrap(np.log(xd))
    _record(out, (x,), lambda g: (g / xd,))
    return out


def sqrt(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd < 0.0):
        raise ValueError("sqrt: input must be non-negative")
    out_data = np.sqrt(xd)
    out = _wrap(out_data)
    _record(out, (x,), lambda g: (g * 0.5 / out_data,))
    return out


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x: Tensor) -> Tensor:
    """Elementwise log(1 + exp(x)), overflow safe; derivative is the sigmoid."""
    xd = x.data
    out = _wrap(np.logaddexp(0.0, xd))
    _record(out, (x,), lambda g: (g * _sigmoid(xd),))
    return out


def softsign(x: Tensor) -> Tensor:
    """Elementwise v / (1 + |v|); derivative 1 / (1 + |v|)^2."""
    xd = x.data
    denom = 1.0 + np.abs(xd)
    out = _wrap(xd / denom)
    _record(out, (x,), lambda g: (g / (denom * denom),))
    return out


def prelu(x: Tensor, leak: Tensor) -> Tensor:
    """Elementwise x if x > 0 else leak*x; at exactly 0 the derivative is 1.

    ``leak`` is either a single learnable value or one value per element.
    """
    xd, ld = x.data, leak.data
    if ld.shape != xd.shape and ld.size != 1:
        raise ShapeError(f"prelu: leak shape {ld.shape} does not match input shape {xd.shape}")
    lk = ld if ld.shape == xd.shape else float(ld.reshape(()))
    out = _wrap(np.where(xd > 0, xd, lk * xd))

    def backward(g):
        gx = g * np.where(xd >= 0, 1.0, lk)
        gl = g * np.where(xd < 0, xd, 0.0)
        if ld.shape != xd.shape:
            gl = np.asarray(gl.sum()).reshape(ld.shape)
        return (gx, gl)

    _record(out, (x, leak), backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Log-probabilities of a logit vector, stabilised by max subtraction."""
    xd = x.data
    if xd.ndim != 1:
        raise ShapeError(f"log_softmax: expected a vector, got shape {xd.shape}")
    if not np.all(np.isfinite(xd)):
        raise ValueError("log_softmax: logits must be finite")
    shifted = xd - xd.max()
    out_data = shifted - np.log(np.exp(shifted).sum())
    out = _wrap(out_data)
    _record(out, (x,), lambda g: (g - np.exp(out_data) * g.sum(),))
    return out
