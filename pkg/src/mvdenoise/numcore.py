"""Dense float64 tensors with reverse-mode gradient accumulation.

Ops executed while a Tape is active record a backward rule onto it;
``Tape.backward(loss)`` replays the rules in reverse execution order and
accumulates d(loss)/d(tensor) into each tensor's ``grad`` slot.  With no
active tape, ops run forward-only (inference mode).

No implicit broadcasting: binary ops require equal shapes, scalar scaling
goes through ``scale``.  Everything is float64; tolerances elsewhere in the
package assume it.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A dense real array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar; scalars route through scale()
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of executed ops and their backward rules.

    Append order is execution order, so the reverse is a valid
    topological order for backpropagation.  A tensor produced under one
    tape must not be consumed under a different one.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def clear(self):
        """Drop all recorded ops; a cleared tape contributes no gradients."""
        self._nodes.clear()

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor feeding loss.

        Gradients of intermediate (op-output) tensors are reset first, so
        calling backward again re-adds exactly the same gradients to leaf
        tensors (parameters); the trainer zeroes parameter grads between
        batches.
        """
        if loss.data.shape != ():
            raise DimensionError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        for out, _ in self._nodes:
            out.grad = None
        loss.grad = np.ones(())
        for out, bwd in reversed(self._nodes):
            if out.grad is not None:
                bwd(out.grad)


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, bwd) -> Tensor:
    if _TAPE_STACK:
        _TAPE_STACK[-1]._nodes.append((out, bwd))
    return out


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = np.zeros(t.data.shape)
    t.grad += g


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; accepts 2D@2D, 2D@1D and 1D@2D (use dot for 1D@1D)."""
    ad, bd = a.data, b.data
    if ad.ndim == 1 and bd.ndim == 1:
        raise DimensionError("matmul does not take two vectors; use dot")
    if ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {ad.shape} vs {bd.shape}")
    out = Tensor(ad @ bd)

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 2:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)
        else:  # 1D @ 2D
            _accum(a, bd @ g)
            _accum(b, np.outer(ad, g))

    return _record(out, bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two equal-length vectors; returns a scalar tensor."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(f"dot needs equal-length vectors: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, bwd)


# ---------------------------------------------------------------------------
# elementwise

def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    out = Tensor(a.data / b.data)

    def bwd(g):
        _accum(a, g / b.data)
        _accum(b, -g * out.data / b.data)

    return _record(out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (the one permitted broadcast)."""
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        _accum(a, g * c)

    return _record(out, bwd)


def vsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(a.data.sum())

    def bwd(g):
        _accum(a, g)  # scalar g broadcasts over a's shape

    return _record(out, bwd)


# ---------------------------------------------------------------------------
# structural ops

def row(a: Tensor, i: int) -> Tensor:
    """Row i of a 2D tensor as a vector."""
    if a.data.ndim != 2:
        raise DimensionError(f"row needs a 2D tensor, got shape {a.shape}")
    out = Tensor(a.data[i].copy())

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape)
        a.grad[i] += g

    return _record(out, bwd)


def stack(rows: list[Tensor]) -> Tensor:
    """Stack equal-length vectors into a 2D tensor, one per row."""
    if not rows:
        raise DimensionError("stack needs at least one row")
    n = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != n:
            raise DimensionError("stack rows must be equal-length vectors")
    out = Tensor(np.stack([r.data for r in rows]))

    def bwd(g):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _record(out, bwd)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two vectors."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(f"concat needs vectors: {a.shape} vs {b.shape}")
    na = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data]))

    def bwd(g):
        _accum(a, g[:na])
        _accum(b, g[na:])

    return _record(out, bwd)


# ---------------------------------------------------------------------------
# activations

def _softplus(v):
    # max(v,0) + log1p(e^-|v|): exact softplus, no overflow for large |v|
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def _sigmoid(v):
    z = np.exp(-np.abs(v))
    return np.where(v >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def _softplus_deriv(v):
    return _sigmoid(v)


def _sigmoid_deriv(v):
    s = _sigmoid(v)
    return s * (1.0 - s)


def _tanh_deriv(v):
    t = np.tanh(v)
    return 1.0 - t * t


ACTIVATIONS = {
    "softplus": (_softplus, _softplus_deriv),
    "sigmoid": (_sigmoid, _sigmoid_deriv),
    "tanh": (np.tanh, _tanh_deriv),
}


def activation(tag: str, a: Tensor) -> Tensor:
    """Apply the named pointwise nonlinearity (softplus, sigmoid or tanh)."""
    try:
        fn, deriv = ACTIVATIONS[tag]
    except KeyError:
        raise ValueError(f"unknown activation tag {tag!r}") from None
    vin = a.data
    out = Tensor(fn(vin))

    def bwd(g):
        _accum(a, g * deriv(vin))

    return _record(out, bwd)


def softplus(a: Tensor) -> Tensor:
    return activation("softplus", a)


def sigmoid(a: Tensor) -> Tensor:
    return activation("sigmoid", a)


def tanh(a: Tensor) -> Tensor:
    return activation("tanh", a)
