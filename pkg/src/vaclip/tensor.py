"""Dense float64 tensors with taped reverse-mode gradients.

The engine is deliberately small: a :class:`Tensor` wraps a numpy array, and
every differentiable operation appends one backward closure to the active
:class:`GradientTape`. Because graphs here are built by sequentially unrolling
solver loops, the recording order is already a topological order, so the
backward pass simply walks the record list once in reverse.

Plain numpy arrays and python floats mix freely with tensors; they are treated
as constants and receive no gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

__all__ = ["Tensor", "GradientTape", "backward", "value", "concat", "stack"]


def value(x):
    """Raw numpy value of ``x`` whether it is a Tensor or a plain array/scalar."""
    return x.data if isinstance(x, Tensor) else x


def _tape_of(*xs):
    """The unique live tape among the tensor arguments (None if all constant)."""
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ContractError("operands recorded on different tapes")
    return tape


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _acc(t, g):
    # Never mutate gradient arrays in place: backward closures may hand the
    # same array object to several parents.
    t.grad = g if t.grad is None else t.grad + g


class GradientTape:
    """Records operations for one reverse pass.

    Attributes:
        _records: backward closures in execution order.
        _watched: leaf parameter tensors, in watch order.
    """

    def __init__(self):
        self._records = []
        self._watched = []

    def record(self, backward_fn):
        self._records.append(backward_fn)

    def watch(self, array, name=None):
        """Register a parameter array; returns its leaf tensor."""
        t = Tensor(array, tape=self)
        t.name = name
        self._watched.append(t)
        return t

    def watch_all(self, arrays):
        return [self.watch(a) for a in arrays]

    @property
    def watched(self):
        return list(self._watched)

    def num_records(self):
        return len(self._records)


def backward(tape: GradientTape, loss: "Tensor"):
    """Reverse pass from a scalar loss; returns one gradient per watched parameter.

    Each recorded op is visited exactly once, in reverse recording order.
    Unused parameters get zero gradients.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ContractError("loss must be a tensor recorded on this tape")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(tape._records):
        fn()
    return [
        p.grad if p.grad is not None else np.zeros_like(p.data)
        for p in tape._watched
    ]


class Tensor:
    """A float64 numpy array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "tape", "name")
    __array_ufunc__ = None  # numpy must defer to our reflected operators

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.name = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={'yes' if self.tape else 'no'})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, other
        out = Tensor(a.data + value(b), tape=_tape_of(a, b))
        if out.tape is not None:
            def bwd():
                if out.grad is None:
                    return
                if a.tape is not None:
                    _acc(a, _unbroadcast(out.grad, a.data.shape))
                if isinstance(b, Tensor) and b.tape is not None:
                    _acc(b, _unbroadcast(out.grad, b.data.shape))
            out.tape.record(bwd)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, other
        out = Tensor(a.data - value(b), tape=_tape_of(a, b))
        if out.tape is not None:
            def bwd():
                if out.grad is None:
                    return
                if a.tape is not None:
                    _acc(a, _unbroadcast(out.grad, a.data.shape))
                if isinstance(b, Tensor) and b.tape is not None:
                    _acc(b, _unbroadcast(-out.grad, b.data.shape))
            out.tape.record(bwd)
        return out

    def __rsub__(self, other):
        a = self
        out = Tensor(value(other) - a.data, tape=_tape_of(a))
        if out.tape is not None:
            def bwd():
                if out.grad is not None:
                    _acc(a, _unbroadcast(-out.grad, a.data.shape))
            out.tape.record(bwd)
        return out

    def __neg__(self):
        a = self
        out = Tensor(-a.data, tape=_tape_of(a))
        if out.tape is not None:
            def bwd():
                if out.grad is not None:
                    _acc(a, -out.grad)
            out.tape.record(bwd)
        return out

    def __mul__(self, other):
        a, b = self, other
        bval = value(b)
        out = Tensor(a.data * bval, tape=_tape_of(a, b))
        if out.tape is not None:
            aval = a.data
            def bwd():
                if out.grad is None:
                    return
                if a.tape is not None:
                    _acc(a, _unbroadcast(out.grad * bval, a.data.shape))
                if isinstance(b, Tensor) and b.tape is not None:
                    _acc(b, _unbroadcast(out.grad * aval, b.data.shape))
            out.tape.record(bwd)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, other
        bval = value(b)
        out = Tensor(a.data / bval, tape=_tape_of(a, b))
        if out.tape is not None:
            aval = a.data
            def bwd():
                if out.grad is None:
                    return
                if a.tape is not None:
                    _acc(a, _unbroadcast(out.grad / bval, a.data.shape))
                if isinstance(b, Tensor) and b.tape is not None:
                    _acc(b, _unbroadcast(-out.grad * aval / (bval * bval),
                                         b.data.shape))
            out.tape.record(bwd)
        return out

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents are supported")
        a = self
        out = Tensor(a.data ** p, tape=_tape_of(a))
        if out.tape is not None:
            aval = a.data
            def bwd():
                if out.grad is not None:
                    _acc(a, out.grad * (p * aval ** (p - 1)))
            out.tape.record(bwd)
        return out

    def __matmul__(self, other):
        a, b = self, other
        aval, bval = a.data, value(b)
        if aval.ndim != 2 or bval.ndim != 2:
            raise DimensionError(
                f"matmul expects 2-D operands, got {aval.shape} @ {bval.shape}")
        out = Tensor(aval @ bval, tape=_tape_of(a, b))
        if out.tape is not None:
            def bwd():
                if out.grad is None:
                    return
                if a.tape is not None:
                    _acc(a, out.grad @ bval.T)
                if isinstance(b, Tensor) and b.tape is not None:
                    _acc(b, aval.T @ out.grad)
            out.tape.record(bwd)
        return out

    def __rmatmul__(self, other):
        b = self
        aval = value(other)
        if aval.ndim != 2 or b.data.ndim != 2:
            raise DimensionError("matmul expects 2-D operands")
        out = Tensor(aval @ b.data, tape=_tape_of(b))
        if out.tape is not None:
            def bwd():
                if out.grad is not None:
                    _acc(b, aval.T @ out.grad)
            out.tape.record(bwd)
        return out

    # -- shaping ------------------------------------------------------------

    def __getitem__(self, idx):
        a = self
        out = Tensor(a.data[idx], tape=_tape_of(a))
        if out.tape is not None:
            def bwd():
                if out.grad is not None:
                    g = np.zeros_like(a.data)
                    g[idx] = out.grad
                    _acc(a, g)
            out.tape.record(bwd)
        return out

    def reshape(self, *shape):
        a = self
        out = Tensor(a.data.reshape(*shape), tape=_tape_of(a))
        if out.tape is not None:
            def bwd():
                if out.grad is not None:
                    _acc(a, out.grad.reshape(a.data.shape))
            out.tape.record(bwd)
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None):
        a = self
        out = Tensor(a.data.sum(axis=axis), tape=_tape_of(a))
        if out.tape is not None:
            def bwd():
                if out.grad is None:
                    return
                g = out.grad
                if axis is not None:
                    g = np.expand_dims(g, axis)
                _acc(a, np.broadcast_to(g, a.data.shape).copy())
            out.tape.record(bwd)
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- pointwise functions --------------------------------------------------

    def exp(self):
        a = self
        out = Tensor(np.exp(a.data), tape=_tape_of(a))
        if out.tape is not None:
            oval = out.data
            def bwd():
                if out.grad is not None:
                    _acc(a, out.grad * oval)
            out.tape.record(bwd)
        return out

    def abs(self):
        a = self
        out = Tensor(np.abs(a.data), tape=_tape_of(a))
        if out.tape is not None:
            sgn = np.sign(a.data)
            def bwd():
                if out.grad is not None:
                    _acc(a, out.grad * sgn)
            out.tape.record(bwd)
        return out


def concat(parts, axis=0):
    """Concatenate tensors/arrays; gradient flows only into tensor parts."""
    datas = [value(p) for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis), tape=_tape_of(*parts))
    if out.tape is not None:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)
        def bwd():
            if out.grad is None:
                return
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if isinstance(part, Tensor) and part.tape is not None:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    _acc(part, out.grad[tuple(sl)])
        out.tape.record(bwd)
    return out


def stack(parts, axis=0):
    """Stack tensors/arrays along a new axis; gradients split back per part."""
    datas = [value(p) for p in parts]
    out = Tensor(np.stack(datas, axis=axis), tape=_tape_of(*parts))
    if out.tape is not None:
        def bwd():
            if out.grad is None:
                return
            for k, part in enumerate(parts):
                if isinstance(part, Tensor) and part.tape is not None:
                    _acc(part, np.take(out.grad, k, axis=axis))
        out.tape.record(bwd)
    return out
