"""Tensor type, the gradient tape and reverse-mode backpropagation.

Ops append a :class:`Node` to the current thread's :class:`Tape` whenever
any of their inputs requires a gradient. Because nodes are appended in
execution order the tape is already topologically sorted, and
:func:`backward` simply walks it in reverse, visiting each node once.
"""

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import NonScalarLoss, ShapeMismatch

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "current_tape",
    "use_tape",
    "no_grad",
    "is_grad_enabled",
    "record",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "add_constant",
    "tsum",
    "square",
    "linear_map",
]


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Leaves are tensors constructed directly; op outputs are not leaves and
    never hold a ``grad`` of their own.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_is_leaf", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._is_leaf = True

    @classmethod
    def _result(cls, data, requires_grad):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._is_leaf = not requires_grad
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._is_leaf

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{flag}{label})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_constant(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_constant(self, -np.asarray(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return tsum(self)


class Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def append(self, node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()


_state = threading.local()


def _local():
    if not hasattr(_state, "tape"):
        _state.tape = Tape()
        _state.enabled = True
    return _state


def current_tape():
    return _local().tape


@contextmanager
def use_tape(tape):
    """Record ops onto ``tape`` inside the block."""
    st = _local()
    prev = st.tape
    st.tape = tape
    try:
        yield tape
    finally:
        st.tape = prev


@contextmanager
def no_grad():
    st = _local()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


def is_grad_enabled():
    return _local().enabled


def record(data, inputs, vjp):
    """Wrap ``data`` as an op output, recording it if any input needs a grad.

    ``vjp(g)`` must return one gradient (or ``None``) per entry of
    ``inputs``.
    """
    st = _local()
    needs = st.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._result(data, needs)
    if needs:
        st.tape.append(Node(out, tuple(inputs), vjp))
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` and clear the tape."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        tape.clear()
        return
    pending = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    tape.clear()


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b):
    _same_shape(a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c):
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def add_constant(a, c):
    c = np.asarray(c, dtype=np.float64)
    return record(a.data + c, (a,), lambda g: (g,))


def tsum(a):
    shape = a.shape
    return record(np.sum(a.data), (a,), lambda g: (np.full(shape, g),))


def square(a):
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def linear_map(x, forward, adjoint):
    """Apply a fixed linear operator given as a forward/adjoint function pair."""
    return record(forward(x.data), (x,), lambda g: (adjoint(g),))
