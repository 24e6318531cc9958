"""Dense tensor carried through a reverse-mode differentiation tape."""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from ..errors import ArgumentError, NonFiniteError, ShapeError

_seq = itertools.count()
_local = threading.local()


def _get(name, default):
    return getattr(_local, name, default)


def default_dtype():
    return _get("dtype", np.dtype(np.float32))


def grad_enabled():
    return _get("grad", True)


def finite_checks():
    return _get("finite", True)


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for new tensors (``"float32"`` or ``"float64"``)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ArgumentError(f"unsupported precision {dtype}")
    old = default_dtype()
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = old


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _local.grad = False
    try:
        yield
    finally:
        _local.grad = old


@contextlib.contextmanager
def check_finite(enabled=True):
    old = finite_checks()
    _local.finite = enabled
    try:
        yield
    finally:
        _local.finite = old


class Node:
    """One executed primitive: its inputs and a vector-Jacobian product."""

    __slots__ = ("op", "inputs", "vjp", "seq")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.seq = next(_seq)

    def __repr__(self):
        return f"Node({self.op!r}, seq={self.seq})"


class Tensor:
    """Immutable-by-convention array plus gradient bookkeeping.

    Parameters are the one exception: the optimizer swaps ``data`` for a new
    array after every step.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.array(data, dtype=dtype or default_dtype(), copy=True)
        if arr.size == 0 or any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must all be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @classmethod
    def _wrap(cls, arr, node=None):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = node is not None
        t.grad = None
        t.node = node
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise ArgumentError("tensor / tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make(op, out, inputs, vjp):
    """Wrap a primitive's output, recording a tape node when needed.

    ``vjp(g)`` must return one gradient (or None) per input.
    """
    if finite_checks() and not np.all(np.isfinite(out)):
        raise NonFiniteError(op)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor._wrap(out, Node(op, tuple(inputs), vjp))
    return Tensor._wrap(out)


class Tape:
    """Ops reachable from an output, in execution order."""

    def __init__(self, nodes):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @classmethod
    def from_output(cls, out):
        seen = set()
        found = []
        stack = [out]
        while stack:
            t = stack.pop()
            if t.node is None or id(t) in seen:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t.node.inputs)
        found.sort(key=lambda t: t.node.seq)
        tape = cls([t.node for t in found])
        tape._outputs = found
        return tape

    def replay_backward(self, seed_grad):
        """Propagate ``seed_grad`` from the last op back to leaf tensors."""
        if not self.nodes:
            return []
        outputs = self._outputs
        grads = {id(outputs[-1]): seed_grad}
        visited = []
        for t in reversed(outputs):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            visited.append(t.node)
            in_grads = t.node.vjp(g)
            for inp, gi in zip(t.node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if finite_checks() and not np.all(np.isfinite(gi)):
                    raise NonFiniteError(t.node.op, f"non-finite gradient from op '{t.node.op}'")
                if inp.node is None:
                    gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi
        return visited


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf."""
    if loss.data.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        return Tape([])
    tape = Tape.from_output(loss)
    tape.replay_backward(np.ones_like(loss.data))
    return tape
