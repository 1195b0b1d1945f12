"""Dense float64 tensor with a reverse-mode tape.

Every differentiable operation appends a :class:`TapeNode` carrying a global,
monotonically increasing sequence number.  ``backward`` gathers the nodes that
are reachable from the loss and replays them in strictly decreasing sequence
order, i.e. the exact reverse of the forward recording order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NotScalar

_sequence = itertools.count()
_grad_enabled = True


class TapeNode:
    __slots__ = ("op", "inputs", "backward_fn", "seq", "out_id")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable, out_id: int):
        self.op = op
        self.inputs = tuple(inputs)
        # backward_fn(grad_out) -> one gradient (or None) per input
        self.backward_fn = backward_fn
        self.seq = next(_sequence)
        self.out_id = out_id

    def __repr__(self):
        return f"TapeNode({self.op}, seq={self.seq})"


class Tensor:
    """A float64 array that optionally accumulates a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self.node: Optional[TapeNode] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` in a Tensor and append a tape node when needed."""
    out = Tensor.__new__(Tensor)
    out.data = out_data if out_data.dtype == np.float64 else out_data.astype(np.float64)
    out.grad = None
    out.node = None
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out.node = TapeNode(op, inputs, backward_fn, id(out))
    return out


def _collect(loss: Tensor) -> list:
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t.node
        if node is None or node.seq in seen:
            continue
        seen.add(node.seq)
        nodes.append(node)
        stack.extend(node.inputs)
    nodes.sort(key=lambda n: n.seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor reachable from ``loss``.

    Gradients accumulate across calls; zero them first to start fresh.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for node in _collect(loss):
        g_out = grads.get(node.out_id)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                owners[key] = inp
    for key, g in grads.items():
        t = owners[key]
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64).reshape(t.data.shape)
        else:
            t.grad = t.grad + np.reshape(g, t.data.shape)
