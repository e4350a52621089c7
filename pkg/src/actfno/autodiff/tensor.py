"""Dense float64 tensors with a reverse-mode autodiff tape."""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Raised on misuse of the computation graph (double backward, non-scalar loss)."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class Node:
    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A float64 array that optionally records how it was computed.

    Leaves created by the user carry ``node=None``. Results of differentiable
    ops carry a :class:`Node` pointing back at their inputs while any input
    requires a gradient.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, node=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        return ops.permute(self, axes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_result(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of ``op``.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    parent. The node is only recorded if some parent needs a gradient.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, node=Node(op, tuple(parents), backward_fn))


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss, inputs=()):
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Gradients accumulate into existing ``.grad`` buffers. Leaves listed in
    ``inputs`` that are unreachable from ``loss`` receive zeros. The graph is
    released afterwards, so a second call on the same loss raises.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    if loss.node is None and getattr(loss, "_released", False):
        raise GraphError("graph already released by a previous backward call")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise GraphError(f"{t.node.op}: gradient shape {pg.shape} != {p.data.shape}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    for t in order:
        if t.node is not None:
            t.node = None
            t._released = True
    for x in inputs:
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
