"""Tape-based reverse-mode differentiation over numpy arrays.

Nodes are appended to a :class:`Tape` in creation order, which is already a
topological order, so :meth:`Tape.backward` is a single reverse sweep.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_tape_ids = itertools.count()


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "parents", "vjp", "tape", "index", "param", "requires_grad", "__weakref__")

    # numpy should defer to Node's reflected operators
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, parents: tuple, vjp, tape: "Tape", param=None, requires_grad=None):
        self.value = value
        self.parents = parents
        self.tape = tape
        self.param = param
        if requires_grad is None:
            requires_grad = param is not None or any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.vjp = vjp if requires_grad else None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, tape={self.tape.id}, index={self.index})"

    def __add__(self, other):
        from advnav.diffkit import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from advnav.diffkit import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from advnav.diffkit import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from advnav.diffkit import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from advnav.diffkit import ops
        return ops.div(self, other)

    def __neg__(self):
        from advnav.diffkit import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from advnav.diffkit import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from advnav.diffkit import ops
        return ops.getitem(self, idx)


class Tape:
    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[Node] = []

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), (), None, self, requires_grad=False)

    def leaf(self, value, param=None) -> Node:
        return Node(np.asarray(value, dtype=np.float64), (), None, self, param, requires_grad=True)

    def record(self, value, parents: Sequence[Node], vjp: Callable) -> Node:
        """Append a node. ``vjp(g)`` maps the output cotangent to one cotangent
        per parent (``None`` for parents that need no gradient)."""
        return Node(value, tuple(parents), vjp, self)

    def backward(self, root: Node) -> dict:
        """Reverse sweep from a scalar root.

        Gradients of parameter leaves are *added* into their store's
        accumulators; the caller is responsible for zeroing. Returns the
        cotangent of every node reached, keyed by node index.
        """
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        if root.value.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads.get(node.index) if node.vjp is None else grads.pop(node.index, None)
            if g is None:
                continue
            if node.param is not None:
                store, name = node.param
                store.grads[name] += g
                continue
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or parent is None:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        return grads

    def grad_of(self, grads: dict, node: Node) -> np.ndarray:
        return grads.get(node.index, np.zeros_like(node.value))
