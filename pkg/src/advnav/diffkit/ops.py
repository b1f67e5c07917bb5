"""Differentiable primitives.

Every op accepts nodes or plain arrays/scalars (treated as constants) and
returns a node on the tape of its node arguments. Broadcasting follows numpy
rules; cotangents are summed back to each input's shape.
"""
from __future__ import annotations

import numpy as np

from advnav.diffkit.tape import Node, ShapeError, Tape


def _tape_of(*xs) -> Tape:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
    if tape is None:
        raise TypeError("at least one operand must be a Node")
    return tape


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _binary(op, a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(op, a, b)
    return tape, a, b


def add(a, b) -> Node:
    tape, a, b = _binary("add", a, b)
    return tape.record(
        a.value + b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        ),
    )


def sub(a, b) -> Node:
    tape, a, b = _binary("sub", a, b)
    return tape.record(
        a.value - b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        ),
    )


def mul(a, b) -> Node:
    tape, a, b = _binary("mul", a, b)
    return tape.record(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Node:
    tape, a, b = _binary("div", a, b)
    out = a.value / b.value
    return tape.record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.value, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a: Node) -> Node:
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def square(a: Node) -> Node:
    return a.tape.record(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return a.tape.record(out, (a,), lambda g: (g / (2.0 * out),))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape.record(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape.record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Node) -> Node:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record(out, (a,), lambda g: (g * out * (1.0 - out),))


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
        return ga, gb

    return tape.record(out, (a, b), vjp)


def affine(x, W: Node, b: Node) -> Node:
    """``x @ W + b`` with ``W`` of shape (in, out) and ``b`` of shape (out,)."""
    tape = _tape_of(x, W, b)
    x, W, b = _lift(tape, x), _lift(tape, W), _lift(tape, b)
    if W.ndim != 2 or b.shape != (W.shape[1],) or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: incompatible shapes x{x.shape}, W{W.shape}, b{b.shape}")
    out = x.value @ W.value + b.value

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ W.value.T) if x.requires_grad else None
        gW = (x.value.reshape(-1, W.shape[0]).T @ g2) if W.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb

    return tape.record(out, (x, W, b), vjp)


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    out = np.sum(a.value, axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return a.tape.record(np.asarray(out), (a,), vjp)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max(a: Node, axis: int = -1) -> Node:  # noqa: A001
    """Max along one axis; the cotangent goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)

    def vjp(g):
        z = np.zeros_like(a.value)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return a.tape.record(out, (a,), vjp)


def softmax(a: Node, axis: int = -1) -> Node:
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return a.tape.record(out, (a,), lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),))


def norm(a: Node, axis: int = -1) -> Node:
    """Euclidean norm along ``axis``; the subgradient at the origin is zero."""
    n = np.sqrt(np.sum(a.value * a.value, axis=axis))
    safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        return (np.expand_dims(np.where(n > 0, g / safe, 0.0), axis) * a.value,)

    return a.tape.record(n, (a,), vjp)


def cumsum(a: Node, axis: int = 0) -> Node:
    return a.tape.record(
        np.cumsum(a.value, axis=axis),
        (a,),
        lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),),
    )


def concat(xs, axis: int = -1) -> Node:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} along axis {axis}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record(out, xs, vjp)


def stack(xs, axis: int = 0) -> Node:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    try:
        out = np.stack([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[x.shape for x in xs]}") from None
    return tape.record(out, xs, lambda g: tuple(np.moveaxis(g, axis, 0)))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Node, idx) -> Node:
    try:
        out = a.value[idx]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None
    basic = _is_basic(idx)

    def vjp(g):
        z = np.zeros_like(a.value)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return a.tape.record(np.asarray(out), (a,), vjp)


slice_ = getitem


def reshape(a: Node, shape) -> Node:
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return a.tape.record(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Node, i: int, j: int) -> Node:
    return a.tape.record(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))
