"""Differentiable primitives over :class:`Tensor`.

Elementwise operations accept equal shapes or a broadcast over the leading batch
dimension (``(n, *s)`` with ``s``); anything richer is rejected.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cmml_cli.engine.tensor import BackwardFn, Tape, Tensor
from cmml_cli.utils.exceptions import ShapeError, TapeError, ValidationError

Shape = Tuple[int, ...]


def as_tensor(value: Union[Tensor, float, int, np.ndarray], shape: Shape) -> Tensor:
    """Wrap python scalars as constants of ``shape``; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    if np.ndim(value) == 0:
        return full(shape, float(value))
    return Tensor(value)


def constant(values) -> Tensor:
    return Tensor(values)


def full(shape: Shape, value: float) -> Tensor:
    return Tensor._from_op(np.full(shape, value, dtype=np.float64), "full")


def zeros(shape: Shape) -> Tensor:
    return full(shape, 0.0)


def ones(shape: Shape) -> Tensor:
    return full(shape, 1.0)


def _common_tape(kind: str, inputs: Sequence[Tensor]) -> Optional[Tape]:
    tape: Optional[Tape] = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is not None and t.tape is not tape:
            raise TapeError(f"{kind}: inputs belong to different tapes")
        tape = t.tape
    if tape is not None and tape.consumed:
        raise TapeError(f"{kind}: tape is stale, run a new forward pass on a fresh tape")
    return tape


def _emit(kind: str, values: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    tape = _common_tape(kind, inputs)
    if tape is None:
        return Tensor._from_op(values, kind)
    return tape.record(kind, values, inputs, backward)


def _conform(kind: str, a: Shape, b: Shape) -> Shape:
    if a == b:
        return a
    if len(a) == len(b) + 1 and a[1:] == b:
        return a
    if len(b) == len(a) + 1 and b[1:] == a:
        return b
    raise ShapeError(
        f"{kind}: shapes {a} and {b} do not conform (equal or leading-batch broadcast)"
    )


def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _conform("add", a.shape, b.shape)
    return _emit(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _conform("sub", a.shape, b.shape)
    return _emit(
        "sub",
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _conform("elementwise_mul", a.shape, b.shape)
    return _emit(
        "elementwise_mul",
        a.values * b.values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D, batched 3-D @ 3-D, or 3-D @ 2-D shared right operand."""
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or (a.ndim == 2 and b.ndim == 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ in {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch dimensions differ in {a.shape} @ {b.shape}")

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.values, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.values, -1, -2), g)
        if b.ndim == 2 and grad_b.ndim == 3:
            grad_b = grad_b.sum(axis=0)
        return grad_a, grad_b

    return _emit("matmul", np.matmul(a.values, b.values), (a, b), backward)


def concat(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not inputs:
        raise ShapeError("concat: empty input set")
    ndim = inputs[0].ndim
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    reference = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != ndim or any(t.shape[i] != reference[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {reference} and {t.shape} differ off axis {ax}")
    sizes = [t.shape[ax] for t in inputs]
    splits = np.cumsum(sizes)[:-1]
    return _emit(
        "concat",
        np.concatenate([t.values for t in inputs], axis=ax),
        tuple(inputs),
        lambda g: np.split(g, splits, axis=ax),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _emit("relu", np.maximum(x.values, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax_columns(x: Tensor) -> Tensor:
    """Softmax over axis -2, so every column of every trailing matrix sums to 1."""
    if x.ndim < 2:
        raise ShapeError(f"softmax_columns: needs a matrix, got shape {x.shape}")
    shifted = x.values - x.values.max(axis=-2, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-2, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-2, keepdims=True)),)

    return _emit("softmax_columns", out, (x,), backward)


def mean_pool_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"mean_pool_rows: needs a matrix, got shape {x.shape}")
    n = x.shape[0]
    return _emit(
        "mean_pool_rows",
        x.values.mean(axis=0),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
    )


def max_pool_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"max_pool_rows: needs a matrix, got shape {x.shape}")
    rows = x.values.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        grad = np.zeros(x.shape)
        grad[rows, cols] = g
        return (grad,)

    return _emit("max_pool_rows", x.values[rows, cols], (x,), backward)


def _reduce_backward(g: np.ndarray, shape: Shape, axis: Optional[int], scale: float) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g * scale, shape).copy()


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out = np.asarray(x.values.sum(axis=axis))
    return _emit("sum", out, (x,), lambda g: (_reduce_backward(g, x.shape, axis, 1.0),))


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    out = np.asarray(x.values.mean(axis=axis))
    return _emit("mean", out, (x,), lambda g: (_reduce_backward(g, x.shape, axis, 1.0 / count),))


def reshape(x: Tensor, shape: Shape) -> Tensor:
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return _emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    ax = axis + x.ndim if axis < 0 else axis
    if idx.size == 0:
        raise ShapeError("take: empty index set")
    if idx.min() < 0 or idx.max() >= x.shape[ax]:
        raise ShapeError(f"take: index out of range for axis {axis} of size {x.shape[ax]}")

    def backward(g):
        grad = np.zeros(x.shape)
        np.add.at(np.moveaxis(grad, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (grad,)

    return _emit("take", np.take(x.values, idx, axis=ax), (x,), backward)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a matrix."""
    return take(x, np.arange(start, stop), axis=1)


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a vector into an ``(n, d)`` matrix."""
    if x.ndim != 1:
        raise ShapeError(f"repeat_rows: needs a vector, got shape {x.shape}")
    return take(reshape(x, (1, x.shape[0])), np.zeros(n, dtype=np.intp), axis=0)


_BINARY: Dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise_mul": mul,
}
_UNARY: Dict[str, Callable[..., Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax_columns": softmax_columns,
    "mean_pool_rows": mean_pool_rows,
    "max_pool_rows": max_pool_rows,
    "sum": sum,
    "mean": mean,
}
KINDS: List[str] = [*_BINARY, "concat", *_UNARY]


def forward_op(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """Apply the primitive named ``kind`` to ``inputs``."""
    if not inputs:
        raise ShapeError(f"{kind}: empty input set")
    if kind == "concat":
        return concat(list(inputs), **attrs)
    if kind in _BINARY:
        if len(inputs) != 2:
            raise ShapeError(f"{kind}: expects 2 inputs, got {len(inputs)}")
        return _BINARY[kind](*inputs)
    if kind in _UNARY:
        if len(inputs) != 1:
            raise ShapeError(f"{kind}: expects 1 input, got {len(inputs)}")
        return _UNARY[kind](inputs[0], **attrs)
    raise ValidationError(f"Unknown operation '{kind}'. Must be one of: {', '.join(KINDS)}")
