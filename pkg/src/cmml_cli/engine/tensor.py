"""Immutable dense tensors and the reverse-mode gradient tape."""

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cmml_cli.utils.exceptions import NonFiniteError, ShapeError, TapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _freeze(values: np.ndarray, kind: str) -> np.ndarray:
    if any(dim <= 0 for dim in values.shape):
        raise ShapeError(f"{kind}: shape {tuple(values.shape)} has a non-positive dimension")
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{kind}: produced non-finite values")
    values.setflags(write=False)
    return values


class Tensor:
    """A dense float64 array that may participate in a gradient tape.

    Values are read-only after construction. A tensor created by ``Tape.watch``
    or produced by an operation on a watched tensor carries the tape and a
    ``node_id``; every other tensor is a constant.
    """

    __slots__ = ("_values", "requires_grad", "node_id", "tape", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self._values = _freeze(np.array(values, dtype=np.float64), "tensor")
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.tape: Optional["Tape"] = None
        self.name = name

    @classmethod
    def _from_op(cls, values: np.ndarray, kind: str) -> "Tensor":
        out = cls.__new__(cls)
        out._values = _freeze(np.asarray(values, dtype=np.float64), kind)
        out.requires_grad = False
        out.node_id = None
        out.tape = None
        out.name = None
        return out

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self._values.shape)

    @property
    def ndim(self) -> int:
        return self._values.ndim

    @property
    def size(self) -> int:
        return int(self._values.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return np.array(self._values)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self._values.reshape(()))

    def __add__(self, other):
        from cmml_cli.engine import ops
        return ops.add(self, ops.as_tensor(other, self.shape))

    def __radd__(self, other):
        from cmml_cli.engine import ops
        return ops.add(ops.as_tensor(other, self.shape), self)

    def __sub__(self, other):
        from cmml_cli.engine import ops
        return ops.sub(self, ops.as_tensor(other, self.shape))

    def __rsub__(self, other):
        from cmml_cli.engine import ops
        return ops.sub(ops.as_tensor(other, self.shape), self)

    def __mul__(self, other):
        from cmml_cli.engine import ops
        return ops.mul(self, ops.as_tensor(other, self.shape))

    def __rmul__(self, other):
        from cmml_cli.engine import ops
        return ops.mul(ops.as_tensor(other, self.shape), self)

    def __matmul__(self, other):
        from cmml_cli.engine import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from cmml_cli.engine import ops
        return ops.mul(self, ops.full(self.shape, -1.0))

    def __repr__(self) -> str:
        tag = f", node_id={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass(frozen=True)
class TapeRecord:
    """One recorded operation: output node, input nodes and its local gradient rule."""

    kind: str
    output_id: int
    input_ids: Tuple[Optional[int], ...]
    backward: BackwardFn


class Tape:
    """Ordered record of operations for one forward pass.

    A tape serves exactly one backward pass; it is single-owner and must not be
    shared between threads.
    """

    def __init__(self):
        self._records: List[TapeRecord] = []
        self._leaves: Dict[str, Tensor] = {}
        self._next_id = 0
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    @property
    def leaf_names(self) -> List[str]:
        return list(self._leaves)

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def watch(self, values, name: str) -> Tensor:
        """Register a leaf whose gradient ``backward`` will report under ``name``."""
        if self._consumed:
            raise TapeError("Cannot watch a leaf on a tape that already ran backward")
        if name in self._leaves:
            raise TapeError(f"Leaf '{name}' is already watched on this tape")
        leaf = Tensor(values, requires_grad=True, name=name)
        leaf.tape = self
        leaf.node_id = self._new_id()
        self._leaves[name] = leaf
        return leaf

    def watch_all(self, params: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {name: self.watch(values, name) for name, values in params.items()}

    def record(
        self, kind: str, values: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn
    ) -> Tensor:
        if self._consumed:
            raise TapeError(f"{kind}: tape is stale, run a new forward pass on a fresh tape")
        out = Tensor._from_op(values, kind)
        out.requires_grad = True
        out.tape = self
        out.node_id = self._new_id()
        input_ids = tuple(t.node_id if t.tape is self else None for t in inputs)
        self._records.append(TapeRecord(kind, out.node_id, input_ids, backward))
        return out

    def backward(self, root: Tensor) -> Dict[str, Tensor]:
        """Return d(root)/d(leaf) for every watched leaf; unreached leaves get zeros."""
        if root.tape is not self:
            raise TapeError("Root tensor was not produced on this tape")
        if self._consumed:
            raise TapeError("Tape is stale: backward already ran for this forward pass")
        if root.size != 1:
            raise TapeError(f"Root must be a scalar, got shape {root.shape}")

        grads: Dict[int, np.ndarray] = {root.node_id: np.ones_like(root.values)}
        for record in reversed(self._records):
            grad_out = grads.pop(record.output_id, None)
            if grad_out is None:
                continue
            for node_id, grad_in in zip(record.input_ids, record.backward(grad_out)):
                if node_id is None or grad_in is None:
                    continue
                if node_id in grads:
                    grads[node_id] = grads[node_id] + grad_in
                else:
                    grads[node_id] = np.asarray(grad_in, dtype=np.float64)
        self._consumed = True

        result: Dict[str, Tensor] = {}
        for name, leaf in self._leaves.items():
            grad = grads.get(leaf.node_id)
            if grad is None:
                grad = np.zeros(leaf.shape)
            grad = np.array(grad, dtype=np.float64).reshape(leaf.shape)
            result[name] = Tensor._from_op(grad, "backward")
        return result


def backward(root: Tensor) -> Dict[str, Tensor]:
    """Reverse-mode gradients of a scalar ``root`` with respect to its tape's leaves."""
    if root.tape is None:
        raise TapeError("Root tensor is not on an active tape")
    return root.tape.backward(root)
