"""Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Operations on tensors that require gradients
record a Lineage (the producing operation, its inputs and a closure mapping
the output gradient to input gradients); `backward` walks that graph in
reverse topological order.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ArgumentError, DimensionError

logger = logging.getLogger(__name__)

NUMERIC_MODES = {"float32": np.float32, "float64": np.float64}

_numeric_mode = "float32"
_grad_enabled = True

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def set_numeric_mode(mode: str) -> None:
    """
    Select the element type used for new tensors.

    Args:
        mode: "float64" (verification, gradient checks) or "float32" (training)
    """
    global _numeric_mode
    if mode not in NUMERIC_MODES:
        raise ArgumentError(f"Unknown numeric mode '{mode}'. Supported: {', '.join(NUMERIC_MODES)}")
    _numeric_mode = mode
    logger.debug(f"Numeric mode set to {mode}")


def get_numeric_mode() -> str:
    return _numeric_mode


def default_dtype() -> np.dtype:
    return np.dtype(NUMERIC_MODES[_numeric_mode])


@contextmanager
def numeric_mode(mode: str) -> Iterator[None]:
    """Temporarily switch the numeric mode."""
    previous = _numeric_mode
    set_numeric_mode(mode)
    try:
        yield
    finally:
        set_numeric_mode(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable lineage recording (inference, finite-difference probes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Lineage:
    """Record of the operation that produced a tensor."""

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: Tuple["Tensor", ...], backward: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """Dense n-dimensional real array with a gradient slot."""

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Optional[np.dtype] = None):
        self.data = np.array(data, dtype=dtype if dtype is not None else default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.lineage: Optional[Lineage] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        out.lineage = Lineage(op, parents, backward) if out.requires_grad else None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        op = self.lineage.op if self.lineage is not None else None
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={op})"

    def __len__(self) -> int:
        return self.shape[0]

    # Operator sugar over the primitives below
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return subtract(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def relu(self) -> "Tensor":
        return relu(self)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap arrays as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.lineage is not None:
            for parent in node.lineage.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """
    Populate `.grad` of every requires_grad tensor reachable from `loss`.

    Gradients accumulate across calls until `zero_grad` is called.

    Args:
        loss: Scalar tensor (one element)
    """
    if loss.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a tensor without gradient tracking")
        return

    pending = {id(loss): np.ones_like(loss.data)}
    for node in _topological_order(loss):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        node.grad = np.array(grad, dtype=node.data.dtype) if node.grad is None else node.grad + grad
        if node.lineage is None:
            continue
        parent_grads = node.lineage.backward(grad)
        for parent, parent_grad in zip(node.lineage.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def _backward(g: np.ndarray):
        return g, g

    return Tensor._from_op(a.data + b.data, (a, b), _backward, "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("subtract", a, b)

    def _backward(g: np.ndarray):
        return g, -g

    return Tensor._from_op(a.data - b.data, (a, b), _backward, "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("multiply", a, b)

    def _backward(g: np.ndarray):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return Tensor._from_op(a.data * b.data, (a, b), _backward, "multiply")


def scale(a: Tensor, c: float) -> Tensor:
    factor = a.data.dtype.type(c)

    def _backward(g: np.ndarray):
        return (g * factor,)

    return Tensor._from_op(a.data * factor, (a,), _backward, "scale")


def relu(a: Tensor) -> Tensor:
    # derivative at exactly 0 is 0
    mask = a.data > 0

    def _backward(g: np.ndarray):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, a.data, a.data.dtype.type(0)), (a,), _backward, "relu")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), _backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from e

    def _backward(g: np.ndarray):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out, (a,), _backward, "reshape")


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for {a.ndim}-d tensor")
    inverse = tuple(int(i) for i in np.argsort(axes))

    def _backward(g: np.ndarray):
        return (g.transpose(inverse),)

    return Tensor._from_op(a.data.transpose(axes), (a,), _backward, "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over identical leading axes (no broadcasting)."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def _backward(g: np.ndarray):
        return (g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None,
                np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None)

    return Tensor._from_op(a.data @ b.data, (a, b), _backward, "matmul")
