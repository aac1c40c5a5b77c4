from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from pyheadseg.exceptions import GradientError, NonFiniteError, ShapeError
from pyheadseg.typed import ArrayLike, Shape

DEFAULT_DTYPE = np.float32

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """
    Run operations without recording them on the tape.

    The switch is thread-local, so frozen-weight inference can run in several
    threads while another thread trains.
    """
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(data: Union[Tensor, ArrayLike], dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.ascontiguousarray(data, dtype=dtype)
    if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
        return np.asarray(data)
    return np.asarray(data, dtype=DEFAULT_DTYPE)


class Function:
    """
    Base class of every differentiable operation.

    `forward` receives the raw arrays of the input tensors and returns the output array,
    caching whatever `backward` needs. `backward` receives dL/d(output) and returns one
    gradient per input, `None` for inputs that take no gradient.
    """

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs

    @property
    def name(self) -> str:
        return type(self).__name__

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{self.name}.forward")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{self.name}.backward")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        func = cls(*inputs)
        out = func.forward(*(t.data for t in inputs), **kwargs)
        if not np.isfinite(out).all():
            raise NonFiniteError(func.name)

        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
        """
        Sum out the axes numpy broadcasting added or stretched, so that grad matches shape.
        """
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """
    N-dimensional float array that can take part in reverse-mode differentiation.

    Arrays passed in keep their float32/float64 precision; anything else is stored at
    float32. Float64 exists for gradient verification, training runs at float32.
    """

    def __init__(
        self,
        data: Union[Tensor, ArrayLike],
        requires_grad: bool = False,
        dtype=None,
        creator: Optional[Function] = None,
    ) -> None:
        self.data: np.ndarray = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator
        self._retains_grad = False

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def retain_grad(self) -> Tensor:
        """
        Keep the gradient of this non-leaf tensor after `backward` (used by saliency).
        """
        self._retains_grad = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        """
        Populate `.grad` of every leaf that requires it; repeated calls accumulate.
        """
        if self.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GradientError("loss is not on the tape (no input requires grad)")

        pending = {id(self): np.ones_like(self.data)}
        for node in _reverse_topological_order(self):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None or node._retains_grad:
                node._accumulate(grad)
            if node.creator is None:
                continue

            input_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def _lift(self, other: Union[Tensor, float, int]) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Union[Tensor, float, int]) -> Tensor:
        return Add.apply(self, self._lift(other))

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Mul.apply(self, self._lift(-1.0))

    def __sub__(self, other: Union[Tensor, float, int]) -> Tensor:
        return Add.apply(self, -self._lift(other))

    def __rsub__(self, other: Union[Tensor, float, int]) -> Tensor:
        return Add.apply(self._lift(other), -self)

    def __mul__(self, other: Union[Tensor, float, int]) -> Tensor:
        return Mul.apply(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Union[float, int]) -> Tensor:
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return Mul.apply(self, self._lift(1.0 / other))

    def __matmul__(self, other: Tensor) -> Tensor:
        return Matmul.apply(self, other)

    def sum(self, axis: Union[int, Tuple[int, ...], None] = None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[int, Tuple[int, ...], None] = None, keepdims: bool = False) -> Tensor:
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> Tensor:
        return Transpose.apply(self, axes=axes)


def _reverse_topological_order(root: Tensor) -> List[Tensor]:
    """
    Nodes of the tape reachable from root, consumers before producers, each once.
    """
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    order.reverse()
    return order


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            self.unbroadcast(grad * self.b, self.a.shape),
            self.unbroadcast(grad * self.a, self.b.shape),
        )


class Matmul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul of {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return self.unbroadcast(grad_a, self.a.shape), self.unbroadcast(grad_b, self.b.shape)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis=None, keepdims=False):
        total = super().forward(x, axis=axis, keepdims=keepdims)
        self.count = x.size // max(total.size, 1)
        return total / x.dtype.type(self.count)

    def backward(self, grad):
        (expanded,) = super().backward(grad)
        return (expanded / expanded.dtype.type(self.count),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)
