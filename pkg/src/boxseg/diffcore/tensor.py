"""Dense float64 tensors and the recorded graph used for reverse-mode sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a tensor would hold NaN or Inf."""


@dataclass
class Node:
    """One recorded primitive application.

    ``backward`` maps the gradient of ``output`` to a tuple with one entry per
    input (``None`` for inputs that need no gradient).
    """

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    """Immutable dense array of doubles with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _node: Optional[Node] = None, _check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if arr is data:
            arr = arr.copy()
        if _check and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor{' ' + name if name else ''}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad or _node is not None)
        self.node = _node
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def wrap(cls, arr: np.ndarray, node: Optional[Node] = None) -> "Tensor":
        """Adopt ``arr`` without copying; used by primitives for their outputs."""
        if not np.isfinite(arr).all():
            op = node.op if node is not None else "constant"
            raise NonFiniteError(f"non-finite output from {op}")
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.node = node
        t.requires_grad = node is not None
        t.name = None
        return t

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, _check=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        Graph.trace(self).backward(self, grad)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(ops.as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


class Graph:
    """Topologically ordered list of the nodes an output depends on."""

    def __init__(self, tensors: Sequence[Tensor]):
        self.tensors = list(tensors)

    @property
    def nodes(self) -> list:
        return [t.node for t in self.tensors if t.node is not None]

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list = []
        seen: set = set()
        stack = [(output, False)]
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
                for inp in reversed(t.node.inputs):
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        return cls(order)

    def backward(self, output: Tensor, grad=None) -> None:
        if grad is None:
            if output.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(output.data)
        grads = {id(output): np.asarray(grad, dtype=np.float64)}
        for t in reversed(self.tensors):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.grad = g if t.grad is None else t.grad + g
                continue
            for inp, gi in zip(t.node.inputs, t.node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
