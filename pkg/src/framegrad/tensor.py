"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

The graph is recorded eagerly while operations execute: every Tensor produced
by an op keeps references to its parents and a closure that routes the output
gradient back to them. ``Tensor.backward()`` walks the recorded graph once in
reverse topological order and frees it afterwards (pass ``free_graph=False``
to keep it for repeated accumulation).

Float32 is the working precision; float64 is supported for verification
(gradient checks run there). Accumulation order is fixed, so single-threaded
runs are bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class Tensor:
    """A dense row-major array plus an optional gradient accumulator.

    ``grad`` starts out as ``None`` and is lazily created as zeros the first
    time a backward pass reaches this tensor; backward rules only ever add
    into it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient plumbing --------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        """Add ``g`` into this tensor's gradient accumulator."""
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, free_graph: bool = True) -> None:
        """Populate ``grad`` on every reachable tensor with ``requires_grad``.

        Only scalar (single-element) tensors may seed a backward pass. Each
        call propagates exactly one unit of upstream gradient, so repeated
        calls with ``free_graph=False`` accumulate additively.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        pass_grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}

        def acc(t: "Tensor", g: np.ndarray) -> None:
            if not t.requires_grad:
                return
            buf = pass_grads.get(id(t))
            if buf is None:
                pass_grads[id(t)] = g.copy()
            else:
                buf += g

        for node in reversed(order):
            g = pass_grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g
            else:
                node.grad += g
            if node._backward is not None:
                node._backward(g, acc)
        if free_graph:
            for node in order:
                node._parents = ()
                node._backward = None

    # -- elementwise arithmetic (same-shape tensors or python scalars) ------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}; broadcasting is not supported here")
            return other
        if np.isscalar(other):
            return Tensor(np.full(self.shape, other, dtype=self.dtype))
        raise TypeError(f"cannot combine Tensor with {type(other).__name__}")

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = make_node(self.data + other.data, (self, other))
        if out.requires_grad:

            def backward(g, acc, a=self, b=other):
                acc(a, g)
                acc(b, g)

            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = make_node(-self.data, (self,))
        if out.requires_grad:

            def backward(g, acc, a=self):
                acc(a, -g)

            out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __mul__(self, other) -> "Tensor":
        if np.isscalar(other):
            c = float(other)
            out = make_node(self.data * np.asarray(c, dtype=self.dtype), (self,))
            if out.requires_grad:

                def backward(g, acc, a=self, c=c):
                    acc(a, g * np.asarray(c, dtype=g.dtype))

                out._backward = backward
            return out
        other = self._coerce(other)
        out = make_node(self.data * other.data, (self, other))
        if out.requires_grad:

            def backward(g, acc, a=self, b=other):
                if a.requires_grad:
                    acc(a, g * b.data)
                if b.requires_grad:
                    acc(b, g * a.data)

            out._backward = backward
        return out

    __rmul__ = __mul__


def make_node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    """Create a graph node whose ``requires_grad`` is inherited from parents."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
    return out


def _topo_order(root: Tensor) -> list:
    """Iterative DFS producing parents-before-children ordering."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def from_array(arr: np.ndarray, requires_grad: bool = False) -> Tensor:
    """Wrap an array without copying when the dtype already matches."""
    return Tensor(arr, requires_grad=requires_grad)
