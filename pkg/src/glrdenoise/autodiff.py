"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Only the operations needed by the denoising networks are provided; there is
no broadcasting engine and no graph-level optimization. Every op records a
closure on the implicit tape formed by Tensor parent links, and ``backward``
replays them in reverse topological order, which is deterministic for a
fixed graph construction order.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np


class AutodiffUsageError(RuntimeError):
    """Raised on misuse of the tape (e.g. double backward)."""


class ShapeError(ValueError):
    """Raised when operand extents are inconsistent."""


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    ``grad`` is allocated lazily during the backward pass and always has the
    same shape as ``data``.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward", "_done")

    def __init__(
        self,
        data,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = parents
        self._backward = backward
        self._done = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None
        self._done = False

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(x) into every reachable tensor's grad.

        ``self`` must be scalar. Calling backward twice on the same recorded
        graph is a usage error; rebuild the forward pass first.
        """
        if self.data.size != 1:
            raise AutodiffUsageError("backward requires a scalar loss tensor")
        if self._done:
            raise AutodiffUsageError(
                "backward already invoked on this graph; run a new forward pass"
            )
        self._done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            # reversed so that parents are visited in declaration order
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, parents=(a, b))

    def bwd(g):
        a.accumulate_grad(g)
        b.accumulate_grad(-g)

    out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, parents=(a, b))

    def bwd(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)

    out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * c)
    return out


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the gradient at exactly 0 is defined as 0."""
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g * mask)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), parents=(a,))
    out._backward = lambda g: a.accumulate_grad(g.reshape(a.data.shape))
    return out


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=1), parents=tuple(tensors))
    splits = np.cumsum([d.shape[1] for d in datas])[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            t.accumulate_grad(piece)

    out._backward = bwd
    return out


def tensor_sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), parents=(a,))
    out._backward = lambda g: a.accumulate_grad(np.full_like(a.data, float(g)))
    return out


def mean_squared_error(gt: Tensor, out: Tensor) -> Tensor:
    """(1/HW) sum of squared differences; backward seeds 2(out-gt)/HW."""
    _same_shape(gt, out, "mean_squared_error")
    n = gt.data.size
    diff = out.data - gt.data
    loss = Tensor(np.sum(diff * diff) / n, parents=(gt, out))

    def bwd(g):
        s = 2.0 * float(g) / n
        out.accumulate_grad(s * diff)
        gt.accumulate_grad(-s * diff)

    loss._backward = bwd
    return loss
