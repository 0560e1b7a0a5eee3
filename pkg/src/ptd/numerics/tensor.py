"""Tensor values and the computation tape used for reverse-mode differentiation.

A :class:`Tape` records every differentiable operation executed while it is
active. :func:`backward` then walks the recorded nodes in exact reverse order,
so gradient accumulation is deterministic.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when the inputs of an operation have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf from its inputs."""


class TapeError(RuntimeError):
    """Raised on misuse of a tape (backward without forward, reused tape...)."""


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar, resolved lazily to avoid an import cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, _wrap(other))

    def __radd__(self, other):
        from . import ops
        return ops.add(_wrap(other), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _wrap(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_wrap(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.elementwise_mul(self, _wrap(other))

    def __rmul__(self, other):
        from . import ops
        return ops.elementwise_mul(_wrap(other), self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _wrap(other))

    def __getitem__(self, key):
        from . import ops
        return ops.slice(self, key)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value, name: str = "") -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


class Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of the operations executed while the tape is active.

    Use as a context manager::

        with Tape() as tape:
            loss = ops.cross_entropy(logits, labels)
        backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False
        self._producers: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, node: Node) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a tape that has already been consumed by backward")
        self._producers[id(node.output)] = len(self.nodes)
        self.nodes.append(node)

    def produced(self, tensor: Tensor) -> bool:
        idx = self._producers.get(id(tensor))
        return idx is not None and self.nodes[idx].output is tensor

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class no_grad:
    """Suspend recording: ops executed inside do not touch any tape."""

    def __enter__(self):
        _TAPE_STACK.append(None)  # type: ignore[arg-type]
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that requires a gradient.

    Gradients are added to any existing ``.grad`` buffer, so repeated calls on
    separate tapes accumulate. The tape releases its saved activations and
    cannot be replayed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape already consumed; run the forward pass again")
    if not tape.produced(loss):
        raise TapeError("loss was not produced on this tape; run forward under the tape first")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set = set()  # buffers allocated here, safe to update in place
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        owned.discard(id(node.output))
        node.output.grad = g_out
        in_grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            if isinstance(g, SparseGrad):
                if key not in owned:
                    prev = np.zeros(inp.shape, dtype=DTYPE) if prev is None else prev.copy()
                    owned.add(key)
                g.add_to(prev)
                grads[key] = prev
            elif prev is None:
                grads[key] = g
            elif key in owned:
                prev += g
            else:
                grads[key] = prev + g
                owned.add(key)
    # leaves: whatever is left in the buffer belongs to tensors no node produced
    leaves = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if id(inp) in grads:
                leaves[id(inp)] = inp
    for key, tensor in leaves.items():
        _accumulate_into(tensor, grads[key])
    tape.consumed = True
    tape.nodes = []
    tape._producers = {}


class SparseGrad:
    """Gradient that is non-zero only at ``x[key]``; avoids dense zero buffers per slice."""

    __slots__ = ("key", "values", "fancy")

    def __init__(self, key, values: np.ndarray, fancy: bool):
        self.key = key
        self.values = values
        self.fancy = fancy

    def add_to(self, buf: np.ndarray) -> None:
        if self.fancy:
            np.add.at(buf, self.key, self.values)
        else:
            buf[self.key] += self.values


def _accumulate_into(tensor: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(tensor.shape)
    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
