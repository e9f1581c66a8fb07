"""Tensor values and the recording tape (a Wengert list of pure ops)."""

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict)
    requires_grad: bool = False
    name: str | None = None

    @property
    def is_leaf(self):
        return self.op == "leaf"

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))


class Tensor:
    """A dense float array, optionally bound to a node on a tape.

    Deferred tapes record shapes only; reading ``data`` on such a tensor
    raises until the tape has been executed.
    """

    __slots__ = ("tape", "node", "shape", "name", "_value")

    def __init__(self, value=None, *, name=None, tape=None, node=None, shape=None):
        self.tape = tape
        self.node = node
        self.name = name
        self._value = None if value is None else np.asarray(value)
        if shape is None:
            if self._value is None:
                raise ValueError("a tensor needs either a value or a shape")
            shape = self._value.shape
        self.shape = tuple(int(d) for d in shape)

    @property
    def data(self):
        if self._value is None:
            raise RuntimeError("tensor lives on a deferred tape and has no value yet")
        return self._value

    @property
    def requires_grad(self):
        return self.tape is not None and self.tape.nodes[self.node].requires_grad

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    def numpy(self):
        return self.data

    def __repr__(self):
        where = "eager" if self.tape is None else f"node {self.node}"
        return f"Tensor(shape={self.shape}, name={self.name!r}, {where})"

    # operator sugar; the op functions live in ``ops`` to avoid an import cycle
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)


class Tape:
    """Records every op applied to tensors that live on it.

    ``eager=True`` computes values while recording; ``eager=False`` records
    shapes only, so a later :func:`run_with_plan` can execute the whole
    program inside a shared arena.
    """

    def __init__(self, eager=True, dtype=np.float64):
        self.eager = eager
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.values: list[np.ndarray | None] = []
        self.loss: int | None = None
        self.outputs: list[int] = []
        self.finalized = False
        self._leaf_by_name: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, node, value):
        if self.finalized:
            raise RuntimeError("tape is finalized; no further recording")
        for i in node.inputs:
            assert i < len(self.nodes), "tape inputs must precede their consumer"
        self.nodes.append(node)
        self.values.append(value)
        return len(self.nodes) - 1

    def leaf(self, value, name=None, requires_grad=None):
        """Register an external array (a parameter or a constant input)."""
        if name is not None and name in self._leaf_by_name:
            idx = self._leaf_by_name[name]
            return Tensor(self.values[idx], name=name, tape=self, node=idx)
        arr = np.asarray(value)
        if arr.dtype != self.dtype:
            arr = arr.astype(self.dtype)
        if requires_grad is None:
            requires_grad = name is not None
        node = Node("leaf", (), tuple(arr.shape), requires_grad=requires_grad, name=name)
        idx = self._append(node, arr)
        if name is not None:
            self._leaf_by_name[name] = idx
        return Tensor(arr, name=name, tape=self, node=idx)

    def param_nodes(self):
        return {n.name: i for i, n in enumerate(self.nodes) if n.is_leaf and n.requires_grad}

    def mark_loss(self, t):
        if t.tape is not self:
            raise ValueError("loss tensor does not belong to this tape")
        if t.shape not in ((), (1,)):
            raise DimensionError(f"loss must be scalar, got shape {t.shape}")
        self.loss = t.node

    def mark_output(self, t):
        if t.tape is not self:
            raise ValueError("output tensor does not belong to this tape")
        self.outputs.append(t.node)

    def finalize(self):
        self.finalized = True
        return self

    def signature(self):
        """Structural fingerprint: equal signatures share a sharing plan."""
        return (
            self.loss,
            tuple(self.outputs),
            tuple((n.op, n.inputs, n.shape, n.requires_grad) for n in self.nodes),
        )
