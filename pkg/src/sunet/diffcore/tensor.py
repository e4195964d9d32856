"""Reverse-mode autodiff core: float64 tensors on a dynamically built tape."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf values."""


class GraphError(RuntimeError):
    """Invalid use of the computation graph (e.g. backward on a non-scalar)."""


_node_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference / oracles)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float64 array with optional gradient tracking.

    Leaves created with ``requires_grad=True`` accumulate into ``grad`` on
    every ``backward()`` call; zero them explicitly between steps.
    Non-finite values are rejected on construction, so every operation in a
    pipeline is implicitly checked.
    """

    __slots__ = ("values", "node_id", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        self.values = arr
        self.node_id = next(_node_ids)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = tuple(_parents)
        self._backward_fn = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def tracked(self) -> bool:
        """True if gradients flow through or into this tensor."""
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self):
        """Reverse accumulation from a scalar output to all tracked leaves."""
        if self.values.size != 1:
            raise GraphError("backward requires a scalar tensor")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if node.node_id in visited:
                continue
            visited.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.node_id not in visited:
                    stack.append((p, False))

        # Per-call gradient buffers for interior nodes; persistent .grad only
        # on requires_grad leaves, so repeated backward calls accumulate there.
        pending: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.values)}
        for node in reversed(topo):
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward_fn is not None:
                node._backward_fn(g, pending)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, tracked={self.tracked})"

    # Arithmetic sugar is attached by sunet.diffcore.ops at import time.


@dataclass
class Param:
    """Named trainable tensor; names are hierarchical, unique within a model."""

    name: str
    tensor: Tensor


def send_grad(pending: dict[int, np.ndarray], t: Tensor, g: np.ndarray):
    """Route a gradient contribution to a parent node during backward.

    Stored arrays are never mutated in place (contributions may alias the
    upstream gradient), so accumulation allocates a fresh array.
    """
    if not t.tracked:
        return
    prev = pending.get(t.node_id)
    pending[t.node_id] = g if prev is None else prev + g
