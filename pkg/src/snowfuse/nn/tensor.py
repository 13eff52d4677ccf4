"""Reverse-mode autodiff on float64 numpy arrays.

A Tensor owns its value buffer and, after a backward pass, a gradient of
the same shape. Ops build a dynamic graph by attaching a closure to the
result; Tensor.backward() walks the graph once in reverse topological
order. Ops never mutate their inputs, so any tensor can appear in several
downstream nodes; gradients accumulate additively.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError

_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_debug(flag: bool) -> None:
    """Enable finite-value assertions after every forward/backward op."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG_CHECKS


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.data.shape}")
        order = _topo_order(self)
        self.ensure_grad()
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
                if _DEBUG_CHECKS:
                    for parent in node._parents:
                        if parent.grad is not None and not np.isfinite(parent.grad).all():
                            raise FloatingPointError("non-finite gradient in backward pass")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, wiring the backward closure when grads are live.

    backward_fn receives the upstream gradient array and must accumulate
    into each parent's .grad (after parent.ensure_grad()).
    """
    if _DEBUG_CHECKS and not np.isfinite(data).all():
        raise FloatingPointError("non-finite value in forward pass")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = lambda: backward_fn(out.grad)
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
