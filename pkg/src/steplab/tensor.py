"""Minimal dense float32 tensor kernel.

Row-major layout, scalar-only broadcasting, and the handful of elementwise /
reduction / routing operations the stream simulator and the dense oracles
need.  Everything here is pure; tensors are treated as immutable values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ArgError, AxisError, ShapeError

RTOL_DEFAULT = 1.3e-6
ATOL_DEFAULT = 1e-5


@dataclass(frozen=True)
class Tensor:
    """Dense row-major float32 tensor; rank 0 means scalar."""

    a: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.a, dtype=np.float32)
        if any(s < 1 for s in arr.shape):
            raise ShapeError(f"extents must be >= 1, got {arr.shape}")
        object.__setattr__(self, "a", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.a.shape)

    @property
    def elems(self) -> np.ndarray:
        return self.a.reshape(-1)

    def item(self) -> float:
        return float(self.a.reshape(-1)[0])


def tensor(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(np.asarray(data, dtype=np.float32))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=np.float32))


def rand_uniform(shape, seed: int) -> Tensor:
    return Tensor(rng.uniform(tuple(shape), seed))


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation, self-consistent with the oracles
    c = math.sqrt(2.0 / math.pi)
    x64 = x.astype(np.float64)
    return (0.5 * x64 * (1.0 + np.tanh(c * (x64 + 0.044715 * x64 ** 3)))).astype(np.float32)


_UNARY = {
    "exp": np.exp,
    "sqrt": np.sqrt,
    "neg": np.negative,
    "gelu": _gelu,
    "sigmoid": lambda x: (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32),
}

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "gt": lambda a, b: (a > b).astype(np.float32),
}


def ew_apply(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Elementwise op; binary ops allow equal shapes or one rank-0 operand."""
    a = tensor(a)
    if op in _UNARY:
        if b is not None:
            raise ArgError(f"{op} is unary")
        return Tensor(_UNARY[op](a.a))
    if op not in _BINARY:
        raise ArgError(f"unknown elementwise op: {op}")
    if b is None:
        raise ArgError(f"{op} needs two operands")
    b = tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return Tensor(_BINARY[op](a.a, b.a).astype(np.float32))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError("matmul requires rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return Tensor(a.a @ b.a)


def reduce(kind: str, a: Tensor, axis: int, keep: bool = False) -> Tensor:
    a = tensor(a)
    if not 0 <= axis < max(len(a.shape), 1):
        raise AxisError(f"axis {axis} out of range for shape {a.shape}")
    if kind == "sum":
        out = a.a.sum(axis=axis, keepdims=keep)
    elif kind == "max":
        out = a.a.max(axis=axis, keepdims=keep)
    elif kind == "mean":
        out = a.a.mean(axis=axis, keepdims=keep)
    elif kind == "var":
        # population variance, matching the LayerNorm convention
        out = a.a.var(axis=axis, keepdims=keep)
    else:
        raise ArgError(f"unknown reduce kind: {kind}")
    return Tensor(np.asarray(out, dtype=np.float32))


def softmax(a: Tensor, axis: int) -> Tensor:
    a = tensor(a)
    if not 0 <= axis < max(len(a.shape), 1):
        raise AxisError(f"axis {axis} out of range for shape {a.shape}")
    shifted = a.a - a.a.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    return Tensor((e / e.sum(axis=axis, keepdims=True)).astype(np.float32))


def topk_multihot(a: Tensor, k: int) -> Tensor:
    """0/1 vector with k ones at the k largest entries; ties favor lower index."""
    a = tensor(a)
    if len(a.shape) != 1:
        raise ShapeError("topk_multihot expects a rank-1 tensor")
    n = a.shape[0]
    if not 0 < k <= n:
        raise ArgError(f"k={k} out of range for extent {n}")
    # stable sort on (-value, index) so equal values keep the lower index
    order = sorted(range(n), key=lambda i: (-float(a.a[i]), i))
    out = np.zeros(n, dtype=np.float32)
    out[order[:k]] = 1.0
    return Tensor(out)


def allclose(a: Tensor, b: Tensor, rtol: float = RTOL_DEFAULT, atol: float = ATOL_DEFAULT) -> bool:
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(np.abs(a.a - b.a) <= atol + rtol * np.abs(b.a)))
