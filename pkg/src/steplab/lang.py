"""Stream-language data model: dtypes, symbolic dims, streams, and fns.

Conventions used throughout:

* ``dims`` lists are innermost-first: ``dims[0]`` is the fastest-varying
  stream level.
* The layout of each data tensor is ``reversed(dims)`` extents followed by
  the value-token extents (reversed buffer shape, or the multihot width).
  A ``Buffer(fp32, [D])`` stream over ``dims: [M, N]`` therefore carries a
  single ``(N, M, D)`` tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CtxError, ShapeError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# Symbolic dimensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dim:
    """Named symbolic extent; `size` pins a literal extent (e.g. the unit dim)."""

    name: str
    size: int | None = None

    def resolve(self, ctx: dict[str, int]) -> int:
        if self.name in ctx:
            return int(ctx[self.name])
        if self.size is not None:
            return self.size
        raise CtxError(f"dimension {self.name} not bound in ctx")

    def __repr__(self):
        return self.name


UNIT = Dim("1", 1)


# ---------------------------------------------------------------------------
# Dtypes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scalar:
    def __repr__(self):
        return "fp32"


@dataclass(frozen=True)
class Buffer:
    elem: "Dtype"
    bufshape: tuple[Dim, ...]  # innermost-first, like dims

    def __post_init__(self):
        if not isinstance(self.elem, Scalar):
            raise ShapeError("Buffer element must be Scalar (nesting disallowed)")
        object.__setattr__(self, "bufshape", tuple(self.bufshape))

    def __repr__(self):
        inner = ", ".join(d.name for d in self.bufshape)
        return f"Buffer(fp32, [{inner}])"


@dataclass(frozen=True)
class Multihot:
    e: Dim

    def __repr__(self):
        return f"Multihot({self.e.name})"


@dataclass(frozen=True)
class TupleType:
    members: tuple["Dtype", ...]

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) < 2:
            raise ShapeError("TupleType needs at least 2 members")
        object.__setattr__(self, "members", members)

    def __repr__(self):
        return "(" + ", ".join(repr(m) for m in self.members) + ")"


Dtype = Scalar | Buffer | Multihot | TupleType
SCALAR = Scalar()


def leaf_extents(dtype: Dtype) -> list[tuple[Dim, ...]]:
    """Per-leaf trailing extents (already in layout order) of a dtype."""
    if isinstance(dtype, Scalar):
        return [()]
    if isinstance(dtype, Buffer):
        return [tuple(reversed(dtype.bufshape))]
    if isinstance(dtype, Multihot):
        return [(dtype.e,)]
    if isinstance(dtype, TupleType):
        out: list[tuple[Dim, ...]] = []
        for m in dtype.members:
            out.extend(leaf_extents(m))
        return out
    raise TypeError(f"not a dtype: {dtype!r}")


def leaf_count(dtype: Dtype) -> int:
    return len(leaf_extents(dtype))


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------

def _resolve_all(dims, ctx) -> tuple[int, ...]:
    return tuple(d.resolve(ctx) for d in dims)


@dataclass
class Stream:
    """A ranked stream of value tokens with materialized tensor data."""

    name: str
    dtype: Dtype
    dims: tuple[Dim, ...]
    ctx: dict[str, int]
    data: list[Tensor]

    def __post_init__(self):
        self.dims = tuple(self.dims)
        self.validate()

    @property
    def rank(self) -> int:
        return len(self.dims)

    def layout_extents(self) -> tuple[int, ...]:
        return _resolve_all(reversed(self.dims), self.ctx)

    def expected_shapes(self) -> list[tuple[int, ...]]:
        base = self.layout_extents()
        return [base + _resolve_all(ext, self.ctx) for ext in leaf_extents(self.dtype)]

    def validate(self):
        want = self.expected_shapes()
        if len(self.data) != len(want):
            raise ShapeError(
                f"{self.name}: {len(self.data)} data tensors for dtype with {len(want)} leaves"
            )
        for t, shape in zip(self.data, want):
            if t.shape != shape:
                raise ShapeError(f"{self.name}: data shape {t.shape}, expected {shape}")

    def with_(self, name=None, dtype=None, dims=None, ctx=None, data=None) -> "Stream":
        return Stream(
            name if name is not None else self.name,
            dtype if dtype is not None else self.dtype,
            dims if dims is not None else self.dims,
            dict(ctx if ctx is not None else self.ctx),
            data if data is not None else [Tensor(t.a.copy()) for t in self.data],
        )


@dataclass
class RaggedStream:
    """Partition output: per outer position, a variable-length token list.

    Bucket keys are layout coordinates over ``reversed(outer_dims)``; each
    token is a list of per-leaf numpy arrays in dtype leaf order.
    """

    name: str
    dtype: Dtype
    outer_dims: tuple[Dim, ...]
    ctx: dict[str, int]
    buckets: dict[tuple[int, ...], list[list[np.ndarray]]] = field(default_factory=dict)

    def outer_positions(self):
        extents = _resolve_all(reversed(self.outer_dims), self.ctx)
        return list(np.ndindex(*extents)) if extents else [()]

    def total_tokens(self) -> int:
        return sum(len(v) for v in self.buckets.values())


StreamLike = Stream | RaggedStream


# ---------------------------------------------------------------------------
# Fns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fn:
    """A specialized function applied by Map/Accum/Merge.

    `semantic_key` resolves the executable semantics in a registry; stateful
    fns carry scalar `init` values that are broadcast to the output-dtype
    leaf extents when a fold starts.
    """

    name: str
    kind: str  # "pure" | "stateful"
    input_dtype: Dtype
    output_dtype: Dtype
    semantic_key: str
    init: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("pure", "stateful"):
            raise ValueError(f"bad fn kind: {self.kind}")
        if self.kind == "stateful":
            if self.init is None:
                raise ValueError(f"stateful fn {self.name} needs init")
            if len(self.init) != leaf_count(self.output_dtype):
                raise ValueError(
                    f"fn {self.name}: init length {len(self.init)} != "
                    f"output leaf count {leaf_count(self.output_dtype)}"
                )
            object.__setattr__(self, "init", tuple(float(v) for v in self.init))

    def init_state(self, ctx: dict[str, int]) -> list[np.ndarray]:
        state = []
        for value, ext in zip(self.init, leaf_extents(self.output_dtype)):
            shape = _resolve_all(ext, ctx)
            state.append(np.full(shape, value, dtype=np.float32))
        return state


# ---------------------------------------------------------------------------
# Dtype text parsing ("fp32", "Buffer(fp32, [D])", "Multihot(E)", lists)
# ---------------------------------------------------------------------------

def parse_dims(items) -> tuple[Dim, ...]:
    dims = []
    for it in items:
        if isinstance(it, int):
            dims.append(Dim(str(it), it))
        else:
            name = str(it).strip()
            dims.append(Dim(name, int(name) if name.isdigit() else None))
    return tuple(dims)


def parse_dtype(text) -> Dtype:
    """Parse a dtype from task-document text (or a nested list thereof)."""
    if isinstance(text, (list, tuple)):
        return TupleType(tuple(parse_dtype(t) for t in text))
    s = str(text).strip()
    if s in ("fp32", "float", "float32", "Scalar"):
        return SCALAR
    if s.startswith("Buffer(") and s.endswith(")"):
        inner = s[len("Buffer("):-1]
        elem_txt, _, shape_txt = inner.partition(",")
        shape_txt = shape_txt.strip()
        if not (shape_txt.startswith("[") and shape_txt.endswith("]")):
            raise ShapeError(f"bad Buffer shape in dtype text: {text!r}")
        names = [p.strip() for p in shape_txt[1:-1].split(",") if p.strip()]
        return Buffer(parse_dtype(elem_txt), parse_dims(names))
    if s.startswith("Multihot(") and s.endswith(")"):
        inner = s[len("Multihot("):-1].strip()
        return Multihot(Dim(inner, int(inner) if inner.isdigit() else None))
    if s.startswith("[") and s.endswith("]"):
        parts = _split_top_level(s[1:-1])
        return TupleType(tuple(parse_dtype(p) for p in parts))
    raise ShapeError(f"unrecognized dtype text: {text!r}")


def _split_top_level(s: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return [p.strip().strip('"').strip("'") for p in parts]
