"""Tensor-based execution engine for stream programs.

Each primitive is a pure function from streams to streams; `run_program`
executes a parsed AST against named input streams and an fn environment.
Data stays materialized as dense tensors laid out per `lang.Stream`, so
execution is just indexing arithmetic plus fn applications.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgError, SimError, StepTypeError, StreamOverflow, StreamUnderflow
from .ir import MapEach, PrimCall, Program, Ref
from .lang import (
    SCALAR, Buffer, Dim, Fn, Multihot, RaggedStream, Scalar, Stream, StreamLike,
    TupleType, UNIT, leaf_extents,
)
from .tensor import Tensor


@dataclass
class FnEnv:
    """Executable fn bindings for one program run.

    `fns` maps surface names (fn_maxsum, ...) to Fn declarations, `fn_lists`
    maps list names to Fn sequences for the map-each form, and `semantics`
    maps semantic keys to callables over lists of numpy leaves.
    """

    fns: dict[str, Fn] = field(default_factory=dict)
    fn_lists: dict[str, list[Fn]] = field(default_factory=dict)
    semantics: dict[str, object] = field(default_factory=dict)

    def resolve(self, name: str) -> Fn:
        if name not in self.fns:
            raise StepTypeError(f"unknown fn: {name}")
        return self.fns[name]

    def call_pure(self, fn: Fn, leaves):
        sem = self.semantics[fn.semantic_key]
        out = sem(list(leaves))
        return [np.asarray(x, dtype=np.float32) for x in out]

    def call_step(self, fn: Fn, state, leaves):
        sem = self.semantics[fn.semantic_key]
        out = sem(list(state), list(leaves))
        return [np.asarray(x, dtype=np.float32) for x in out]


def _dims_equal(a, b) -> bool:
    return tuple(d.name for d in a) == tuple(d.name for d in b)


def _merge_ctx(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        if k in out and out[k] != v:
            raise StepTypeError(f"ctx conflict on {k}: {out[k]} vs {v}")
        out[k] = v
    return out


def _positions(s: Stream):
    ext = s.layout_extents()
    return np.ndindex(*ext) if ext else iter([()])


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def simulate_map(fn: Fn, s: StreamLike, fnenv: FnEnv, name="map") -> StreamLike:
    if fn.kind != "pure":
        raise StepTypeError(f"Map requires a pure fn, got stateful {fn.name}")
    if isinstance(s, RaggedStream):
        if s.dtype != fn.input_dtype:
            raise StepTypeError(f"Map fn {fn.name} input {fn.input_dtype!r} != {s.dtype!r}")
        out = RaggedStream(name, fn.output_dtype, s.outer_dims, dict(s.ctx))
        for key, tokens in s.buckets.items():
            out.buckets[key] = [fnenv.call_pure(fn, tok) for tok in tokens]
        return out
    if s.dtype != fn.input_dtype:
        raise StepTypeError(f"Map fn {fn.name} input {fn.input_dtype!r} != {s.dtype!r}")
    base = s.layout_extents()
    out_ext = [tuple(d.resolve(s.ctx) for d in e) for e in leaf_extents(fn.output_dtype)]
    out_leaves = [np.zeros(base + e, dtype=np.float32) for e in out_ext]
    for pos in _positions(s):
        token = [t.a[pos] for t in s.data]
        result = fnenv.call_pure(fn, token)
        for leaf, r in zip(out_leaves, result):
            leaf[pos] = r
    return Stream(name, fn.output_dtype, s.dims, dict(s.ctx), [Tensor(t) for t in out_leaves])


def simulate_accum(fn: Fn, b: int, s: Stream, fnenv: FnEnv, name="accum") -> Stream:
    if fn.kind != "stateful":
        raise StepTypeError(f"Accum requires a stateful fn, got {fn.name}")
    if not 0 < b <= s.rank:
        raise ArgError(f"Accum b={b} out of range for rank {s.rank}")
    if s.dtype != fn.input_dtype:
        raise StepTypeError(f"Accum fn {fn.name} input {fn.input_dtype!r} != {s.dtype!r}")
    out_dims = s.dims[b:]
    outer_ext = tuple(d.resolve(s.ctx) for d in reversed(out_dims))
    inner_ext = tuple(d.resolve(s.ctx) for d in reversed(s.dims[:b]))
    out_leaf_ext = [tuple(d.resolve(s.ctx) for d in e) for e in leaf_extents(fn.output_dtype)]
    out_leaves = [np.zeros(outer_ext + e, dtype=np.float32) for e in out_leaf_ext]
    outer_iter = np.ndindex(*outer_ext) if outer_ext else iter([()])
    for opos in outer_iter:
        state = fn.init_state(s.ctx)
        inner_iter = np.ndindex(*inner_ext) if inner_ext else iter([()])
        for ipos in inner_iter:
            token = [t.a[opos + ipos] for t in s.data]
            state = fnenv.call_step(fn, state, token)
        for leaf, st in zip(out_leaves, state):
            leaf[opos] = st
    return Stream(name, fn.output_dtype, out_dims, dict(s.ctx), [Tensor(t) for t in out_leaves])


def simulate_zip(a: Stream, b: Stream, name="zip") -> Stream:
    if not _dims_equal(a.dims, b.dims):
        raise StepTypeError(f"Zip dims mismatch: {a.dims} vs {b.dims}")
    ctx = _merge_ctx(a.ctx, b.ctx)
    dtype = TupleType((a.dtype, b.dtype))
    data = [Tensor(t.a.copy()) for t in a.data] + [Tensor(t.a.copy()) for t in b.data]
    return Stream(name, dtype, a.dims, ctx, data)


def simulate_copy(s: Stream, names=("copy0", "copy1")) -> tuple[Stream, Stream]:
    return s.with_(name=names[0]), s.with_(name=names[1])


def simulate_bufferize(a: int, s: Stream, name="bufferize") -> Stream:
    if not isinstance(s.dtype, Scalar):
        raise StepTypeError("Bufferize requires a Scalar stream")
    if not 0 < a <= s.rank:
        raise ArgError(f"Bufferize a={a} out of range for rank {s.rank}")
    dtype = Buffer(SCALAR, s.dims[:a])
    return Stream(name, dtype, s.dims[a:], dict(s.ctx), [Tensor(t.a.copy()) for t in s.data])


def simulate_streamify(s: Stream, name="streamify") -> Stream:
    if not isinstance(s.dtype, Buffer):
        raise StepTypeError("Streamify requires a Buffer stream")
    dims = tuple(s.dtype.bufshape) + s.dims
    return Stream(name, SCALAR, dims, dict(s.ctx), [Tensor(t.a.copy()) for t in s.data])


def simulate_repeat(n: Dim, s: Stream, name="repeat") -> Stream:
    extent = n.resolve(s.ctx)
    dims = (n,) + s.dims
    axis = s.rank  # new innermost level sits after the existing dim axes
    data = [
        Tensor(np.repeat(np.expand_dims(t.a, axis=axis), extent, axis=axis))
        for t in s.data
    ]
    return Stream(name, s.dtype, dims, dict(s.ctx), data)


def simulate_repeat_ref(data: Stream, ref: Stream, name="repeatref") -> Stream:
    if not _dims_equal(ref.dims[1:], data.dims):
        raise StepTypeError(
            f"RepeatRef: ref dims[1:] {ref.dims[1:]} must match data dims {data.dims}"
        )
    ctx = _merge_ctx(data.ctx, ref.ctx)
    out = simulate_repeat(ref.dims[0], data.with_(ctx=ctx), name=name)
    out.dims = tuple(ref.dims)
    out.validate()
    return out


def simulate_promote(b: int, s: Stream, name="promote") -> Stream:
    if not 0 <= b <= s.rank:
        raise ArgError(f"Promote b={b} out of range for rank {s.rank}")
    dims = s.dims[:b] + (UNIT,) + s.dims[b:]
    axis = s.rank - b
    data = [Tensor(np.expand_dims(t.a, axis=axis)) for t in s.data]
    return Stream(name, s.dtype, dims, dict(s.ctx), data)


def simulate_flatten(b: int, s: Stream, name="flatten") -> Stream:
    if s.rank < 2:
        raise ArgError("Flatten requires rank >= 2")
    if not 0 <= b <= s.rank - 2:
        raise ArgError(f"Flatten b={b} out of range for rank {s.rank}")
    inner, outer = s.dims[b], s.dims[b + 1]
    merged = Dim(f"({outer.name}*{inner.name})")
    ctx = dict(s.ctx)
    ctx[merged.name] = outer.resolve(s.ctx) * inner.resolve(s.ctx)
    dims = s.dims[:b] + (merged,) + s.dims[b + 2:]
    axis = s.rank - 2 - b  # outer level's layout axis; merges with axis+1
    data = []
    for t in s.data:
        shape = list(t.shape)
        shape[axis:axis + 2] = [shape[axis] * shape[axis + 1]]
        data.append(Tensor(t.a.reshape(shape)))
    return Stream(name, s.dtype, dims, ctx, data)


def simulate_partition(n_parts: int, data: Stream, idx: Stream, name="part") -> list[RaggedStream]:
    if not isinstance(idx.dtype, Multihot):
        raise StepTypeError("Partition index stream must be Multihot")
    if idx.dtype.e.resolve(idx.ctx) != n_parts:
        raise StepTypeError(
            f"Partition N={n_parts} != index multihot width {idx.dtype.e.resolve(idx.ctx)}"
        )
    if not _dims_equal(idx.dims, data.dims):
        raise StepTypeError(f"Partition dims mismatch: {data.dims} vs {idx.dims}")
    if data.rank < 1:
        raise StepTypeError("Partition requires rank >= 1")
    ctx = _merge_ctx(data.ctx, idx.ctx)
    outer_dims = data.dims[1:]
    inner = data.dims[0].resolve(ctx)
    outer_ext = tuple(d.resolve(ctx) for d in reversed(outer_dims))
    outs = [
        RaggedStream(f"{name}[{j}]", data.dtype, outer_dims, dict(ctx))
        for j in range(n_parts)
    ]
    outer_iter = np.ndindex(*outer_ext) if outer_ext else iter([()])
    for opos in outer_iter:
        for o in outs:
            o.buckets[opos] = []
        for i in range(inner):
            bits = idx.data[0].a[opos + (i,)]
            token = [np.array(t.a[opos + (i,)], dtype=np.float32) for t in data.data]
            for j in range(n_parts):
                if bits[j] > 0.5:
                    outs[j].buckets[opos].append([x.copy() for x in token])
    return outs


def simulate_merge(fn: Fn, parts: list[RaggedStream], idx: Stream, fnenv: FnEnv,
                   name="merge") -> Stream:
    if fn.kind != "stateful":
        raise StepTypeError(f"Merge requires a stateful fn, got {fn.name}")
    if not isinstance(idx.dtype, Multihot):
        raise StepTypeError("Merge index stream must be Multihot")
    n_parts = idx.dtype.e.resolve(idx.ctx)
    if n_parts != len(parts):
        raise StepTypeError(f"Merge got {len(parts)} parts for multihot width {n_parts}")
    for p in parts:
        if p.dtype != fn.input_dtype:
            raise StepTypeError(f"Merge fn {fn.name} input {fn.input_dtype!r} != {p.dtype!r}")
        if not _dims_equal(p.outer_dims, idx.dims[1:]):
            raise StepTypeError("Merge parts/index outer dims mismatch")
    ctx = dict(idx.ctx)
    inner = idx.dims[0].resolve(ctx)
    outer_ext = tuple(d.resolve(ctx) for d in reversed(idx.dims[1:]))
    out_leaf_ext = [tuple(d.resolve(ctx) for d in e) for e in leaf_extents(fn.output_dtype)]
    base = idx.layout_extents()
    out_leaves = [np.zeros(base + e, dtype=np.float32) for e in out_leaf_ext]
    outer_iter = np.ndindex(*outer_ext) if outer_ext else iter([()])
    for opos in outer_iter:
        cursors = [0] * n_parts
        for i in range(inner):
            bits = idx.data[0].a[opos + (i,)]
            state = fn.init_state(ctx)
            for j in range(n_parts):
                if bits[j] > 0.5:
                    bucket = parts[j].buckets.get(opos, [])
                    if cursors[j] >= len(bucket):
                        raise StreamUnderflow(f"part {j} exhausted at {opos + (i,)}")
                    state = fnenv.call_step(fn, state, bucket[cursors[j]])
                    cursors[j] += 1
            for leaf, st in zip(out_leaves, state):
                leaf[opos + (i,)] = st
        for j in range(n_parts):
            if cursors[j] != len(parts[j].buckets.get(opos, [])):
                raise StreamOverflow(f"part {j} has leftover tokens at {opos}")
    return Stream(name, fn.output_dtype, idx.dims, ctx, [Tensor(t) for t in out_leaves])


# ---------------------------------------------------------------------------
# Program execution
# ---------------------------------------------------------------------------

def _param_dim(value) -> Dim:
    if isinstance(value, int):
        return Dim(str(value), value)
    return Dim(str(value))


def resolve_count(value, ctx: dict[str, int]) -> int:
    """Resolve a count-valued parameter (int literal, symbol, or X_value)."""
    if isinstance(value, int):
        return value
    text = str(value)
    if text.endswith("_value"):
        text = text[: -len("_value")]
    if text in ctx:
        return int(ctx[text])
    raise StepTypeError(f"cannot resolve count parameter {value!r}")


def run_program(p: Program, env: dict[str, Stream], fnenv: FnEnv) -> list[Stream]:
    """Execute statements in order; returns the streams named by `return`."""
    scope: dict[str, object] = dict(env)

    def lookup(ref: Ref):
        if ref.var not in scope:
            raise StepTypeError(f"undefined variable {ref.var}")
        val = scope[ref.var]
        if ref.index is not None:
            if not isinstance(val, list):
                raise StepTypeError(f"{ref.var} is not a stream list")
            if not 0 <= ref.index < len(val):
                raise StepTypeError(f"index {ref.index} out of range for {ref.var}")
            return val[ref.index]
        return val

    for i, stmt in enumerate(p.statements):
        try:
            if isinstance(stmt.call, MapEach):
                fns = fnenv.fn_lists.get(stmt.call.fn_list)
                if fns is None:
                    raise StepTypeError(f"unknown fn list: {stmt.call.fn_list}")
                src = scope.get(stmt.call.source)
                if not isinstance(src, list):
                    raise StepTypeError(f"{stmt.call.source} is not a stream list")
                if len(fns) != len(src):
                    raise StepTypeError(
                        f"fn list length {len(fns)} != stream list length {len(src)}"
                    )
                scope[stmt.targets[0]] = [
                    simulate_map(fn, s, fnenv, name=f"{stmt.targets[0]}[{j}]")
                    for j, (fn, s) in enumerate(zip(fns, src))
                ]
                continue
            call: PrimCall = stmt.call
            prim = call.prim
            if prim == "Map":
                s = lookup(call.operands[0])
                result = simulate_map(fnenv.resolve(call.param("fn")), s, fnenv,
                                      name=stmt.targets[0])
            elif prim == "Accum":
                result = simulate_accum(
                    fnenv.resolve(call.param("fn")), int(call.param("b")),
                    lookup(call.operands[0]), fnenv, name=stmt.targets[0])
            elif prim == "Zip":
                result = simulate_zip(lookup(call.operands[0]), lookup(call.operands[1]),
                                      name=stmt.targets[0])
            elif prim == "Copy":
                result = simulate_copy(lookup(call.operands[0]), names=stmt.targets)
                scope[stmt.targets[0]], scope[stmt.targets[1]] = result
                continue
            elif prim == "Partition":
                data = lookup(call.operands[0])
                idx = lookup(call.operands[1])
                n = resolve_count(call.param("N"), idx.ctx)
                result = simulate_partition(n, data, idx, name=stmt.targets[0])
            elif prim == "Merge":
                parts = scope.get(call.operands[0].var)
                if not isinstance(parts, list):
                    raise StepTypeError(f"{call.operands[0].var} is not a stream list")
                result = simulate_merge(fnenv.resolve(call.param("fn")), parts,
                                        lookup(call.operands[1]), fnenv,
                                        name=stmt.targets[0])
            elif prim == "Bufferize":
                result = simulate_bufferize(int(call.param("a")), lookup(call.operands[0]),
                                            name=stmt.targets[0])
            elif prim == "Streamify":
                result = simulate_streamify(lookup(call.operands[0]), name=stmt.targets[0])
            elif prim == "Repeat":
                result = simulate_repeat(_param_dim(call.param("n")),
                                         lookup(call.operands[0]), name=stmt.targets[0])
            elif prim == "RepeatRef":
                result = simulate_repeat_ref(lookup(call.operands[0]),
                                             lookup(call.operands[1]), name=stmt.targets[0])
            elif prim == "Promote":
                result = simulate_promote(int(call.param("b")), lookup(call.operands[0]),
                                          name=stmt.targets[0])
            elif prim == "Flatten":
                result = simulate_flatten(int(call.param("b")), lookup(call.operands[0]),
                                          name=stmt.targets[0])
            else:
                raise StepTypeError(f"unknown primitive {prim}")
            scope[stmt.targets[0]] = result
        except SimError:
            raise
        except Exception as exc:
            raise SimError(i, exc) from exc

    outs = []
    for name in p.returns:
        if name not in scope:
            raise SimError(len(p.statements), KeyError(f"returned undefined name {name}"))
        outs.append(scope[name])
    return outs
