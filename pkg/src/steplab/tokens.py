"""Token-level interpreter used as a differential oracle for the tensor engine.

A stream is encoded as a flat list of tokens:

* ``Value(payload)`` — one value token; the payload is a tuple of numpy
  leaves in dtype leaf order.
* ``Stop(level)`` — end of a group.  The maximal-stop convention is used: a
  single ``Stop(k)`` marks the simultaneous end of the ``k`` innermost
  levels, so a rank-r trace ends with ``Stop(r)`` and rank-0 traces carry no
  stop at all.

`interpret_tokens` re-executes a program purely on these token lists, one
transducer per primitive, without ever materializing layout tensors.  The
differential check converts the tensor engine's outputs to traces and
requires exact structural agreement plus numeric closeness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SimError, StepTypeError, StreamOverflow, StreamUnderflow
from .ir import MapEach, PrimCall, Program, Ref
from .lang import Fn, Stream
from .sim import FnEnv, resolve_count
from .tensor import ATOL_DEFAULT, RTOL_DEFAULT


@dataclass(frozen=True)
class Value:
    payload: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class Stop:
    level: int

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("stop level must be >= 1")


Token = Value | Stop


@dataclass
class TraceStream:
    """A token trace plus the minimal shape facts the transducers need."""

    dims_ext: tuple[int, ...]  # innermost-first extents
    ctx: dict[str, int]
    tokens: list[Token]

    @property
    def rank(self) -> int:
        return len(self.dims_ext)


# ---------------------------------------------------------------------------
# Stream <-> trace conversion
# ---------------------------------------------------------------------------

def stream_to_trace(s: Stream) -> TraceStream:
    ext = s.layout_extents()  # outermost-first
    tokens: list[Token] = []
    if not ext:
        tokens.append(Value(tuple(t.a.copy() for t in s.data)))
        return TraceStream((), dict(s.ctx), tokens)
    for pos in np.ndindex(*ext):
        tokens.append(Value(tuple(np.asarray(t.a[pos], dtype=np.float32) for t in s.data)))
        k = 0
        for level in range(len(ext)):
            axis = len(ext) - 1 - level  # innermost level = last layout axis
            if pos[axis] == ext[axis] - 1:
                k += 1
            else:
                break
        if k:
            tokens.append(Stop(k))
    return TraceStream(tuple(reversed(ext)), dict(s.ctx), tokens)


def traces_equal(a: list[Token], b: list[Token],
                 rtol: float = RTOL_DEFAULT, atol: float = ATOL_DEFAULT) -> bool:
    if len(a) != len(b):
        return False
    for ta, tb in zip(a, b):
        if type(ta) is not type(tb):
            return False
        if isinstance(ta, Stop):
            if ta.level != tb.level:
                return False
        else:
            if len(ta.payload) != len(tb.payload):
                return False
            for x, y in zip(ta.payload, tb.payload):
                if x.shape != y.shape:
                    return False
                if not np.all(np.abs(x - y) <= atol + rtol * np.abs(y)):
                    return False
    return True


# ---------------------------------------------------------------------------
# Transducers
# ---------------------------------------------------------------------------

def _map_tokens(fn: Fn, tokens: list[Token], fnenv: FnEnv) -> list[Token]:
    out: list[Token] = []
    for tok in tokens:
        if isinstance(tok, Value):
            out.append(Value(tuple(fnenv.call_pure(fn, list(tok.payload)))))
        else:
            out.append(tok)
    return out


def _accum_tokens(fn: Fn, b: int, s: TraceStream, fnenv: FnEnv) -> TraceStream:
    out: list[Token] = []
    state = fn.init_state(s.ctx)
    for tok in s.tokens:
        if isinstance(tok, Value):
            state = fnenv.call_step(fn, state, list(tok.payload))
        elif tok.level >= b:
            out.append(Value(tuple(state)))
            state = fn.init_state(s.ctx)
            if tok.level - b > 0:
                out.append(Stop(tok.level - b))
        # stops below the fold depth stay inside the running fold
    if s.rank == 0 or b > s.rank:
        raise StepTypeError(f"Accum b={b} out of range for rank {s.rank}")
    return TraceStream(s.dims_ext[b:], dict(s.ctx), out)


def _zip_tokens(a: TraceStream, b: TraceStream) -> TraceStream:
    if len(a.tokens) != len(b.tokens):
        raise StepTypeError("Zip traces disagree in length")
    out: list[Token] = []
    for ta, tb in zip(a.tokens, b.tokens):
        if isinstance(ta, Value) and isinstance(tb, Value):
            out.append(Value(ta.payload + tb.payload))
        elif isinstance(ta, Stop) and isinstance(tb, Stop) and ta.level == tb.level:
            out.append(ta)
        else:
            raise StepTypeError("Zip traces disagree in structure")
    ctx = dict(a.ctx)
    ctx.update(b.ctx)
    return TraceStream(a.dims_ext, ctx, out)


def _bufferize_tokens(a: int, s: TraceStream) -> TraceStream:
    if not 0 < a <= s.rank:
        raise StepTypeError(f"Bufferize a={a} out of range for rank {s.rank}")
    shape = tuple(reversed(s.dims_ext[:a]))  # buffer leaves are layout-ordered
    out: list[Token] = []
    group: list[np.ndarray] = []
    for tok in s.tokens:
        if isinstance(tok, Value):
            group.append(tok.payload[0])
        elif tok.level >= a:
            buf = np.stack([np.asarray(g, dtype=np.float32) for g in group]).reshape(shape)
            out.append(Value((buf,)))
            group = []
            if tok.level - a > 0:
                out.append(Stop(tok.level - a))
        # stops inside the buffered region are layout, not boundaries
    return TraceStream(s.dims_ext[a:], dict(s.ctx), out)


def _streamify_tokens(s: TraceStream) -> TraceStream:
    out: list[Token] = []
    pending = 0  # stop level owed after the last expanded buffer
    buf_ext: tuple[int, ...] = ()
    for tok in s.tokens:
        if isinstance(tok, Value):
            if pending:
                out.append(Stop(pending))
            buf = tok.payload[0]
            buf_ext = tuple(reversed(buf.shape))
            for v in buf.reshape(-1):
                out.append(Value((np.asarray(v, dtype=np.float32),)))
            pending = buf.ndim
        else:
            out.append(Stop(tok.level + pending))
            pending = 0
    if pending:  # rank-0 buffer stream: trailing stop closes the new levels
        out.append(Stop(pending))
    return TraceStream(buf_ext + s.dims_ext, dict(s.ctx), out)


def _repeat_tokens(n: int, s: TraceStream) -> TraceStream:
    out: list[Token] = []
    toks = s.tokens
    i = 0
    while i < len(toks):
        tok = toks[i]
        if isinstance(tok, Value):
            out.extend([tok] * n)
            if i + 1 < len(toks) and isinstance(toks[i + 1], Stop):
                out.append(Stop(toks[i + 1].level + 1))
                i += 2
                continue
            out.append(Stop(1))
        else:
            out.append(Stop(tok.level + 1))
        i += 1
    return TraceStream((n,) + s.dims_ext, dict(s.ctx), out)


def _promote_tokens(b: int, s: TraceStream) -> TraceStream:
    if not 0 <= b <= s.rank:
        raise StepTypeError(f"Promote b={b} out of range for rank {s.rank}")
    if b == 0:
        out = _repeat_tokens(1, s)
        out.dims_ext = (1,) + s.dims_ext
        return out
    out_toks: list[Token] = []
    for tok in s.tokens:
        if isinstance(tok, Stop) and tok.level >= b:
            out_toks.append(Stop(tok.level + 1))
        else:
            out_toks.append(tok)
    dims = s.dims_ext[:b] + (1,) + s.dims_ext[b:]
    return TraceStream(dims, dict(s.ctx), out_toks)


def _flatten_tokens(b: int, s: TraceStream) -> TraceStream:
    if s.rank < 2 or not 0 <= b <= s.rank - 2:
        raise StepTypeError(f"Flatten b={b} out of range for rank {s.rank}")
    out: list[Token] = []
    for tok in s.tokens:
        if isinstance(tok, Value) or tok.level <= b:
            out.append(tok)
        elif tok.level == b + 1:
            if b > 0:
                out.append(Stop(b))
        else:
            out.append(Stop(tok.level - 1))
    dims = s.dims_ext[:b] + (s.dims_ext[b] * s.dims_ext[b + 1],) + s.dims_ext[b + 2:]
    return TraceStream(dims, dict(s.ctx), out)


def _partition_tokens(n: int, data: TraceStream, idx: TraceStream) -> list[TraceStream]:
    if len(data.tokens) != len(idx.tokens):
        raise StepTypeError("Partition traces disagree in length")
    if data.rank < 1:
        raise StepTypeError("Partition requires rank >= 1")
    outs: list[list[Token]] = [[] for _ in range(n)]
    for dtok, itok in zip(data.tokens, idx.tokens):
        if isinstance(dtok, Value):
            if not isinstance(itok, Value):
                raise StepTypeError("Partition traces disagree in structure")
            bits = itok.payload[0]
            if bits.shape != (n,):
                raise StepTypeError(f"Partition index width {bits.shape} != ({n},)")
            for j in range(n):
                if bits[j] > 0.5:
                    outs[j].append(dtok)
        else:
            if not (isinstance(itok, Stop) and itok.level == dtok.level):
                raise StepTypeError("Partition traces disagree in structure")
            # every part sees every group boundary, even for empty groups
            for j in range(n):
                outs[j].append(dtok)
    ctx = dict(data.ctx)
    ctx.update(idx.ctx)
    return [TraceStream(data.dims_ext[1:], dict(ctx), toks) for toks in outs]


def _group_values(tokens: list[Token]) -> list[list[Value]]:
    """Split a ragged part trace into per-group value lists."""
    groups: list[list[Value]] = []
    cur: list[Value] = []
    for tok in tokens:
        if isinstance(tok, Value):
            cur.append(tok)
        else:
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups


def _merge_tokens(fn: Fn, parts: list[TraceStream], idx: TraceStream,
                  fnenv: FnEnv) -> TraceStream:
    part_groups = [_group_values(p.tokens) for p in parts]
    cursors = [0] * len(parts)  # value cursor within the current group
    group_no = 0
    out: list[Token] = []
    for tok in idx.tokens:
        if isinstance(tok, Value):
            bits = tok.payload[0]
            state = fn.init_state(idx.ctx)
            for j in range(len(parts)):
                if bits[j] > 0.5:
                    groups = part_groups[j]
                    if group_no >= len(groups) or cursors[j] >= len(groups[group_no]):
                        raise StreamUnderflow(f"part {j} exhausted in group {group_no}")
                    state = fnenv.call_step(fn, state, list(groups[group_no][cursors[j]].payload))
                    cursors[j] += 1
            out.append(Value(tuple(state)))
        else:
            for j in range(len(parts)):
                groups = part_groups[j]
                have = len(groups[group_no]) if group_no < len(groups) else 0
                if cursors[j] != have:
                    raise StreamOverflow(f"part {j} has leftover tokens in group {group_no}")
            out.append(tok)
            group_no += 1
            cursors = [0] * len(parts)
    return TraceStream(idx.dims_ext, dict(idx.ctx), out)


# ---------------------------------------------------------------------------
# Program interpretation
# ---------------------------------------------------------------------------

def interpret_tokens(p: Program, env: dict[str, Stream], fnenv: FnEnv) -> dict[str, TraceStream]:
    """Run the whole program on token traces; returns traces for `return` names."""
    scope: dict[str, object] = {k: stream_to_trace(v) for k, v in env.items()}

    def lookup(ref: Ref):
        if ref.var not in scope:
            raise StepTypeError(f"undefined variable {ref.var}")
        val = scope[ref.var]
        if ref.index is not None:
            if not isinstance(val, list) or not 0 <= ref.index < len(val):
                raise StepTypeError(f"bad indexed reference {ref.text()}")
            return val[ref.index]
        return val

    for i, stmt in enumerate(p.statements):
        try:
            if isinstance(stmt.call, MapEach):
                fns = fnenv.fn_lists.get(stmt.call.fn_list)
                src = scope.get(stmt.call.source)
                if fns is None or not isinstance(src, list) or len(fns) != len(src):
                    raise StepTypeError(f"bad map-each over {stmt.call.fn_list}")
                scope[stmt.targets[0]] = [
                    TraceStream(s.dims_ext, dict(s.ctx), _map_tokens(fn, s.tokens, fnenv))
                    for fn, s in zip(fns, src)
                ]
                continue
            call: PrimCall = stmt.call
            prim = call.prim
            if prim == "Map":
                s = lookup(call.operands[0])
                fn = fnenv.resolve(call.param("fn"))
                result = TraceStream(s.dims_ext, dict(s.ctx), _map_tokens(fn, s.tokens, fnenv))
            elif prim == "Accum":
                result = _accum_tokens(fnenv.resolve(call.param("fn")),
                                       int(call.param("b")), lookup(call.operands[0]), fnenv)
            elif prim == "Zip":
                result = _zip_tokens(lookup(call.operands[0]), lookup(call.operands[1]))
            elif prim == "Copy":
                src = lookup(call.operands[0])
                for t in stmt.targets:
                    scope[t] = TraceStream(src.dims_ext, dict(src.ctx), list(src.tokens))
                continue
            elif prim == "Partition":
                idx = lookup(call.operands[1])
                n = resolve_count(call.param("N"), idx.ctx)
                result = _partition_tokens(n, lookup(call.operands[0]), idx)
            elif prim == "Merge":
                parts = scope.get(call.operands[0].var)
                if not isinstance(parts, list):
                    raise StepTypeError(f"{call.operands[0].var} is not a stream list")
                result = _merge_tokens(fnenv.resolve(call.param("fn")), parts,
                                       lookup(call.operands[1]), fnenv)
            elif prim == "Bufferize":
                result = _bufferize_tokens(int(call.param("a")), lookup(call.operands[0]))
            elif prim == "Streamify":
                result = _streamify_tokens(lookup(call.operands[0]))
            elif prim == "Repeat":
                s = lookup(call.operands[0])
                result = _repeat_tokens(resolve_count(call.param("n"), s.ctx), s)
            elif prim == "RepeatRef":
                data = lookup(call.operands[0])
                ref = lookup(call.operands[1])
                if ref.dims_ext[1:] != data.dims_ext:
                    raise StepTypeError("RepeatRef shape mismatch")
                ctx = dict(data.ctx)
                ctx.update(ref.ctx)
                result = _repeat_tokens(ref.dims_ext[0],
                                        TraceStream(data.dims_ext, ctx, data.tokens))
            elif prim == "Promote":
                result = _promote_tokens(int(call.param("b")), lookup(call.operands[0]))
            elif prim == "Flatten":
                result = _flatten_tokens(int(call.param("b")), lookup(call.operands[0]))
            else:
                raise StepTypeError(f"unknown primitive {prim}")
            scope[stmt.targets[0]] = result
        except SimError:
            raise
        except Exception as exc:
            raise SimError(i, exc) from exc

    out: dict[str, TraceStream] = {}
    for name in p.returns:
        if name not in scope or isinstance(scope[name], list):
            raise SimError(len(p.statements), KeyError(f"bad returned name {name}"))
        out[name] = scope[name]
    return out


def differential_check(p: Program, env: dict[str, Stream], fnenv: FnEnv,
                       rtol: float = RTOL_DEFAULT, atol: float = ATOL_DEFAULT) -> bool:
    """True iff the tensor engine and token interpreter agree on all returns."""
    from .sim import run_program

    dense = run_program(p, env, fnenv)
    traced = interpret_tokens(p, env, fnenv)
    for name, stream in zip(p.returns, dense):
        if not isinstance(stream, Stream):
            raise StepTypeError(f"returned {name} is not a plain stream")
        want = stream_to_trace(stream)
        got = traced[name]
        if want.dims_ext != got.dims_ext:
            return False
        if not traces_equal(want.tokens, got.tokens, rtol=rtol, atol=atol):
            return False
    return True
