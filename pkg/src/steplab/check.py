"""Static checks over program ASTs: type checking, single-consumption
(affine) analysis, and mechanical repair by Copy insertion.

The affine rule: every stream variable may be consumed at most once; Copy is
the only primitive that legitimately fans a stream out.  Two counting modes
exist:

* ``strict`` — appearing in the final ``return`` also consumes the stream.
* ``waiver`` — returns are free; only primitive operands consume.

Repair inserts Copy chains in front of the first consuming statement.  For a
stream ``X`` used ``u`` times the chain is::

    X_0, X_1 = step.Copy().apply(X)
    X_2, X_3 = step.Copy().apply(X_0)
    ...

with ``u - 1`` copies; the names not consumed by the chain itself are handed
to the uses in textual order.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import PrimitiveRuleViolation, StepTypeError, UndefinedVariable
from .ir import MapEach, PrimCall, Program, Ref, Stmt
from .lang import (
    SCALAR, Buffer, Dim, Dtype, Fn, Multihot, Scalar, TupleType, UNIT,
)
from .sim import resolve_count


# ---------------------------------------------------------------------------
# Type checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SType:
    """Static stream type: dtype plus innermost-first dims."""

    dtype: Dtype
    dims: tuple[Dim, ...]

    @property
    def rank(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class SListType:
    """Static type of a Partition/map-each result: n ragged streams."""

    elem_dtype: Dtype
    outer_dims: tuple[Dim, ...]
    n: int


def _dim_eq(a: Dim, b: Dim, ctx: dict[str, int]) -> bool:
    try:
        return a.resolve(ctx) == b.resolve(ctx)
    except Exception:
        return a.name == b.name


def _dims_eq(a, b, ctx) -> bool:
    return len(a) == len(b) and all(_dim_eq(x, y, ctx) for x, y in zip(a, b))


def _dtype_eq(a: Dtype, b: Dtype, ctx: dict[str, int]) -> bool:
    if isinstance(a, Scalar) and isinstance(b, Scalar):
        return True
    if isinstance(a, Buffer) and isinstance(b, Buffer):
        return _dims_eq(a.bufshape, b.bufshape, ctx)
    if isinstance(a, Multihot) and isinstance(b, Multihot):
        return _dim_eq(a.e, b.e, ctx)
    if isinstance(a, TupleType) and isinstance(b, TupleType):
        return len(a.members) == len(b.members) and all(
            _dtype_eq(x, y, ctx) for x, y in zip(a.members, b.members)
        )
    return False


def typecheck_program(
    p: Program,
    input_types: dict[str, SType],
    fns: dict[str, Fn],
    fn_lists: dict[str, list[Fn]],
    ctx: dict[str, int],
) -> dict[str, SType | SListType]:
    """Check every statement; returns the full variable → type environment.

    Raises UndefinedVariable for use-before-def and PrimitiveRuleViolation
    (carrying the statement index) for any per-primitive rule failure.
    """
    scope: dict[str, SType | SListType] = dict(input_types)

    def fail(i: int, msg: str):
        raise PrimitiveRuleViolation(i, msg)

    def lookup(i: int, ref: Ref) -> SType:
        if ref.var not in scope:
            raise UndefinedVariable(f"statement {i}: undefined variable {ref.var}")
        t = scope[ref.var]
        if ref.index is not None:
            if not isinstance(t, SListType):
                fail(i, f"{ref.var} is not a stream list")
            if not 0 <= ref.index < t.n:
                fail(i, f"index {ref.index} out of range for {ref.var}")
            # indexed partition elements are ragged; callers must tolerate that
            return SType(t.elem_dtype, t.outer_dims)
        if isinstance(t, SListType):
            fail(i, f"{ref.var} is a stream list; index it or map over it")
        return t

    def want_fn(i: int, name, kind: str) -> Fn:
        fn = fns.get(name)
        if fn is None:
            fail(i, f"unknown fn {name}")
        if fn.kind != kind:
            fail(i, f"fn {name} must be {kind}")
        return fn

    for i, stmt in enumerate(p.statements):
        if isinstance(stmt.call, MapEach):
            fl = fn_lists.get(stmt.call.fn_list)
            if fl is None:
                fail(i, f"unknown fn list {stmt.call.fn_list}")
            if stmt.call.source not in scope:
                raise UndefinedVariable(
                    f"statement {i}: undefined variable {stmt.call.source}")
            src = scope[stmt.call.source]
            if not isinstance(src, SListType):
                fail(i, f"{stmt.call.source} is not a stream list")
            if len(fl) != src.n:
                fail(i, f"fn list length {len(fl)} != stream list length {src.n}")
            out_dtype = fl[0].output_dtype
            for fn in fl:
                if fn.kind != "pure":
                    fail(i, f"fn {fn.name} in map-each must be pure")
                if not _dtype_eq(fn.input_dtype, src.elem_dtype, ctx):
                    fail(i, f"fn {fn.name} input dtype mismatch")
                if not _dtype_eq(fn.output_dtype, out_dtype, ctx):
                    fail(i, "map-each fns disagree on output dtype")
            scope[stmt.targets[0]] = SListType(out_dtype, src.outer_dims, src.n)
            continue

        call: PrimCall = stmt.call
        prim = call.prim
        if prim == "Map":
            s = lookup(i, call.operands[0])
            fn = want_fn(i, call.param("fn"), "pure")
            if not _dtype_eq(fn.input_dtype, s.dtype, ctx):
                fail(i, f"Map fn {fn.name} input {fn.input_dtype!r} != {s.dtype!r}")
            if call.operands[0].index is not None:
                src_list = scope[call.operands[0].var]
                result = None  # handled below: mapping one ragged element
                scope[stmt.targets[0]] = SListType(fn.output_dtype, src_list.outer_dims, 1)
                continue
            result = SType(fn.output_dtype, s.dims)
        elif prim == "Accum":
            s = lookup(i, call.operands[0])
            fn = want_fn(i, call.param("fn"), "stateful")
            b = int(call.param("b"))
            if not 0 < b <= s.rank:
                fail(i, f"Accum b={b} out of range for rank {s.rank}")
            if not _dtype_eq(fn.input_dtype, s.dtype, ctx):
                fail(i, f"Accum fn {fn.name} input {fn.input_dtype!r} != {s.dtype!r}")
            result = SType(fn.output_dtype, s.dims[b:])
        elif prim == "Zip":
            a = lookup(i, call.operands[0])
            b = lookup(i, call.operands[1])
            if not _dims_eq(a.dims, b.dims, ctx):
                fail(i, f"Zip dims mismatch: {a.dims} vs {b.dims}")
            result = SType(TupleType((a.dtype, b.dtype)), a.dims)
        elif prim == "Copy":
            s = lookup(i, call.operands[0])
            scope[stmt.targets[0]] = s
            scope[stmt.targets[1]] = s
            continue
        elif prim == "Partition":
            data = lookup(i, call.operands[0])
            idx = lookup(i, call.operands[1])
            try:
                n = resolve_count(call.param("N"), ctx)
            except StepTypeError as exc:
                fail(i, str(exc))
            if data.rank < 1:
                fail(i, "Partition requires rank >= 1")
            if not isinstance(idx.dtype, Multihot):
                fail(i, "Partition index must be Multihot")
            if _dim_eq(idx.dtype.e, Dim(str(n), n), ctx) is False:
                fail(i, f"Partition N={n} != multihot width {idx.dtype.e}")
            if not _dims_eq(data.dims, idx.dims, ctx):
                fail(i, "Partition data/index dims mismatch")
            scope[stmt.targets[0]] = SListType(data.dtype, data.dims[1:], n)
            continue
        elif prim == "Merge":
            if call.operands[0].var not in scope:
                raise UndefinedVariable(
                    f"statement {i}: undefined variable {call.operands[0].var}")
            parts = scope[call.operands[0].var]
            if not isinstance(parts, SListType):
                fail(i, f"{call.operands[0].var} is not a stream list")
            idx = lookup(i, call.operands[1])
            fn = want_fn(i, call.param("fn"), "stateful")
            if not isinstance(idx.dtype, Multihot):
                fail(i, "Merge index must be Multihot")
            if idx.rank < 1:
                fail(i, "Merge index requires rank >= 1")
            if not _dtype_eq(fn.input_dtype, parts.elem_dtype, ctx):
                fail(i, f"Merge fn {fn.name} input dtype mismatch")
            if not _dims_eq(parts.outer_dims, idx.dims[1:], ctx):
                fail(i, "Merge parts/index outer dims mismatch")
            result = SType(fn.output_dtype, idx.dims)
        elif prim == "Bufferize":
            s = lookup(i, call.operands[0])
            a = int(call.param("a"))
            if not isinstance(s.dtype, Scalar):
                fail(i, "Bufferize requires a Scalar stream")
            if not 0 < a <= s.rank:
                fail(i, f"Bufferize a={a} out of range for rank {s.rank}")
            result = SType(Buffer(SCALAR, s.dims[:a]), s.dims[a:])
        elif prim == "Streamify":
            s = lookup(i, call.operands[0])
            if not isinstance(s.dtype, Buffer):
                fail(i, "Streamify requires a Buffer stream")
            result = SType(SCALAR, tuple(s.dtype.bufshape) + s.dims)
        elif prim == "Repeat":
            s = lookup(i, call.operands[0])
            n = call.param("n")
            d = Dim(str(n), n) if isinstance(n, int) else Dim(str(n))
            try:
                d.resolve(ctx)
            except Exception:
                fail(i, f"Repeat count {n} not resolvable")
            result = SType(s.dtype, (d,) + s.dims)
        elif prim == "RepeatRef":
            data = lookup(i, call.operands[0])
            ref = lookup(i, call.operands[1])
            if ref.rank < 1:
                fail(i, "RepeatRef reference must have rank >= 1")
            if not _dims_eq(ref.dims[1:], data.dims, ctx):
                fail(i, "RepeatRef reference dims[1:] must match data dims")
            result = SType(data.dtype, ref.dims)
        elif prim == "Promote":
            s = lookup(i, call.operands[0])
            b = int(call.param("b"))
            if not 0 <= b <= s.rank:
                fail(i, f"Promote b={b} out of range for rank {s.rank}")
            result = SType(s.dtype, s.dims[:b] + (UNIT,) + s.dims[b:])
        elif prim == "Flatten":
            s = lookup(i, call.operands[0])
            b = int(call.param("b"))
            if s.rank < 2 or not 0 <= b <= s.rank - 2:
                fail(i, f"Flatten b={b} out of range for rank {s.rank}")
            inner, outer = s.dims[b], s.dims[b + 1]
            merged = Dim(f"({outer.name}*{inner.name})",
                         outer.resolve(ctx) * inner.resolve(ctx)
                         if outer.name in ctx or outer.size is not None else None)
            result = SType(s.dtype, s.dims[:b] + (merged,) + s.dims[b + 2:])
        else:
            fail(i, f"unknown primitive {prim}")
        scope[stmt.targets[0]] = result

    for name in p.returns:
        if name not in scope:
            raise UndefinedVariable(f"return: undefined variable {name}")
        if isinstance(scope[name], SListType):
            raise PrimitiveRuleViolation(len(p.statements),
                                         f"return: {name} is a stream list")
    return scope


# ---------------------------------------------------------------------------
# Affine (single-consumption) analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineReport:
    """violations: (reference text, statement indices of its use sites);
    index len(statements) denotes the return line."""

    violations: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class UseSite:
    stmt_index: int  # len(statements) marks the return line
    operand_slot: int
    ref: Ref


def _collect_uses(p: Program, mode: str) -> dict[str, list[UseSite]]:
    if mode not in ("strict", "waiver"):
        raise ValueError(f"bad affine mode: {mode}")
    uses: dict[str, list[UseSite]] = {}
    for i, stmt in enumerate(p.statements):
        if isinstance(stmt.call, MapEach):
            refs = [Ref(stmt.call.source)]
        else:
            refs = list(stmt.call.operands)
        for slot, ref in enumerate(refs):
            uses.setdefault(ref.text(), []).append(UseSite(i, slot, ref))
    if mode == "strict":
        for slot, name in enumerate(p.returns):
            uses.setdefault(name, []).append(
                UseSite(len(p.statements), slot, Ref(name)))
    return uses


def affine_check(p: Program, mode: str = "strict") -> AffineReport:
    """Single-consumption analysis; report.ok iff no stream is over-consumed.

    An unindexed use of a partition list conflicts with any indexed use of
    the same variable.
    """
    uses = _collect_uses(p, mode)
    violations = []
    whole: dict[str, list[int]] = {}
    for key, sites in sorted(uses.items(), key=lambda kv: kv[1][0].stmt_index):
        if len(sites) > 1:
            violations.append((key, tuple(s.stmt_index for s in sites)))
        if sites[0].ref.index is None:
            whole.setdefault(sites[0].ref.var, []).extend(
                s.stmt_index for s in sites)
    for key, sites in sorted(uses.items(), key=lambda kv: kv[1][0].stmt_index):
        ref = sites[0].ref
        if ref.index is not None and ref.var in whole:
            violations.append(
                (key, tuple(sorted([s.stmt_index for s in sites] + whole[ref.var]))))
    return AffineReport(tuple(violations))


def affine_repair(p: Program, mode: str = "strict") -> Program:
    """Insert Copy chains so every violating plain stream is consumed once."""
    uses = _collect_uses(p, mode)
    offenders = [
        (key, sites) for key, sites in uses.items()
        if len(sites) > 1 and sites[0].ref.index is None
    ]
    if not offenders:
        return p
    # textual order of first use keeps the output deterministic
    offenders.sort(key=lambda kv: (kv[1][0].stmt_index, kv[1][0].operand_slot))

    rename: dict[tuple[int, int, str], str] = {}
    inserts: dict[int, list[Stmt]] = {}
    for var, sites in offenders:
        u = len(sites)
        copies: list[Stmt] = []
        source = var
        consumed_by_chain = set()
        for k in range(u - 1):
            t0, t1 = f"{var}_{2 * k}", f"{var}_{2 * k + 1}"
            copies.append(Stmt((t0, t1), PrimCall("Copy", (), (Ref(source),))))
            consumed_by_chain.add(source)
            source = t0
        free = [f"{var}_{j}" for j in range(2 * (u - 1))
                if f"{var}_{j}" not in consumed_by_chain]
        # the first use never precedes the definition, so inserting the chain
        # right before it is always legal (index == len means "before return")
        inserts.setdefault(sites[0].stmt_index, []).extend(copies)
        for site, new_name in zip(sites, free):
            rename[(site.stmt_index, site.operand_slot, var)] = new_name

    def rewrite_ref(i: int, slot: int, ref: Ref) -> Ref:
        new = rename.get((i, slot, ref.var))
        return Ref(new, ref.index) if new else ref

    statements: list[Stmt] = []
    for i, stmt in enumerate(p.statements):
        statements.extend(inserts.get(i, []))
        if isinstance(stmt.call, MapEach):
            new_src = rename.get((i, 0, stmt.call.source), stmt.call.source)
            statements.append(Stmt(stmt.targets, MapEach(stmt.call.fn_list, new_src)))
        else:
            ops = tuple(rewrite_ref(i, s, r) for s, r in enumerate(stmt.call.operands))
            statements.append(Stmt(stmt.targets,
                                   PrimCall(stmt.call.prim, stmt.call.params, ops)))
    statements.extend(inserts.get(len(p.statements), []))
    returns = tuple(
        rename.get((len(p.statements), slot, name), name)
        for slot, name in enumerate(p.returns)
    )
    return Program(tuple(statements), returns)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

_SHAPE_TRANSFORMS = ("Promote", "Repeat", "RepeatRef", "Flatten")


def program_metrics(p: Program, task=None) -> dict:
    """Complexity triple: primitive-call count, shape-transform count, and
    the number of specialized fns declared by the task (0 without a task)."""
    counts = Counter()
    for stmt in p.statements:
        if isinstance(stmt.call, MapEach):
            counts["MapEach"] += 1
        else:
            counts[stmt.call.prim] += 1
    return {
        "loc": len(p.statements),
        "shape_transforms": sum(counts[k] for k in _SHAPE_TRANSFORMS),
        "specialized_fns": len(task.fns) if task is not None else 0,
        "primitive_counts": dict(counts),
    }
