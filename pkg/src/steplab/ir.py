"""Structural IR: program ASTs, the surface grammar, and task documents.

The surface grammar mirrors the generated-implementation style::

    E1_0, E1_1 = step.Copy().apply(E1)
    E2 = step.Partition(N=2).apply((E0, E1_0))
    E3 = [step.Map(fn=fn).apply(s) for fn, s in zip(expert_pair, E2)]
    E4 = step.Merge(fn=fn_sum).apply((E3, E1_1))
    return E4

Comments (``# ...``, including trailing) and blank lines are trivia: they are
kept out of the AST but respected by :func:`pure_code_length`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import yaml

from .errors import ParseError, SchemaError
from .lang import Dim, Dtype, parse_dims, parse_dtype

PRIMITIVES = (
    "Map", "Accum", "Zip", "Copy", "Partition", "Merge",
    "Bufferize", "Streamify", "Repeat", "RepeatRef", "Promote", "Flatten",
)

_PARAM_NAMES = {
    "Map": ("fn",),
    "Accum": ("fn", "b"),
    "Zip": (),
    "Copy": (),
    "Partition": ("N",),
    "Merge": ("fn",),
    "Bufferize": ("a",),
    "Streamify": (),
    "Repeat": ("n",),
    "RepeatRef": (),
    "Promote": ("b",),
    "Flatten": ("b",),
}

_OPERAND_ARITY = {
    "Map": 1, "Accum": 1, "Zip": 2, "Copy": 1, "Partition": 2, "Merge": 2,
    "Bufferize": 1, "Streamify": 1, "Repeat": 1, "RepeatRef": 2,
    "Promote": 1, "Flatten": 1,
}


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ref:
    """Stream variable reference, optionally indexed (``E2[0]``)."""

    var: str
    index: int | None = None

    def text(self) -> str:
        return self.var if self.index is None else f"{self.var}[{self.index}]"


@dataclass(frozen=True)
class PrimCall:
    prim: str
    params: tuple[tuple[str, int | str], ...]
    operands: tuple[Ref, ...]

    def param(self, name: str):
        for k, v in self.params:
            if k == name:
                return v
        return None


@dataclass(frozen=True)
class MapEach:
    """``[step.Map(fn=fn).apply(s) for fn, s in zip(<fns>, <streams>)]``."""

    fn_list: str
    source: str


@dataclass(frozen=True)
class Stmt:
    targets: tuple[str, ...]
    call: PrimCall | MapEach


@dataclass(frozen=True)
class Program:
    statements: tuple[Stmt, ...]
    returns: tuple[str, ...]

    def defined_names(self) -> set[str]:
        out = set()
        for s in self.statements:
            out.update(s.targets)
        return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_REF = rf"{_NAME}(?:\[\d+\])?"
_RETURN_RE = re.compile(rf"^return\s+({_REF}(?:\s*,\s*{_REF})*)\s*$")
_CALL_RE = re.compile(
    rf"^({_NAME}(?:\s*,\s*{_NAME})?)\s*=\s*step\.({_NAME})\((.*?)\)\.apply\((.*)\)\s*$"
)
_MAPEACH_RE = re.compile(
    rf"^({_NAME})\s*=\s*\[\s*step\.Map\(fn=fn\)\.apply\(s\)\s*"
    rf"for\s+fn\s*,\s*s\s+in\s+zip\(\s*({_NAME})\s*,\s*({_NAME})\s*\)\s*\]\s*$"
)


def _strip_comment(line: str) -> str:
    # the grammar has no string literals, so '#' always starts a comment
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def _parse_ref(text: str, lineno: int) -> Ref:
    text = text.strip()
    m = re.fullmatch(rf"({_NAME})(?:\[(\d+)\])?", text)
    if not m:
        raise ParseError(f"bad operand reference: {text!r}", line=lineno)
    return Ref(m.group(1), int(m.group(2)) if m.group(2) is not None else None)


def _parse_operands(text: str, lineno: int) -> tuple[tuple[Ref, ...], bool]:
    text = text.strip()
    if text.startswith("(") and text.endswith(")"):
        inner = text[1:-1]
        refs = tuple(_parse_ref(p, lineno) for p in inner.split(",") if p.strip())
        return refs, True
    return (_parse_ref(text, lineno),), False


def _parse_params(prim: str, text: str, lineno: int) -> tuple[tuple[str, int | str], ...]:
    text = text.strip()
    if not text:
        if _PARAM_NAMES[prim]:
            raise ParseError(f"{prim} needs params {_PARAM_NAMES[prim]}", line=lineno)
        return ()
    params = []
    for part in text.split(","):
        if "=" not in part:
            raise ParseError(f"bad parameter {part.strip()!r}", line=lineno)
        k, v = part.split("=", 1)
        k, v = k.strip(), v.strip()
        params.append((k, int(v) if re.fullmatch(r"-?\d+", v) else v))
    names = tuple(k for k, _ in params)
    if names != tuple(_PARAM_NAMES[prim]):
        raise ParseError(
            f"{prim} expects params {_PARAM_NAMES[prim]}, got {names}", line=lineno
        )
    return tuple(params)


def parse_impl(text: str) -> Program:
    """Parse implementation text into a Program AST."""
    statements: list[Stmt] = []
    returns: tuple[str, ...] | None = None
    for lineno, raw in enumerate(str(text).splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if returns is not None:
            raise ParseError("statements after return", line=lineno)
        m = _RETURN_RE.match(line)
        if m:
            names = [p.strip() for p in m.group(1).split(",")]
            for n in names:
                if "[" in n:
                    raise ParseError("indexed references cannot be returned", line=lineno)
            returns = tuple(names)
            continue
        m = _MAPEACH_RE.match(line)
        if m:
            statements.append(Stmt((m.group(1),), MapEach(m.group(2), m.group(3))))
            continue
        m = _CALL_RE.match(line)
        if m:
            targets = tuple(t.strip() for t in m.group(1).split(","))
            prim = m.group(2)
            if prim not in PRIMITIVES:
                raise ParseError(f"unknown primitive: {prim}", line=lineno)
            if prim == "Copy":
                if len(targets) != 2:
                    raise ParseError("Copy needs two targets", line=lineno)
            elif len(targets) != 1:
                raise ParseError(f"{prim} takes one target", line=lineno)
            params = _parse_params(prim, m.group(3), lineno)
            operands, tupled = _parse_operands(m.group(4), lineno)
            if len(operands) != _OPERAND_ARITY[prim]:
                raise ParseError(
                    f"{prim} takes {_OPERAND_ARITY[prim]} operand(s), got {len(operands)}",
                    line=lineno,
                )
            if (_OPERAND_ARITY[prim] > 1) != tupled:
                raise ParseError(f"bad operand form for {prim}", line=lineno)
            statements.append(Stmt(targets, PrimCall(prim, params, operands)))
            continue
        raise ParseError(f"unparseable statement: {line!r}", line=lineno)
    if returns is None:
        raise ParseError("missing return statement")
    seen: set[str] = set()
    for i, s in enumerate(statements):
        for t in s.targets:
            if t in seen:
                raise ParseError(f"variable {t} assigned twice (statement {i})")
            seen.add(t)
    return Program(tuple(statements), returns)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def emit_canonical(p: Program) -> str:
    """Deterministic text whose parse equals `p` (minus trivia)."""
    lines = []
    for s in p.statements:
        tgt = ", ".join(s.targets)
        if isinstance(s.call, MapEach):
            lines.append(
                f"{tgt} = [step.Map(fn=fn).apply(s) "
                f"for fn, s in zip({s.call.fn_list}, {s.call.source})]"
            )
        else:
            c = s.call
            params = ", ".join(f"{k}={v}" for k, v in c.params)
            ops = [r.text() for r in c.operands]
            operand = f"({', '.join(ops)})" if _OPERAND_ARITY[c.prim] > 1 else ops[0]
            lines.append(f"{tgt} = step.{c.prim}({params}).apply({operand})")
    lines.append("return " + ", ".join(p.returns))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Isomorphism and length
# ---------------------------------------------------------------------------

class _RenameMap:
    def __init__(self):
        self.fwd: dict[str, str] = {}
        self.bwd: dict[str, str] = {}

    def match(self, a: str, b: str) -> bool:
        if self.fwd.get(a, b) != b or self.bwd.get(b, a) != a:
            return False
        self.fwd[a] = b
        self.bwd[b] = a
        return True


def ast_isomorphic(a: Program, b: Program) -> bool:
    """True iff a bijective variable renaming maps `a` onto `b`.

    Statement order, primitive kinds, parameters (fn names and symbols
    compare verbatim), operand structure, and return arity all must agree.
    """
    if len(a.statements) != len(b.statements) or len(a.returns) != len(b.returns):
        return False
    ren = _RenameMap()
    for sa, sb in zip(a.statements, b.statements):
        if len(sa.targets) != len(sb.targets):
            return False
        if type(sa.call) is not type(sb.call):
            return False
        if isinstance(sa.call, MapEach):
            if sa.call.fn_list != sb.call.fn_list:
                return False
            if not ren.match(sa.call.source, sb.call.source):
                return False
        else:
            ca, cb = sa.call, sb.call
            if ca.prim != cb.prim or ca.params != cb.params:
                return False
            if len(ca.operands) != len(cb.operands):
                return False
            for ra, rb in zip(ca.operands, cb.operands):
                if ra.index != rb.index or not ren.match(ra.var, rb.var):
                    return False
        for ta, tb in zip(sa.targets, sb.targets):
            if not ren.match(ta, tb):
                return False
    for ra, rb in zip(a.returns, b.returns):
        if not ren.match(ra, rb):
            return False
    return True


def pure_code_length(text: str) -> int:
    """Number of non-blank, non-comment lines (parse must succeed)."""
    parse_impl(text)
    count = 0
    for raw in str(text).splitlines():
        if _strip_comment(raw).strip():
            count += 1
    return count


# ---------------------------------------------------------------------------
# Task documents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputSpec:
    name: str
    dtype: Dtype
    dtype_text: str | list
    dims: tuple[Dim, ...]
    data_gen: str


@dataclass(frozen=True)
class FnSpec:
    name: str
    apply: str
    input_dtype: Dtype
    output_dtype: Dtype
    input_dtype_text: str | list
    output_dtype_text: str | list
    func_name: str
    init: tuple | None = None


@dataclass(frozen=True)
class OutputSpec:
    name: str
    dtype: Dtype
    dtype_text: str | list
    dims: tuple[Dim, ...]
    data_transform: tuple[str, ...]
    transform_name: str | None = None


@dataclass(frozen=True)
class TaskDocument:
    inputs: tuple[InputSpec, ...]
    fns: tuple[FnSpec, ...]
    outputs: tuple[OutputSpec, ...]
    impl: str
    desc: str = ""
    reconstructed: bool = False

    def fn(self, func_name: str) -> FnSpec | None:
        for f in self.fns:
            if f.func_name == func_name:
                return f
        return None


def _require(doc: dict, key: str):
    if key not in doc:
        raise SchemaError(key)
    return doc[key]


def parse_task(text: str) -> TaskDocument:
    """Parse a YAML task document into a TaskDocument."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError("document", f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("document", "top level must be a mapping")

    inputs = []
    for item in _require(doc, "inputs") or []:
        inputs.append(InputSpec(
            name=str(_require(item, "name")),
            dtype=parse_dtype(_require(item, "dtype")),
            dtype_text=item["dtype"],
            dims=parse_dims(_require(item, "dims")),
            data_gen=str(_require(item, "data_gen")),
        ))
    fns = []
    for item in doc.get("fns") or []:
        init = item.get("init")
        fns.append(FnSpec(
            name=str(_require(item, "name")),
            apply=str(_require(item, "apply")),
            input_dtype=parse_dtype(_require(item, "input_dtype")),
            output_dtype=parse_dtype(_require(item, "output_dtype")),
            input_dtype_text=item["input_dtype"],
            output_dtype_text=item["output_dtype"],
            func_name=str(_require(item, "func_name")),
            init=tuple(init) if init is not None else None,
        ))
    if "fns" not in doc:
        raise SchemaError("fns")
    outputs = []
    for item in _require(doc, "outputs") or []:
        transforms = _require(item, "data_transform")
        if isinstance(transforms, str):
            transforms = [transforms]
        outputs.append(OutputSpec(
            name=str(_require(item, "name")),
            dtype=parse_dtype(_require(item, "dtype")),
            dtype_text=item["dtype"],
            dims=parse_dims(_require(item, "dims")),
            data_transform=tuple(str(t) for t in transforms),
            transform_name=item.get("transform_name"),
        ))
    if not outputs:
        raise SchemaError("outputs")
    if "impl" not in doc:
        raise SchemaError("impl")

    names = [i.name for i in inputs] + [f.name for f in fns] + [o.name for o in outputs]
    if len(set(names)) != len(names):
        raise SchemaError("names", "input/fn/output names must be unique")

    return TaskDocument(
        inputs=tuple(inputs),
        fns=tuple(fns),
        outputs=tuple(outputs),
        impl=str(doc.get("impl") or ""),
        desc=str(doc.get("desc") or ""),
        reconstructed=bool(doc.get("reconstructed", False)),
    )


def emit_task(task: TaskDocument) -> str:
    """Serialize a TaskDocument back to YAML (stable field order)."""
    doc: dict = {}
    if task.desc:
        doc["desc"] = task.desc
    if task.reconstructed:
        doc["reconstructed"] = True
    doc["inputs"] = [
        {"name": i.name, "dtype": i.dtype_text, "dims": [d.name for d in i.dims],
         "data_gen": i.data_gen}
        for i in task.inputs
    ]
    doc["fns"] = []
    for f in task.fns:
        entry = {"name": f.name, "apply": f.apply}
        if f.init is not None:
            entry["init"] = list(f.init)
        entry.update({
            "input_dtype": f.input_dtype_text,
            "output_dtype": f.output_dtype_text,
            "func_name": f.func_name,
        })
        doc["fns"].append(entry)
    doc["outputs"] = []
    for o in task.outputs:
        entry = {"name": o.name, "dtype": o.dtype_text, "dims": [d.name for d in o.dims],
                 "data_transform": list(o.data_transform)}
        if o.transform_name:
            entry["transform_name"] = o.transform_name
        doc["outputs"].append(entry)
    doc["impl"] = task.impl
    return yaml.safe_dump(doc, sort_keys=False, width=100)
