"""Pointer-language IR: parsing, normalization and control-flow graphs.

Source syntax (newline or ``;`` separated, ``#`` comments)::

    global x, y;
    proc main {
        local t
        s1: t = new
        x = t
        use x->f
    }

Every variable has static storage: globals, formals and declared locals are
all program-wide names, so a local name may be declared only once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

ADDR = "&"
DEREF = "deref"
RESERVED_FIELDS = frozenset({"deref", "address"})
KEYWORDS = frozenset(
    {"global", "local", "proc", "use", "goto", "br", "call", "ret", "new", "null"}
)

# Statement kinds after normalization.
USE, ALLOC, NULL, COPY, LOAD, STORE = "use", "alloc", "null", "copy", "load", "store"
ADDROF, ADDROF_FIELD, STORE_ADDR = "addr", "addrfield", "storeaddr"
CALL, RET, BRANCH = "call", "ret", "br"
CORE_KINDS = frozenset(
    {USE, ALLOC, NULL, COPY, LOAD, STORE, ADDROF, ADDROF_FIELD, STORE_ADDR, CALL, RET, BRANCH}
)
# Kinds that assign the variable ``x``.
DEFINES_VAR = frozenset({ALLOC, NULL, COPY, LOAD, ADDROF, ADDROF_FIELD})
# Kinds that write the heap cell ``x->f``.
DEFINES_FIELD = frozenset({STORE, STORE_ADDR})

_TEMP_RE = re.compile(r"%t(\d+)$")


class IRError(Exception):
    """Any diagnostic about a program; carries a source position."""

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.msg, self.line, self.col = msg, line, col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + msg)


class ParseError(IRError):
    pass


class CFGError(IRError):
    pass


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Arrow:
    base: "Expr"
    field: str


@dataclass(frozen=True)
class Dot:
    base: "Expr"
    field: str


@dataclass(frozen=True)
class Addr:
    expr: "Expr"


@dataclass(frozen=True)
class Deref:
    expr: "Expr"


@dataclass(frozen=True)
class New:
    pass


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class CallExpr:
    callee: str
    args: tuple[str, ...]


Expr = Var | Arrow | Dot | Addr | Deref | New | Null | CallExpr


def expr_str(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Arrow):
        return f"{expr_str(e.base)}->{e.field}"
    if isinstance(e, Dot):
        return f"{expr_str(e.base)}.{e.field}"
    if isinstance(e, Addr):
        return "&" + expr_str(e.expr)
    if isinstance(e, Deref):
        return "*" + expr_str(e.expr)
    if isinstance(e, New):
        return "new"
    if isinstance(e, Null):
        return "null"
    return f"call {e.callee}({', '.join(e.args)})"


def _expr_vars(e) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, (Arrow, Dot)):
        yield from _expr_vars(e.base)
    elif isinstance(e, (Addr, Deref)):
        yield from _expr_vars(e.expr)
    elif isinstance(e, CallExpr):
        yield from e.args


# ---------------------------------------------------------------- statements


@dataclass(frozen=True)
class Stmt:
    """One statement. Core kinds use ``x``, ``y``, ``f``; sugar keeps trees.

    Core forms: ``use x``, ``x = new``, ``x = null``, ``x = y``,
    ``x = y->f``, ``x->f = y``, ``x = &y``, ``x = &y->f``, ``x->f = &y``,
    ``call p``, ``ret`` and ``br L1 L2 ...``.
    """

    id: int
    kind: str
    x: str | None = None
    y: str | None = None
    f: str | None = None
    callee: str | None = None
    targets: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    line: int = 0
    col: int = 0
    origin: int = 0
    synthetic: bool = False
    # sugar only
    lhs: Expr | None = None
    rhs: Expr | None = None
    ret_value: str | None = None

    @property
    def is_core(self) -> bool:
        return self.kind in CORE_KINDS

    def vars(self) -> tuple[str, ...]:
        out = [v for v in (self.x, self.y, self.ret_value) if v]
        for e in (self.lhs, self.rhs):
            if e is not None:
                out.extend(_expr_vars(e))
        return tuple(out)

    def __str__(self) -> str:
        k, x, y, f = self.kind, self.x, self.y, self.f
        if k == USE:
            return f"use {x}"
        if k == ALLOC:
            return f"{x} = new"
        if k == NULL:
            return f"{x} = null"
        if k == COPY:
            return f"{x} = {y}"
        if k == LOAD:
            return f"{x} = {y}->{f}"
        if k == STORE:
            return f"{x}->{f} = {y}"
        if k == ADDROF:
            return f"{x} = &{y}"
        if k == ADDROF_FIELD:
            return f"{x} = &{y}->{f}"
        if k == STORE_ADDR:
            return f"{x}->{f} = &{y}"
        if k == CALL:
            return f"call {self.callee}()"
        if k == RET:
            return "ret" if not self.ret_value else f"ret {self.ret_value}"
        if k == BRANCH:
            return ("goto " if len(self.targets) == 1 else "br ") + " ".join(self.targets)
        if k == "assign":
            return f"{expr_str(self.lhs)} = {expr_str(self.rhs)}"
        if k == "usex":
            return f"use {expr_str(self.rhs)}"
        if k == "callx":
            return expr_str(self.rhs)
        return k


@dataclass(frozen=True)
class CFG:
    entry: int
    exit: int
    nodes: tuple[int, ...]
    succ: dict[int, tuple[int, ...]]
    pred: dict[int, tuple[int, ...]]


@dataclass(frozen=True)
class Procedure:
    name: str
    formals: tuple[str, ...]
    locals: tuple[str, ...]
    stmts: tuple[Stmt, ...]
    line: int = 0
    cfg: CFG | None = field(default=None, compare=False)

    @property
    def ret_var(self) -> str:
        return ret_var(self.name)

    def stmt(self, sid: int) -> Stmt:
        for s in self.stmts:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def label_ids(self, label: str) -> tuple[int, int]:
        """First and last statement ids of the source statement carrying ``label``."""
        origin = None
        for s in self.stmts:
            if label in s.labels:
                origin = s.origin
                break
        if origin is None:
            raise KeyError(f"no label {label!r} in {self.name}")
        ids = [s.id for s in self.stmts if s.origin == origin]
        return ids[0], ids[-1]


@dataclass(frozen=True)
class Program:
    globals: tuple[str, ...]
    procedures: dict[str, Procedure]
    main: str
    normalized: bool = False

    def all_stmts(self) -> Iterator[tuple[Procedure, Stmt]]:
        for p in self.procedures.values():
            for s in p.stmts:
                yield p, s

    def stmt(self, sid: int) -> Stmt:
        return self.stmt_index()[sid][1]

    def proc_of(self, sid: int) -> Procedure:
        return self.stmt_index()[sid][0]

    def stmt_index(self) -> dict[int, tuple[Procedure, Stmt]]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {s.id: (p, s) for p, s in self.all_stmts()}
            object.__setattr__(self, "_idx", idx)
        return idx

    def variables(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.globals)
        for p in self.procedures.values():
            seen.update(dict.fromkeys(p.formals))
            seen.update(dict.fromkeys(p.locals))
            seen[p.ret_var] = None
        return tuple(seen)

    def fields(self) -> tuple[str, ...]:
        out: dict[str, None] = {}
        for _, s in self.all_stmts():
            if s.f:
                out[s.f] = None
        return tuple(sorted(out))

    def point(self, label: str, side: str, proc: str | None = None) -> tuple[str, int]:
        """Program point ``(side, id)`` for a labelled source statement.

        ``in`` maps to the first normalized statement, ``out`` to the last.
        """
        procs = [self.procedures[proc]] if proc else list(self.procedures.values())
        found = []
        for p in procs:
            try:
                found.append(p.label_ids(label))
            except KeyError:
                continue
        if len(found) != 1:
            raise KeyError(f"label {label!r} matches {len(found)} procedures")
        first, last = found[0]
        return (side, first if side == "in" else last)

    def callees(self, name: str) -> tuple[str, ...]:
        out = dict.fromkeys(
            s.callee for s in self.procedures[name].stmts if s.kind in (CALL, "callx")
        )
        return tuple(c for c in out if c)


def ret_var(proc: str) -> str:
    return f"%ret:{proc}"


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<id>%?[A-Za-z_][A-Za-z0-9_]*(?::[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<num>[0-9]+)
  | (?P<op>->|[=&*(){},;:.\[\]+\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Tok]:
    toks: list[Tok] = []
    line, lstart, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        if kind == "nl":
            toks.append(Tok("nl", "\n", line, pos - lstart + 1))
            line += 1
            lstart = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Tok(kind, m.group(), line, pos - lstart + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - lstart + 1))
    return toks


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, n: int = 1) -> Tok:
        return self.toks[min(self.i + n, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.tok
        self.i += 1
        return t

    def error(self, msg: str, t: Tok | None = None) -> ParseError:
        t = t or self.tok
        return ParseError(msg, t.line, t.col)

    def expect(self, text: str) -> Tok:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.next()

    def ident(self, what: str) -> str:
        t = self.tok
        if t.kind != "id" or t.text in KEYWORDS:
            found = t.text if t.kind != "nl" else "end of line"
            raise self.error(f"expected {what}, found {found or 'end of input'!r}")
        self.i += 1
        return t.text

    def skip_seps(self) -> None:
        while self.tok.kind == "nl" or self.tok.text == ";":
            self.i += 1

    def end_stmt(self) -> None:
        t = self.tok
        if t.kind in ("nl", "eof") or t.text in (";", "}"):
            if t.text == ";" or t.kind == "nl":
                self.i += 1
            return
        if t.text == "[":
            raise self.error("arrays are not supported")
        if t.text in ("+", "-"):
            raise self.error("pointer arithmetic is not supported")
        raise self.error(f"unexpected {t.text!r}")

    def idlist(self) -> list[tuple[str, Tok]]:
        out = []
        while True:
            t = self.tok
            out.append((self.ident("variable name"), t))
            if self.tok.text != ",":
                return out
            self.next()

    # program := (global decl | proc)*
    def program(self):
        globals_: list[tuple[str, Tok]] = []
        procs: list[tuple] = []
        self.skip_seps()
        while self.tok.kind != "eof":
            t = self.tok
            if t.text == "global":
                self.next()
                globals_.extend(self.idlist())
                self.end_stmt()
            elif t.text == "proc":
                procs.append(self.proc())
            else:
                raise self.error(f"expected 'global' or 'proc', found {t.text!r}")
            self.skip_seps()
        return globals_, procs

    def proc(self):
        start = self.expect("proc")
        name = self.ident("procedure name")
        formals: list[tuple[str, Tok]] = []
        if self.tok.text == "(":
            self.next()
            if self.tok.text != ")":
                formals = self.idlist()
            self.expect(")")
        self.skip_newlines()
        self.expect("{")
        locals_: list[tuple[str, Tok]] = []
        body: list[tuple] = []  # (labels, stmt-dict, tok)
        pending: list[str] = []
        while True:
            self.skip_seps()
            t = self.tok
            if t.text == "}":
                self.next()
                break
            if t.kind == "eof":
                raise self.error("missing '}' at end of procedure")
            if t.kind in ("id", "num") and self.peek().text == ":" and t.text not in KEYWORDS:
                self.i += 2
                pending.append(t.text)
                continue
            if t.text == "local":
                self.next()
                locals_.extend(self.idlist())
                self.end_stmt()
                continue
            body.append((tuple(pending), self.stmt(), t))
            pending = []
        return name, formals, locals_, body, pending, start

    def skip_newlines(self):
        while self.tok.kind == "nl":
            self.i += 1

    def path(self) -> Expr:
        t = self.tok
        if t.kind != "id" or t.text in KEYWORDS:
            raise self.error(f"expected variable, found {t.text or 'end of input'!r}")
        self.next()
        e: Expr = Var(t.text)
        while self.tok.text in ("->", "."):
            op = self.next().text
            ft = self.tok
            if ft.kind != "id" or ft.text in KEYWORDS:
                raise self.error(f"expected field name after {op!r}")
            if ft.text in RESERVED_FIELDS:
                raise self.error(f"{ft.text!r} is a reserved field name")
            self.next()
            e = Arrow(e, ft.text) if op == "->" else Dot(e, ft.text)
        if self.tok.text == "[":
            raise self.error("arrays are not supported")
        return e

    def call_args(self) -> tuple[str, tuple[str, ...]]:
        callee = self.ident("procedure name")
        self.expect("(")
        args: list[str] = []
        if self.tok.text != ")":
            args = [a for a, _ in self.idlist()]
        self.expect(")")
        return callee, tuple(args)

    def stmt(self) -> dict:
        t = self.tok
        kw = t.text
        if kw == "use":
            self.next()
            e = self.path()
            self.end_stmt()
            return dict(kind="usex", rhs=e)
        if kw == "goto":
            self.next()
            lbl = self.label_ref()
            self.end_stmt()
            return dict(kind=BRANCH, targets=(lbl,))
        if kw == "br":
            self.next()
            targets = [self.label_ref()]
            while self.tok.kind in ("id", "num"):
                targets.append(self.label_ref())
            self.end_stmt()
            return dict(kind=BRANCH, targets=tuple(targets))
        if kw == "call":
            self.next()
            callee, args = self.call_args()
            self.end_stmt()
            return dict(kind="callx", rhs=CallExpr(callee, args))
        if kw == "ret":
            self.next()
            val = None
            if self.tok.kind == "id" and self.tok.text not in KEYWORDS:
                val = self.ident("variable")
            self.end_stmt()
            return dict(kind=RET, ret_value=val)
        # assignment
        if kw == "*":
            self.next()
            lhs: Expr = Deref(self.path())
        else:
            lhs = self.path()
        self.expect("=")
        rhs = self.rhs()
        self.end_stmt()
        return dict(kind="assign", lhs=lhs, rhs=rhs)

    def label_ref(self) -> str:
        t = self.tok
        if t.kind not in ("id", "num") or t.text in KEYWORDS:
            raise self.error("expected label")
        self.next()
        return t.text

    def rhs(self) -> Expr:
        t = self.tok
        if t.text == "new":
            self.next()
            return New()
        if t.text == "null":
            self.next()
            return Null()
        if t.text == "call":
            self.next()
            return CallExpr(*self.call_args())
        if t.text == "&":
            self.next()
            return Addr(self.path())
        if t.text == "*":
            self.next()
            return Deref(self.path())
        if t.kind in ("nl", "eof") or t.text in (";", "}"):
            raise self.error("missing right-hand side")
        return self.path()


def parse_program(text: str) -> Program:
    """Parse source text into a (not yet normalized) Program."""
    globals_, procs = _Parser(text).program()
    seen_vars: dict[str, str] = {}

    def declare(name: str, tok: Tok, scope: str) -> None:
        if name.startswith("%"):
            raise ParseError(f"reserved variable name {name!r}", tok.line, tok.col)
        if name in seen_vars:
            raise ParseError(
                f"variable {name!r} already declared ({seen_vars[name]})", tok.line, tok.col
            )
        seen_vars[name] = scope

    for name, tok in globals_:
        declare(name, tok, "global")
    procedures: dict[str, Procedure] = {}
    raw: dict[str, tuple] = {}
    for name, formals, locals_, body, trailing, start in procs:
        if name in procedures:
            raise ParseError(f"duplicate procedure {name!r}", start.line, start.col)
        for v, tok in formals:
            declare(v, tok, f"formal of {name}")
        for v, tok in locals_:
            declare(v, tok, f"local of {name}")
        stmts = []
        for n, (labels, d, tok) in enumerate(body, start=1):
            stmts.append(Stmt(id=0, labels=labels, line=tok.line, col=tok.col, origin=n, **d))
        stmts.append(
            Stmt(id=0, kind=RET, labels=tuple(trailing), origin=len(body) + 1, synthetic=True,
                 line=start.line, col=start.col)
        )
        procedures[name] = Procedure(
            name, tuple(v for v, _ in formals), tuple(v for v, _ in locals_), tuple(stmts),
            line=start.line,
        )
        raw[name] = body
    if not procedures:
        raise ParseError("program has no procedures", 1, 1)
    main = "main" if "main" in procedures else next(iter(procedures))
    prog = Program(tuple(v for v, _ in globals_), procedures, main)
    _check_names(prog)
    prog = _number(prog)
    _check_shapes(normalize(prog))
    return prog


def _check_names(p: Program) -> None:
    glob = set(p.globals)
    for proc in p.procedures.values():
        scope = glob | set(proc.formals) | set(proc.locals)
        labels: dict[str, Stmt] = {}
        for s in proc.stmts:
            for lbl in s.labels:
                if lbl in labels:
                    raise CFGError(f"label {lbl!r} redefined", s.line, s.col)
                labels[lbl] = s
        for s in proc.stmts:
            for v in s.vars():
                if v in scope or _TEMP_RE.match(v) or v.startswith("%ret:"):
                    continue
                raise ParseError(f"undeclared variable {v!r} in {proc.name}", s.line, s.col)
            call = s.rhs if isinstance(s.rhs, CallExpr) else None
            if call is not None:
                callee = p.procedures.get(call.callee)
                if callee is None:
                    raise ParseError(f"call to undeclared procedure {call.callee!r}", s.line, s.col)
                if len(call.args) != len(callee.formals):
                    raise ParseError(
                        f"{call.callee} expects {len(callee.formals)} arguments, got {len(call.args)}",
                        s.line, s.col,
                    )
            if s.kind == "assign" and isinstance(s.rhs, CallExpr) and not isinstance(s.lhs, Var):
                raise ParseError("call result must be assigned to a variable", s.line, s.col)
            for t in s.targets:
                if t not in labels:
                    raise CFGError(f"branch to undefined label {t!r}", s.line, s.col)


def _check_shapes(p: Program) -> None:
    """Pointer-shape rules: an address-taken variable is a struct, never a pointer;
    a field whose address is taken is an embedded struct, never a pointer slot."""
    addressable: set[str] = set()
    embedded: set[str] = set()
    for _, s in p.all_stmts():
        if s.kind in (ADDROF, STORE_ADDR):
            addressable.add(s.y)
        if s.kind == ADDROF_FIELD:
            embedded.add(s.f)
    for proc, s in p.all_stmts():
        pointer_vars = set()
        if s.kind in (ADDROF, STORE_ADDR):
            pointer_vars.add(s.x)
        elif s.kind == ADDROF_FIELD:
            pointer_vars.update((s.x, s.y))
        else:
            pointer_vars.update(v for v in (s.x, s.y) if v)
        bad = pointer_vars & addressable
        if bad:
            v = sorted(bad)[0]
            raise ParseError(f"variable {v!r} has its address taken and is also used as a pointer",
                             s.line, s.col)
        if s.kind in (LOAD, STORE, STORE_ADDR) and s.f in embedded:
            raise ParseError(f"field {s.f!r} has its address taken and is also used as a pointer",
                             s.line, s.col)
    for proc in p.procedures.values():
        bad = set(proc.formals) & addressable
        if bad:
            raise ParseError(f"formal {sorted(bad)[0]!r} cannot have its address taken", proc.line, 0)


def _number(p: Program) -> Program:
    """Assign dense ids in textual order across the whole program."""
    nid = 1
    procs = {}
    for name, proc in p.procedures.items():
        stmts = []
        for s in proc.stmts:
            stmts.append(replace(s, id=nid))
            nid += 1
        procs[name] = replace(proc, stmts=tuple(stmts))
    return replace(p, procedures=procs)


# ---------------------------------------------------------------- normalization


class _Lowerer:
    def __init__(self, start: int):
        self.n = start
        self.out: list[dict] = []
        self.temps: list[str] = []

    def temp(self) -> str:
        self.n += 1
        t = f"%t{self.n}"
        self.temps.append(t)
        return t

    def emit(self, **kw) -> None:
        self.out.append(kw)

    def value(self, e: Expr) -> str:
        """Variable holding the value of ``e``."""
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Arrow):
            base = self.value(e.base)
            t = self.temp()
            self.emit(kind=LOAD, x=t, y=base, f=e.field)
            return t
        if isinstance(e, Dot):
            base = self.struct_ptr(e.base)
            t = self.temp()
            self.emit(kind=LOAD, x=t, y=base, f=e.field)
            return t
        if isinstance(e, Deref):
            base = self.value(e.expr)
            t = self.temp()
            self.emit(kind=LOAD, x=t, y=base, f=DEREF)
            return t
        t = self.temp()
        self.assign_var(t, e)
        return t

    def struct_ptr(self, e: Expr) -> str:
        """Variable holding the address of the struct denoted by ``e``."""
        t = self.temp()
        if isinstance(e, Var):
            self.emit(kind=ADDROF, x=t, y=e.name)
        elif isinstance(e, Arrow):
            self.emit(kind=ADDROF_FIELD, x=t, y=self.value(e.base), f=e.field)
        elif isinstance(e, Dot):
            self.emit(kind=ADDROF_FIELD, x=t, y=self.struct_ptr(e.base), f=e.field)
        else:
            raise ParseError(f"cannot take the address of {expr_str(e)}")
        return t

    def cell(self, e: Expr) -> tuple[str, str] | None:
        """(base, field) of a heap cell lvalue, or None for a plain variable."""
        if isinstance(e, Var):
            return None
        if isinstance(e, Arrow):
            return self.value(e.base), e.field
        if isinstance(e, Dot):
            return self.struct_ptr(e.base), e.field
        if isinstance(e, Deref):
            return self.value(e.expr), DEREF
        raise ParseError(f"not assignable: {expr_str(e)}")

    def assign_var(self, x: str, rhs: Expr) -> None:
        if isinstance(rhs, New):
            self.emit(kind=ALLOC, x=x)
        elif isinstance(rhs, Null):
            self.emit(kind=NULL, x=x)
        elif isinstance(rhs, Var):
            self.emit(kind=COPY, x=x, y=rhs.name)
        elif isinstance(rhs, Arrow):
            self.emit(kind=LOAD, x=x, y=self.value(rhs.base), f=rhs.field)
        elif isinstance(rhs, Dot):
            self.emit(kind=LOAD, x=x, y=self.struct_ptr(rhs.base), f=rhs.field)
        elif isinstance(rhs, Deref):
            self.emit(kind=LOAD, x=x, y=self.value(rhs.expr), f=DEREF)
        elif isinstance(rhs, Addr):
            inner = rhs.expr
            if isinstance(inner, Var):
                self.emit(kind=ADDROF, x=x, y=inner.name)
            elif isinstance(inner, Arrow):
                self.emit(kind=ADDROF_FIELD, x=x, y=self.value(inner.base), f=inner.field)
            elif isinstance(inner, Dot):
                self.emit(kind=ADDROF_FIELD, x=x, y=self.struct_ptr(inner.base), f=inner.field)
            else:
                raise ParseError(f"cannot take the address of {expr_str(inner)}")
        else:
            raise ParseError(f"unsupported right-hand side {expr_str(rhs)}")

    def call(self, program: Program, call: CallExpr, result: str | None) -> None:
        callee = program.procedures[call.callee]
        for formal, actual in zip(callee.formals, call.args):
            if formal != actual:
                self.emit(kind=COPY, x=formal, y=actual)
        self.emit(kind=CALL, callee=call.callee)
        if result is not None:
            self.emit(kind=COPY, x=result, y=ret_var(call.callee))

    def assign(self, program: Program, lhs: Expr, rhs: Expr) -> None:
        if isinstance(rhs, CallExpr):
            self.call(program, rhs, lhs.name)
            return
        target = self.cell(lhs)
        if target is None:
            self.assign_var(lhs.name, rhs)
            return
        base, f = target
        if isinstance(rhs, Addr) and isinstance(rhs.expr, Var):
            self.emit(kind=STORE_ADDR, x=base, f=f, y=rhs.expr.name)
        elif isinstance(rhs, Var):
            self.emit(kind=STORE, x=base, f=f, y=rhs.name)
        else:
            t = self.temp()
            self.assign_var(t, rhs)
            self.emit(kind=STORE, x=base, f=f, y=t)


def normalize(p: Program) -> Program:
    """Lower sugar so that every statement mentions at most one field.

    Temporaries are named ``%tN``; ids are reassigned densely in textual order.
    """
    top = 0
    for _, s in p.all_stmts():
        for v in s.vars():
            m = _TEMP_RE.match(v)
            if m:
                top = max(top, int(m.group(1)))
    for proc in p.procedures.values():
        for v in proc.locals:
            m = _TEMP_RE.match(v)
            if m:
                top = max(top, int(m.group(1)))
    low = _Lowerer(top)
    procs: dict[str, Procedure] = {}
    for name, proc in p.procedures.items():
        stmts: list[Stmt] = []
        temps_before = len(low.temps)
        for s in proc.stmts:
            low.out = []
            if s.is_core:
                if s.kind == RET and s.ret_value:
                    low.emit(kind=COPY, x=ret_var(name), y=s.ret_value)
                    low.emit(kind=RET, synthetic=s.synthetic)
                else:
                    stmts.append(replace(s, ret_value=None))
                    continue
            elif s.kind == "usex":
                low.emit(kind=USE, x=low.value(s.rhs))
            elif s.kind == "callx":
                low.call(p, s.rhs, None)
            elif s.kind == "assign":
                low.assign(p, s.lhs, s.rhs)
            else:
                raise ParseError(f"unknown statement kind {s.kind!r}", s.line, s.col)
            for i, d in enumerate(low.out):
                stmts.append(
                    Stmt(id=0, line=s.line, col=s.col, origin=s.origin,
                         labels=s.labels if i == 0 else (), **d)
                )
        new_temps = tuple(low.temps[temps_before:])
        procs[name] = replace(proc, stmts=tuple(stmts), locals=proc.locals + new_temps)
    out = _number(replace(p, procedures=procs, normalized=True))
    return replace(
        out,
        procedures={n: replace(pr, cfg=build_cfg(pr)) for n, pr in out.procedures.items()},
    )


# ---------------------------------------------------------------- CFG


def build_cfg(proc: Procedure) -> CFG:
    """Successor/predecessor maps over the reachable statements of ``proc``.

    The last statement is the synthetic exit; ``ret`` jumps to it.
    """
    stmts = proc.stmts
    if not stmts:
        raise CFGError(f"procedure {proc.name} has no exit")
    labels: dict[str, int] = {}
    for s in stmts:
        for lbl in s.labels:
            if lbl in labels:
                raise CFGError(f"label {lbl!r} redefined", s.line, s.col)
            labels[lbl] = s.id
    exit_id = stmts[-1].id
    succ_all: dict[int, tuple[int, ...]] = {}
    for i, s in enumerate(stmts):
        if s.id == exit_id:
            succ_all[s.id] = ()
        elif s.kind == RET:
            succ_all[s.id] = (exit_id,)
        elif s.kind == BRANCH:
            for t in s.targets:
                if t not in labels:
                    raise CFGError(f"branch to undefined label {t!r}", s.line, s.col)
            succ_all[s.id] = tuple(dict.fromkeys(labels[t] for t in s.targets))
        else:
            succ_all[s.id] = (stmts[i + 1].id,)
    entry = stmts[0].id
    seen = {entry}
    stack = [entry]
    while stack:
        n = stack.pop()
        for m in succ_all[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    seen.add(exit_id)
    nodes = tuple(s.id for s in stmts if s.id in seen)
    succ = {n: succ_all[n] for n in nodes}
    pred: dict[int, list[int]] = {n: [] for n in nodes}
    for n in nodes:
        for m in succ[n]:
            pred[m].append(n)
    return CFG(entry, exit_id, nodes, succ, {n: tuple(sorted(pred[n])) for n in nodes})


def call_graph(p: Program) -> dict[str, tuple[str, ...]]:
    return {name: p.callees(name) for name in p.procedures}


def format_program(p: Program) -> str:
    """Render a program back to source text (core or sugared statements)."""
    lines = []
    if p.globals:
        lines.append("global " + ", ".join(p.globals))
    for proc in p.procedures.values():
        head = f"proc {proc.name}"
        if proc.formals:
            head += "(" + ", ".join(proc.formals) + ")"
        lines.append(head + " {")
        user_locals = [v for v in proc.locals if not v.startswith("%")]
        if user_locals:
            lines.append("  local " + ", ".join(user_locals))
        for s in proc.stmts:
            prefix = "".join(f"{lbl}: " for lbl in s.labels)
            if s.synthetic:
                if prefix:
                    lines.append("  " + prefix.rstrip())
                continue
            lines.append("  " + prefix + str(s))
        lines.append("}")
    return "\n".join(lines) + "\n"


def iter_fields(stmts: Iterable[Stmt]) -> set[str]:
    return {s.f for s in stmts if s.f}


def load_program(text: str) -> Program:
    """Parse and normalize in one step."""
    return normalize(parse_program(text))


def scope_vars(p: Program, sid: int) -> list[str]:
    """Variables visible at statement ``sid``, plus the callee formals and
    return slots its procedure touches through normalized calls."""
    proc = p.proc_of(sid)
    names = list(p.globals) + list(proc.formals) + list(proc.locals) + [proc.ret_var]
    for c in p.callees(proc.name):
        names.append(p.procedures[c].ret_var)
        names.extend(p.procedures[c].formals)
    return list(dict.fromkeys(names))
