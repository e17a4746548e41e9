"""Concrete execution and liveness-by-execution.

The interpreter runs normalized programs over a tiny concrete heap and
records the memory before and after every step.  Dynamic liveness of an
access path at a point of a trace is computed backwards from the later
uses of the trace; the static analysis is sound when every such path is
accepted by its graph at that point.

Concrete values are ``None`` (null), an ``int`` (heap object), ``("var", v)``
(address of variable ``v``) or ``("fld", obj, f)`` (address of the
embedded field ``f`` of ``obj``).
"""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

from . import apgraph as apg
from .apgraph import AccessPath
from .ir import (
    ADDR, ADDROF, ADDROF_FIELD, ALLOC, BRANCH, CALL, COPY, LOAD, NULL, RET, STORE,
    STORE_ADDR, USE, Program, Stmt, scope_vars,
)

DEFAULT_K = 5


@dataclass
class Memory:
    vars: dict = field(default_factory=dict)
    heap: dict = field(default_factory=dict)  # (obj, field) -> value
    sites: dict = field(default_factory=dict)  # heap obj -> allocation stmt id

    def copy(self) -> "Memory":
        return Memory(dict(self.vars), dict(self.heap), dict(self.sites))

    def get(self, v: str):
        return self.vars.get(v)

    def load(self, obj, f: str):
        return self.heap.get((obj, f))


class Fault(Exception):
    pass


@dataclass
class Trace:
    steps: list[int]
    mems: list[Memory]  # mems[i] is the memory before steps[i]; one extra at the end
    status: str  # "done", "fault" or "truncated"
    choices: list[int] = field(default_factory=list)
    returns: dict[int, int] = field(default_factory=dict)  # call step -> position after return

    def witness(self) -> dict:
        return {"steps": self.steps, "choices": self.choices, "status": self.status}


# ---------------------------------------------------------------- execution


def execute(s: Stmt, mem: Memory, fresh: Callable[[], int]) -> None:
    """Apply one statement to ``mem`` in place; raises :class:`Fault` on a null base."""
    k = s.kind
    if k == USE:
        if mem.get(s.x) is None:
            raise Fault(f"use of null {s.x}")
    elif k == ALLOC:
        o = fresh()
        mem.sites[o] = s.id
        mem.vars[s.x] = o
    elif k == NULL:
        mem.vars[s.x] = None
    elif k == COPY:
        mem.vars[s.x] = mem.get(s.y)
    elif k == LOAD:
        base = mem.get(s.y)
        if base is None:
            raise Fault(f"load through null {s.y}")
        mem.vars[s.x] = mem.load(base, s.f)
    elif k == STORE:
        base = mem.get(s.x)
        if base is None:
            raise Fault(f"store through null {s.x}")
        mem.heap[(base, s.f)] = mem.get(s.y)
    elif k == STORE_ADDR:
        base = mem.get(s.x)
        if base is None:
            raise Fault(f"store through null {s.x}")
        mem.heap[(base, s.f)] = ("var", s.y)
    elif k == ADDROF:
        mem.vars[s.x] = ("var", s.y)
    elif k == ADDROF_FIELD:
        base = mem.get(s.y)
        if base is None:
            raise Fault(f"address of field through null {s.y}")
        mem.vars[s.x] = ("fld", base, s.f)
    elif k in (CALL, RET, BRANCH):
        pass
    else:
        raise ValueError(f"cannot execute {k!r}")


@dataclass
class _Run:
    pc: int | None
    stack: list
    mem: Memory
    counts: dict
    steps: list
    mems: list
    choices: list
    call_pos: list  # positions of pending calls
    returns: dict
    next_obj: int

    def clone(self) -> "_Run":
        return _Run(self.pc, list(self.stack), self.mem.copy(), dict(self.counts),
                    list(self.steps), list(self.mems), list(self.choices),
                    list(self.call_pos), dict(self.returns), self.next_obj)


def _advance(p: Program, run: _Run, loop_bound: int, choose) -> str:
    """Run until the trace ends; ``choose`` picks among branch successors."""
    cap = loop_bound + 1
    while True:
        if run.pc is None:
            return "done"
        sid = run.pc
        if run.counts.get(sid, 0) >= cap:
            return "truncated"
        s = p.stmt(sid)
        run.counts[sid] = run.counts.get(sid, 0) + 1
        run.steps.append(sid)

        def fresh() -> int:
            run.next_obj += 1
            return run.next_obj

        try:
            execute(s, run.mem, fresh)
        except Fault:
            return "fault"
        run.mems.append(run.mem.copy())
        pos = len(run.steps)
        proc = p.proc_of(sid)
        if s.kind == CALL:
            run.stack.append(proc.cfg.succ[sid][0] if proc.cfg.succ[sid] else None)
            run.call_pos.append(pos - 1)
            run.pc = p.procedures[s.callee].cfg.entry
            continue
        if sid == proc.cfg.exit:
            if run.stack:
                run.pc = run.stack.pop()
                run.returns[run.call_pos.pop()] = pos
            else:
                run.pc = None
            continue
        succ = list(proc.cfg.succ[sid])
        if not succ:
            run.pc = None
            continue
        if len(succ) == 1:
            run.pc = succ[0]
            continue
        allowed = [i for i, t in enumerate(succ) if run.counts.get(t, 0) < cap]
        if not allowed:
            return "truncated"
        i = choose(run, succ, allowed)
        run.choices.append(i)
        run.pc = succ[i]


def _start(p: Program) -> _Run:
    mem = Memory()
    return _Run(p.procedures[p.main].cfg.entry, [], mem, {}, [], [mem.copy()], [], [], {}, 0)


def _finish(run: _Run, status: str) -> Trace:
    return Trace(run.steps, run.mems, status, run.choices, run.returns)


def interpret(p: Program, choices: Iterable[int] = (), loop_bound: int = 3) -> Trace:
    """Run ``p`` once, taking branch successor ``choices[i]`` at the i-th branch.

    Missing or out-of-bound choices fall back to the first allowed successor.
    """
    if loop_bound < 1:
        raise ValueError("loop bound must be positive")
    it = iter(choices)

    def choose(run, succ, allowed):
        i = next(it, allowed[0])
        return i if i in allowed else allowed[0]

    run = _start(p)
    status = _advance(p, run, loop_bound, choose)
    return _finish(run, status)


def enumerate_traces(p: Program, loop_bound: int = 3, max_traces: int = 10_000) -> Iterator[Trace]:
    """Every execution with each statement run at most ``loop_bound + 1`` times."""
    if loop_bound < 1:
        raise ValueError("loop bound must be positive")
    if max_traces < 1:
        raise ValueError("trace cap must be positive")
    stack = [_start(p)]
    produced = 0
    while stack and produced < max_traces:
        run = stack.pop()
        forks: list = []

        def choose(r, succ, allowed):
            for i in reversed(allowed[1:]):
                other = r.clone()
                other.choices.append(i)
                other.pc = succ[i]
                forks.append(other)
            return allowed[0]

        status = _advance(p, run, loop_bound, choose)
        produced += 1
        yield _finish(run, status)
        stack.extend(forks)


# ---------------------------------------------------------------- access paths in memory


def _link_value(mem: Memory, link):
    kind = link[0]
    if kind == "v":
        return mem.get(link[1])
    if kind == "h":
        return mem.load(link[1], link[2])
    inner = link[1]
    return ("var", inner[1]) if inner[0] == "v" else ("fld", inner[1], inner[2])


def resolve(mem: Memory, path: AccessPath):
    """Terminal concrete link of ``path`` in ``mem``, or None when a prefix is null."""
    link = ("v", path.root)
    for f in path.fields:
        if f == ADDR:
            if link[0] == "a":
                return None
            link = ("a", link)
            continue
        base = _link_value(mem, link)
        if base is None:
            return None
        link = ("h", base, f)
    return link


def links_table(mem: Memory, roots: Iterable[str], k: int, fields: Iterable[str] = ()) -> dict:
    """Map each concrete link to the paths (length ≤ k) that end on it.

    ``fields`` lists the field names to try besides those already stored.
    """
    fields = sorted({f for (_, f) in mem.heap} | set(fields))
    out: dict = defaultdict(set)
    frontier = [(AccessPath(v), ("v", v)) for v in roots]
    length = 1
    while frontier:
        nxt = []
        for path, link in frontier:
            out[link].add(path)
            if length == k:
                continue
            if link[0] != "a":
                nxt.append((path.extend(ADDR), ("a", link)))
            base = _link_value(mem, link)
            if base is None:
                continue
            for f in fields:
                nxt.append((path.extend(f), ("h", base, f)))
        frontier = nxt
        length += 1
    return out


def concrete_lna(mem: Memory, path: AccessPath, k: int = DEFAULT_K, roots: Iterable[str] | None = None,
                 table: dict | None = None) -> set[AccessPath]:
    """Paths of length ≤ k sharing ``path``'s terminal link in ``mem``.

    An unresolvable path only aliases itself.
    """
    link = resolve(mem, path)
    if link is None:
        return {path}
    if table is None:
        table = links_table(mem, roots if roots is not None else _mem_roots(mem, path), k)
    return set(table.get(link, ())) | {path}


def _mem_roots(mem: Memory, path: AccessPath) -> list[str]:
    return sorted(set(mem.vars) | {path.root})


# ---------------------------------------------------------------- liveness by execution


def direct_uses(s: Stmt) -> set[AccessPath]:
    if s.kind == USE:
        return {AccessPath(s.x)}
    if s.kind in (LOAD, ADDROF_FIELD):
        return {AccessPath(s.y)}
    if s.kind in (STORE, STORE_ADDR):
        return {AccessPath(s.x)}
    return set()


def r_step(s: Stmt, mem_before: Memory, rho: AccessPath) -> set[AccessPath]:
    """Paths before ``s`` through which the link named by ``rho`` after ``s`` is reached."""
    k = s.kind
    if k in (ALLOC, NULL, COPY, LOAD, ADDROF, ADDROF_FIELD):
        if rho.root != s.x:
            return {rho}
        if k in (ALLOC, NULL):
            return set()
        if k == COPY:
            return {AccessPath(s.y, rho.fields)}
        if k == LOAD:
            return {AccessPath(s.y, (s.f,) + rho.fields)}
        if k == ADDROF:
            return {AccessPath(s.y, (ADDR,) + rho.fields)}
        return {AccessPath(s.y, (s.f, ADDR) + rho.fields)}
    if k in (STORE, STORE_ADDR):
        base = mem_before.get(s.x)
        if base is None:
            return {rho}
        target = ("h", base, s.f)
        link = ("v", rho.root)
        for i, f in enumerate(rho.fields):
            if f == ADDR:
                if link[0] == "a":
                    break
                link = ("a", link)
                continue
            obj = _link_value(mem_before, link)
            if obj is None:
                break
            link = ("h", obj, f)
            if link == target:
                rest = rho.fields[i + 1:]
                if k == STORE:
                    return {AccessPath(s.y, rest)}
                return {AccessPath(s.y, (ADDR,) + rest)}
        return {rho}
    return {rho}


def transfer_r(p: Program, trace: Trace, start: int, end: int, rho: AccessPath) -> set[AccessPath]:
    """R over steps ``start..end-1`` of ``trace`` (applied backwards from ``end``)."""
    cur = {rho}
    for j in range(end - 1, start - 1, -1):
        s = p.stmt(trace.steps[j])
        nxt: set = set()
        for r in cur:
            nxt |= r_step(s, trace.mems[j], r)
        cur = nxt
    return cur


def live_positions(p: Program, trace: Trace) -> list[set[AccessPath]]:
    """Dynamically live paths (untruncated) at every trace position."""
    n = len(trace.steps)
    live: list[set] = [set() for _ in range(n + 1)]
    for j in range(n - 1, -1, -1):
        s = p.stmt(trace.steps[j])
        faulted = trace.status == "fault" and j == n - 1
        cur: set = set()
        if not faulted:
            for r in live[j + 1]:
                cur |= r_step(s, trace.mems[j], r)
        cur |= direct_uses(s)
        live[j] = cur
    return live


def point_positions(p: Program, trace: Trace) -> Iterator[tuple[tuple, int]]:
    """Program points occurring in ``trace`` with their positions."""
    n = len(trace.steps)
    complete = len(trace.mems) - 1  # steps whose after-memory exists
    for j, sid in enumerate(trace.steps):
        yield ("in", sid), j
        if j >= complete:
            continue
        if p.stmt(sid).kind == CALL:
            if j in trace.returns:
                yield ("out", sid), trace.returns[j]
        elif j + 1 <= n:
            yield ("out", sid), j + 1


def dynamic_live_paths(p: Program, trace: Trace, point: tuple, position: int, k: int = DEFAULT_K,
                       live: list | None = None) -> set[AccessPath]:
    """Paths of length ≤ k live at ``point`` (occurring at ``position``) of ``trace``."""
    if live is None:
        live = live_positions(p, trace)
    mem = trace.mems[position]
    raw = live[position]
    closed: set = set()
    for r in raw:
        # reaching a cell reads every link on the way, except the one whose
        # address is taken: ``y.f.&`` needs ``y`` but not the contents of ``y.f``
        closed.update(q for q in r.prefixes()
                      if len(q) == len(r) or r.fields[len(q) - 1] != ADDR)
    table = links_table(mem, scope_vars(p, point[1]), k, p.fields())
    out: set = set()
    for r in closed:
        out |= concrete_lna(mem, r, k, table=table)
    return {r for r in out if len(r) <= k}


# ---------------------------------------------------------------- soundness


@dataclass
class Violation:
    variant: str
    point: str
    path: str
    trace: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SoundnessReport:
    traces: int = 0
    checked_points: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


StaticLookup = Callable[[tuple], apg.LivenessGraph]


def check_against(p: Program, lookups: dict[str, StaticLookup], loop_bound: int = 3,
                  max_traces: int = 10_000, k: int = DEFAULT_K, max_violations: int = 20) -> SoundnessReport:
    """Compare dynamic liveness on every bounded trace with each static lookup."""
    report = SoundnessReport()
    cache: dict = {}
    for trace in enumerate_traces(p, loop_bound, max_traces):
        report.traces += 1
        live = live_positions(p, trace)
        for point, pos in point_positions(p, trace):
            dyn = dynamic_live_paths(p, trace, point, pos, k, live)
            report.checked_points += 1
            if not dyn:
                continue
            for v, lookup in lookups.items():
                key = (v, point)
                if key not in cache:
                    cache[key] = apg.extract_paths(lookup(point), k)
                missing = dyn - cache[key]
                for path in sorted(missing):
                    if len(report.violations) < max_violations:
                        report.violations.append(
                            Violation(v, f"{point[0]}_{point[1]}", str(path), trace.witness())
                        )
    return report


def check_soundness(p: Program, variants: Iterable[str] = ("A", "B", "C", "D"), loop_bound: int = 3,
                    max_traces: int = 10_000, k: int = DEFAULT_K, seed_fault: bool = False,
                    partitioning: bool = True) -> SoundnessReport:
    """Run the static analyses and check them against bounded executions.

    ``seed_fault`` blanks every result in the main procedure, which must
    then be reported as unsound (a self-test of the checker).
    """
    from .alias import compute_points_to
    from .interproc import analyze_program

    oracle = compute_points_to(p)
    lookups: dict = {}
    main_ids = {s.id for s in p.procedures[p.main].stmts}
    for v in variants:
        res = analyze_program(p, oracle, v, partitioning)

        def lookup(point, res=res, v=v):
            if seed_fault and point[1] in main_ids:
                return apg.empty(res.contexts[0].state.mode)
            return res.graph(point)

        lookups[v] = lookup
    return check_against(p, lookups, loop_bound, max_traces, k)


# ---------------------------------------------------------------- random programs


@dataclass
class GenConfig:
    max_stmts: int = 10
    max_branches: int = 2
    loops: bool = True
    calls: bool = True
    addresses: bool = True
    vars: tuple = ("x", "y", "z", "w")
    fields: tuple = ("f", "g")


def random_program(rng: random.Random, cfg: GenConfig = GenConfig()) -> str:
    """Source text of a small random program within ``cfg``'s limits.

    Operands are drawn mostly from variables already given an object, so
    that most executions run past their first few statements.
    """
    vs, fs = cfg.vars, cfg.fields
    n = rng.randint(3, cfg.max_stmts)
    helper = cfg.calls and rng.random() < 0.3
    body: list[str] = []
    ready: list[str] = []

    def operand() -> str:
        if ready and rng.random() < 0.85:
            return rng.choice(ready)
        return rng.choice(vs)

    def defined(v: str, ok: bool) -> None:
        if ok and v not in ready:
            ready.append(v)
        elif not ok and v in ready:
            ready.remove(v)

    for _ in range(rng.randint(1, 2)):
        v = rng.choice(vs)
        body.append(f"{v} = new")
        defined(v, True)
    while len(body) < n:
        r = rng.random()
        x, y = rng.choice(vs), operand()
        b = operand()
        f = rng.choice(fs)
        if r < 0.18:
            body.append(f"{x} = new")
            defined(x, True)
        elif r < 0.22:
            body.append(f"{x} = null")
            defined(x, False)
        elif r < 0.34:
            body.append(f"{x} = {y}")
            defined(x, y in ready)
        elif r < 0.50:
            body.append(f"{x} = {y}->{f}")
            defined(x, False)
        elif r < 0.66:
            body.append(f"{b}->{f} = {y}")
        elif r < 0.74:
            body.append(f"{b}->{f} = new")
        elif r < 0.84:
            body.append(f"use {b}" if rng.random() < 0.5 else f"use {b}->{f}")
        elif cfg.addresses and r < 0.92:
            choice = rng.random()
            if choice < 0.4:
                body.append(f"{x} = &s")
                defined(x, True)
            elif choice < 0.7:
                body.append(f"{b}->{f} = &s")
            else:
                body.append(f"{x} = &{b}->e")
                defined(x, True)
        elif helper:
            if rng.random() < 0.5:
                body.append(f"call h({b})")
            else:
                body.append(f"{x} = call h({b})")
                defined(x, False)
        else:
            body.append(f"use {b}")
    labels = [f"L{i}" for i in range(len(body))]
    lines = [f"{labels[i]}: {st}" for i, st in enumerate(body)]
    for _ in range(rng.randint(0, cfg.max_branches)):
        pos = rng.randint(1, len(lines))
        if cfg.loops:
            a, b2 = rng.randrange(len(body)), rng.randrange(len(body))
        else:
            lo = sum(1 for ln in lines[:pos] if not ln.startswith("br"))
            if lo >= len(body):
                continue
            a, b2 = rng.randint(lo, len(body) - 1), rng.randint(lo, len(body) - 1)
        lines.insert(pos, f"br {labels[a]} {labels[b2]}" + (" END" if rng.random() < 0.3 else ""))
    text = []
    if helper:
        text.append("global g1")
        hbody = rng.choice([
            ["a->f = g1", "ret a"],
            ["use a", "g1 = a->g", "ret g1"],
            ["b = a->f", "ret b"],
            ["a->g = new", "ret a"],
        ])
        text.append("proc h(a) {\n  local b\n" + "".join(f"  {ln}\n" for ln in hbody) + "}")
    decl = "  local " + ", ".join(list(vs) + (["s"] if cfg.addresses else [])) + "\n"
    text.append("proc main {\n" + decl + "".join(f"  {ln}\n" for ln in lines) + "END:\n}")
    return "\n".join(text) + "\n"


def random_valid_program(rng: random.Random, cfg: GenConfig = GenConfig(), tries: int = 50) -> Program:
    """A random program that passes parsing and the pointer-shape rules."""
    from .ir import IRError, load_program

    for _ in range(tries):
        src = random_program(rng, cfg)
        try:
            return load_program(src)
        except IRError:
            continue
    raise RuntimeError("could not generate a valid program")
