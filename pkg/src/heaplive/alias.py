"""Points-to facts and link-alias queries.

Abstract locations are tuples:

* ``("heap", s)``      objects allocated at statement ``s``
* ``("var", v)``       the storage of an address-taken variable ``v``
* ``("fld", base, f)`` an embedded field whose address was taken

Links (memory cells holding a pointer) are ``("v", x)`` for a variable,
``("h", loc, f)`` for field ``f`` of ``loc`` and ``("a", link)`` for the
address of another link's cell.  Reading ``&`` from a path moves to the
``("a", ...)`` link; ``&`` never follows ``&``.

Variables get strong updates, heap cells weak ones.  The analysis is
flow-sensitive and context-insensitive over the supergraph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import networkx as nx

from . import apgraph as apg
from .apgraph import AccessPath, Builder, LivenessGraph, alloc_site
from .ir import (
    ADDR, ADDROF, ADDROF_FIELD, ALLOC, CALL, COPY, LOAD, NULL, STORE, STORE_ADDR,
    Program, Stmt, scope_vars,
)

Loc = tuple
Link = tuple
Point = tuple  # ("in" | "out", statement id)

MAX_MUST_FIELDS = 4


def heap_loc(site: int) -> Loc:
    return ("heap", site)


def var_loc(v: str) -> Loc:
    return ("var", v)


def field_loc(base: Loc, f: str) -> Loc:
    if base[0] == "fld":
        base = base[1]
    return ("fld", base, f)


def loc_site(loc: Loc) -> int | str:
    if loc[0] == "heap":
        return loc[1]
    if loc[0] == "var":
        return f"&{loc[1]}"
    return f"{loc_site(loc[1])}.{loc[2]}"


def loc_str(loc: Loc) -> str:
    if loc[0] == "heap":
        return f"h{loc[1]}"
    if loc[0] == "var":
        return f"&{loc[1]}"
    return f"{loc_str(loc[1])}.{loc[2]}"


def link_str(link: Link) -> str:
    if link[0] == "v":
        return link[1]
    if link[0] == "h":
        return f"{loc_str(link[1])}.{link[2]}"
    return f"&({link_str(link[1])})"


def link_site(link: Link) -> str:
    """Uncollapsed name of a variable or field link, e.g. ``&x`` or ``3.f.g``."""
    if link[0] == "v":
        return f"&{link[1]}"
    if link[0] == "h":
        return f"{loc_site(link[1])}.{link[2]}"
    return f"&({link_site(link[1])})"


def cell_of(link: Link) -> Loc:
    """The object whose address ``&`` of this link denotes."""
    if link[0] == "v":
        return var_loc(link[1])
    if link[0] == "h":
        return field_loc(link[1], link[2])
    raise ValueError("an address has no cell")


def point_name(point: Point) -> str:
    return f"{point[0]}_{point[1]}"


# ---------------------------------------------------------------- points-to state


@dataclass(frozen=True)
class PtState:
    env: Mapping[str, frozenset] = field(default_factory=dict)
    heap: Mapping[tuple, frozenset] = field(default_factory=dict)

    def join(self, other: "PtState") -> "PtState":
        env = dict(self.env)
        for v, s in other.env.items():
            env[v] = env.get(v, frozenset()) | s
        heap = dict(self.heap)
        for k, s in other.heap.items():
            heap[k] = heap.get(k, frozenset()) | s
        return PtState(env, heap)

    def var(self, v: str) -> frozenset:
        return self.env.get(v, frozenset())

    def cell(self, loc: Loc, f: str) -> frozenset:
        return self.heap.get((loc, f), frozenset())

    def targets(self, link: Link) -> frozenset:
        if link[0] == "v":
            return self.var(link[1])
        if link[0] == "h":
            return self.cell(link[1], link[2])
        return frozenset([cell_of(link[1])])

    def step(self, links: Iterable[Link], f: str) -> set[Link]:
        out: set[Link] = set()
        for lk in links:
            if f == ADDR:
                if lk[0] != "a":
                    out.add(("a", lk))
            else:
                out.update(("h", t, f) for t in self.targets(lk))
        return out

    def links(self, path: AccessPath) -> set[Link]:
        cur: set[Link] = {("v", path.root)}
        for f in path.fields:
            cur = self.step(cur, f)
        return cur


def transfer(s: Stmt, st: PtState) -> PtState:
    k = s.kind
    if k in (ALLOC, NULL, COPY, LOAD, ADDROF, ADDROF_FIELD):
        env = dict(st.env)
        if k == ALLOC:
            env[s.x] = frozenset([heap_loc(s.id)])
        elif k == NULL:
            env[s.x] = frozenset()
        elif k == COPY:
            env[s.x] = st.var(s.y)
        elif k == LOAD:
            env[s.x] = frozenset().union(*(st.cell(l, s.f) for l in st.var(s.y)))
        elif k == ADDROF:
            env[s.x] = frozenset([var_loc(s.y)])
        else:
            env[s.x] = frozenset(field_loc(l, s.f) for l in st.var(s.y))
        return PtState(env, st.heap)
    if k in (STORE, STORE_ADDR):
        val = st.var(s.y) if k == STORE else frozenset([var_loc(s.y)])
        if not val:
            return st
        heap = dict(st.heap)
        for l in st.var(s.x):
            heap[(l, s.f)] = heap.get((l, s.f), frozenset()) | val
        return PtState(st.env, heap)
    return st


def defined_vars(p: Program) -> dict[str, set[str]]:
    """Variables each procedure may assign, including through its callees."""
    direct = {
        name: {s.x for s in proc.stmts if s.kind in (ALLOC, NULL, COPY, LOAD, ADDROF, ADDROF_FIELD)}
        for name, proc in p.procedures.items()
    }
    return _close_over_calls(p, direct)


def stored_fields(p: Program) -> dict[str, set[str]]:
    direct = {
        name: {s.f for s in proc.stmts if s.kind in (STORE, STORE_ADDR)}
        for name, proc in p.procedures.items()
    }
    return _close_over_calls(p, direct)


def _close_over_calls(p: Program, direct: dict[str, set]) -> dict[str, set]:
    g = nx.DiGraph()
    g.add_nodes_from(p.procedures)
    for name in p.procedures:
        for c in p.callees(name):
            g.add_edge(name, c)
    cond = nx.condensation(g)
    out: dict[str, set] = {}
    for comp in reversed(list(nx.topological_sort(cond))):
        members = cond.nodes[comp]["members"]
        acc: set = set()
        for m in members:
            acc |= direct[m]
        for succ in cond.successors(comp):
            acc |= out[next(iter(cond.nodes[succ]["members"]))]
        for m in members:
            out[m] = acc
    return out


def call_sites(p: Program) -> dict[str, list[int]]:
    """Reachable call statements targeting each procedure."""
    out: dict[str, list[int]] = {name: [] for name in p.procedures}
    for proc in p.procedures.values():
        for s in proc.stmts:
            if s.kind == CALL and s.id in proc.cfg.nodes:
                out[s.callee].append(s.id)
    return out


def summarized_sites(p: Program) -> set[int]:
    """Allocation sites that may produce more than one live object."""
    in_cycle: set[int] = set()
    for proc in p.procedures.values():
        cfg = proc.cfg
        g = nx.DiGraph()
        g.add_nodes_from(cfg.nodes)
        g.add_edges_from((a, b) for a in cfg.nodes for b in cfg.succ[a])
        for comp in nx.strongly_connected_components(g):
            if len(comp) > 1:
                in_cycle |= comp
        in_cycle |= {n for n in cfg.nodes if n in cfg.succ[n]}
    # how often each procedure can be invoked, saturated at 2
    calls = {name: 0 for name in p.procedures}
    calls[p.main] = 1
    cg = nx.DiGraph()
    cg.add_nodes_from(p.procedures)
    for proc, s in p.all_stmts():
        if s.kind == CALL:
            cg.add_edge(proc.name, s.callee)
    recursive = {n for comp in nx.strongly_connected_components(cg) if len(comp) > 1 for n in comp}
    recursive |= {n for n in cg if cg.has_edge(n, n)}
    for _ in range(len(p.procedures) + 1):
        new = {name: 0 for name in p.procedures}
        new[p.main] = 1
        for proc, s in p.all_stmts():
            if s.kind != CALL or calls[proc.name] == 0:
                continue
            times = calls[proc.name] * (2 if s.id in in_cycle else 1)
            new[s.callee] = min(2, new[s.callee] + times)
        for n in recursive:
            if new[n]:
                new[n] = 2
        if new == calls:
            break
        calls = new
    out = set()
    for proc, s in p.all_stmts():
        if s.kind == ALLOC and (s.id in in_cycle or calls[proc.name] >= 2):
            out.add(s.id)
    return out


# ---------------------------------------------------------------- must facts

MustFacts = frozenset  # of (var, AccessPath); None stands for "unreached"


def _meet(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a & b


def _mentions(fact: tuple, v: str) -> bool:
    return fact[0] == v or fact[1].root == v


def must_transfer(s: Stmt, facts: MustFacts) -> MustFacts:
    k = s.kind
    if k in (ALLOC, NULL, COPY, LOAD, ADDROF, ADDROF_FIELD):
        out = {fc for fc in facts if not _mentions(fc, s.x)}
        if k == COPY and s.y != s.x:
            out.add((s.x, AccessPath(s.y)))
        elif k == LOAD and s.y != s.x:
            out.add((s.x, AccessPath(s.y, (s.f,))))
        elif k == ADDROF:
            out.add((s.x, AccessPath(s.y, (ADDR,))))
        elif k == ADDROF_FIELD and s.y != s.x:
            out.add((s.x, AccessPath(s.y, (s.f, ADDR))))
        return frozenset(out)
    if k in (STORE, STORE_ADDR):
        out = {fc for fc in facts if s.f not in fc[1].fields}
        if k == STORE and s.x != s.y:
            out.add((s.y, AccessPath(s.x, (s.f,))))
        return frozenset(out)
    return facts


def equivalents(facts: MustFacts | None, path: AccessPath, limit: int = MAX_MUST_FIELDS) -> set[AccessPath]:
    """Paths guaranteed to hold the same value as ``path``."""
    out = {path}
    if not facts:
        return out
    work = [path]
    while work:
        p = work.pop()
        new = []
        for v, rho in facts:
            if p.root == v:
                new.append(AccessPath(rho.root, rho.fields + p.fields))
            n = len(rho.fields)
            if p.root == rho.root and p.fields[:n] == rho.fields:
                new.append(AccessPath(v, p.fields[n:]))
        for q in new:
            if len(q.fields) <= limit and q not in out:
                out.add(q)
                work.append(q)
        if len(out) > 64:
            break
    return out


# ---------------------------------------------------------------- analysis


@dataclass
class AliasOracle:
    """Points-to and must-equality facts at every program point."""

    program: Program
    pin: dict[int, PtState]
    pout: dict[int, PtState]
    must_in: dict[int, MustFacts | None]
    summarized: set[int]
    suppress_may: bool = False

    def state(self, point: Point) -> PtState:
        side, sid = point
        table = self.pin if side == "in" else self.pout
        return table.get(sid, PtState())

    def scope(self, point: Point) -> list[str]:
        return scope_vars(self.program, point[1])

    def links(self, point: Point, path: AccessPath) -> set[Link]:
        return self.state(point).links(path)

    # -- must

    def must_link_aliases(self, point: Point, path: AccessPath) -> set[AccessPath]:
        """Paths that denote the same link as ``path`` on every execution."""
        if not path.fields:
            return {path}
        if point[0] != "in":
            raise ValueError("must facts are kept at statement entries")
        facts = self.must_in.get(point[1])
        st = self.state(point)
        target = st.links(path)
        out = {path}
        if not target:
            # the base is null on every execution, so there is no link to share
            return out
        for q in equivalents(facts, AccessPath(path.root)):
            cand = AccessPath(q.root, q.fields + path.fields)
            if len(cand.fields) > MAX_MUST_FIELDS + len(path.fields):
                continue
            if st.links(cand) & target:
                out.add(cand)
        return out

    # -- may

    def may_link_aliases(self, point: Point, path: AccessPath, mode: str = apg.DET) -> LivenessGraph:
        """Graph accepting every path that may denote the same link as ``path``."""
        targets = self.links(point, path)
        b = Builder(mode)
        if not path.fields:
            b.add_root(path.root, True)
            return b.freeze()
        if self.suppress_may or not targets:
            # a path that names no abstract link still aliases itself
            ids = self._chain(b, path)
            b.set_acc(ids, True)
            return b.freeze()
        end = b.add_node(path.fields[-1], [alloc_site("*")], True)
        add_fragment(b, self.link_nfa(point), targets, end, path.fields[-1])
        return b.freeze()

    def _chain(self, b: Builder, path: AccessPath):
        cur = b.add_root(path.root, False)
        for f in path.fields:
            nxt = b.add_node(f, [alloc_site("*")], False)
            b.add_edge(cur, nxt)
            cur = nxt
        return cur

    def link_nfa(self, point: Point, state: PtState | None = None) -> LinkNFA:
        """Transitions of the link automaton at ``point`` (optionally under ``state``).

        States are root variable names and ``(link, target)`` pairs; each
        transition is ``(field, link, next_state_or_None)``.
        """
        if state is not None:
            return link_automaton(state, self.scope(point), self.program.fields())
        cache = self.__dict__.setdefault("_nfa", {})
        if point not in cache:
            cache[point] = link_automaton(self.state(point), self.scope(point), self.program.fields())
        return cache[point]

    # -- closure of a liveness graph

    def node_links(self, g: LivenessGraph, st: PtState) -> dict:
        """Links each state of ``g`` may denote (union over the paths reaching it)."""
        out: dict = {v: {("v", v)} for v in g.roots}
        out.update({k: set() for k in g.nodes})
        work = deque(g.roots)
        while work:
            ref = work.popleft()
            src = out[ref]
            for m in g.entry(ref).succ:
                new = st.step(src, m[0]) - out[m]
                if new:
                    out[m] |= new
                    work.append(m)
        return out

    def close(self, g: LivenessGraph, point: Point, transitive: bool = False,
              state: PtState | None = None) -> LivenessGraph:
        """Insert may-alias paths of every live path of ``g`` (``transitive``: to a fixpoint)."""
        if self.suppress_may or g.is_empty():
            return g
        st = state if state is not None else self.state(point)
        trans = self.link_nfa(point, state)
        for _ in range(64):
            nl = self.node_links(g, st)
            b = Builder(g.mode)
            ids = b.load(g)
            for k in g.nodes:
                if nl[k]:
                    add_fragment(b, trans, nl[k], ids[k], k[0])
            new = b.freeze()
            if new == g or not transitive:
                return new
            g = new
        return g

    def store_sources(self, g: LivenessGraph, point: Point, base: str, f: str) -> set:
        """States of ``g`` reached by a path that may denote ``base.f``'s link."""
        path = AccessPath(base, (f,))
        found = set(g.reach(path))
        if self.suppress_may:
            return found
        st = self.state(point)
        targets = st.links(path)
        if not targets:
            return found
        seen: set = set()
        work = deque((v, ("v", v)) for v in g.roots)
        while work:
            ref, link = work.popleft()
            if (ref, link) in seen:
                continue
            seen.add((ref, link))
            for m in g.entry(ref).succ:
                for nl in st.step([link], m[0]):
                    if nl in targets:
                        found.add(m)
                    work.append((m, nl))
        return found

    # -- reporting

    def dump(self) -> dict:
        out = {}
        for _, s in self.program.all_stmts():
            for side in ("in", "out"):
                st = self.state((side, s.id))
                out[point_name((side, s.id))] = {
                    "vars": {v: sorted(loc_str(l) for l in ls) for v, ls in sorted(st.env.items()) if ls},
                    "heap": sorted(
                        [loc_str(l), f, sorted(loc_str(t) for t in ts)]
                        for (l, f), ts in st.heap.items() if ts
                    ),
                }
        return out


def compute_points_to(p: Program, suppress_may: bool = False) -> AliasOracle:
    if not p.normalized:
        raise ValueError("points-to analysis needs a normalized program")
    idx = p.stmt_index()
    mod = defined_vars(p)
    sites = call_sites(p)
    pin: dict[int, PtState] = {}
    pout: dict[int, PtState] = {}
    main = p.procedures[p.main]
    pin[main.cfg.entry] = PtState()
    work: deque[int] = deque([main.cfg.entry])
    queued = {main.cfg.entry}

    def push(sid: int) -> None:
        if sid not in queued:
            queued.add(sid)
            work.append(sid)

    def flow_in(sid: int, st: PtState) -> None:
        old = pin.get(sid)
        new = st if old is None else old.join(st)
        if new != old:
            pin[sid] = new
            push(sid)

    while work:
        sid = work.popleft()
        queued.discard(sid)
        proc, s = idx[sid]
        st = pin.get(sid)
        if st is None:
            continue
        if s.kind == CALL:
            callee = p.procedures[s.callee]
            flow_in(callee.cfg.entry, st)
            ex = pout.get(callee.cfg.exit)
            if ex is None:
                continue
            env = dict(ex.env)
            for v, val in st.env.items():
                if v not in mod[s.callee]:
                    env[v] = val
            for v in list(env):
                if v not in mod[s.callee] and v not in st.env:
                    del env[v]
            out = PtState(env, ex.heap).join(PtState({}, st.heap))
        else:
            out = transfer(s, st)
        if pout.get(sid) != out:
            pout[sid] = out
            for t in proc.cfg.succ[sid]:
                flow_in(t, out)
            if sid == proc.cfg.exit:
                for c in sites[proc.name]:
                    push(c)
    must = compute_must(p)
    return AliasOracle(p, pin, pout, must, summarized_sites(p), suppress_may)


def compute_must(p: Program) -> dict[int, MustFacts | None]:
    """Forward must-equality facts at every statement entry."""
    idx = p.stmt_index()
    mod = defined_vars(p)
    stored = stored_fields(p)
    sites = call_sites(p)
    fin: dict[int, MustFacts | None] = {sid: None for sid in idx}
    fout: dict[int, MustFacts | None] = {sid: None for sid in idx}
    work: deque[int] = deque()
    for proc in p.procedures.values():
        work.extend(proc.cfg.nodes)
    queued = set(work)
    entries = {proc.cfg.entry: name for name, proc in p.procedures.items()}

    def compute_in(sid: int):
        proc, _ = idx[sid]
        vals = [fout[q] for q in proc.cfg.pred[sid]]
        if sid in entries:
            if entries[sid] == p.main:
                vals.append(frozenset())
            vals.extend(fin[c] for c in sites[entries[sid]])
        res = None
        for v in vals:
            res = _meet(res, v)
        return res

    while work:
        sid = work.popleft()
        queued.discard(sid)
        proc, s = idx[sid]
        new_in = compute_in(sid)
        fin[sid] = new_in
        if new_in is None:
            continue
        if s.kind == CALL:
            ex = fout[p.procedures[s.callee].cfg.exit]
            kept = frozenset(
                fc for fc in new_in
                if fc[0] not in mod[s.callee] and fc[1].root not in mod[s.callee]
                and not set(fc[1].fields) & stored[s.callee]
            )
            out = None if ex is None else ex | kept
            callee_entry = p.procedures[s.callee].cfg.entry
            if callee_entry not in queued:
                queued.add(callee_entry)
                work.append(callee_entry)
        else:
            out = must_transfer(s, new_in)
        if out != fout[sid]:
            fout[sid] = out
            for t in proc.cfg.succ[sid]:
                if t not in queued:
                    queued.add(t)
                    work.append(t)
            if sid == proc.cfg.exit:
                for c in sites[proc.name]:
                    if c not in queued:
                        queued.add(c)
                        work.append(c)
    return fin


class LinkNFA(dict):
    """Transition table of the link automaton, with cached fragment plans."""

    def __init__(self):
        super().__init__()
        self.plans: dict = {}
        self._rev: dict | None = None

    def rev(self) -> dict:
        if self._rev is None:
            rev: dict = {}
            for src, tr in self.items():
                for _, _, nxt in tr:
                    if nxt is not None:
                        rev.setdefault(nxt, set()).add(src)
            self._rev = rev
        return self._rev


def link_automaton(st: PtState, roots: Iterable[str], fields: Iterable[str]) -> LinkNFA:
    fields = list(fields)
    trans = LinkNFA()

    def moves(link: Link, obj: Loc | None) -> list:
        out = []
        if link[0] != "a":
            a = ("a", link)
            out.append((ADDR, a, (a, cell_of(link))))
        objs = [obj] if obj is not None else []
        if link[0] == "v":
            objs = sorted(st.var(link[1]))
        for o in objs:
            for f in fields:
                nl = ("h", o, f)
                tg = st.cell(o, f)
                if not tg:
                    # a null link still has an address
                    out.append((f, nl, (nl, None)))
                for t in sorted(tg):
                    out.append((f, nl, (nl, t)))
        return out

    work: deque = deque()
    for v in roots:
        trans[v] = moves(("v", v), None)
        work.extend(s for _, _, s in trans[v] if s is not None)
    while work:
        state = work.popleft()
        if state in trans:
            continue
        trans[state] = moves(*state)
        work.extend(s for _, _, s in trans[state] if s is not None and s not in trans)
    return trans


def add_fragment(b: Builder, trans: LinkNFA, targets: set, node: int, field_name: str) -> None:
    """Add to ``b`` every automaton path whose last link is in ``targets``, ending at ``node``."""
    if not targets:
        return
    key = (frozenset(targets), field_name)
    plan = trans.plans.get(key)
    if plan is None:
        plan = trans.plans[key] = _fragment_plan(trans, targets, field_name)
    states, edges = plan
    ids = [b.add_root(st, False) if isinstance(st, str) else b.add_node(f, [alloc_site(site)], False)
           for st, f, site in states]
    for i, j in edges:
        b.add_edge(ids[i], node if j is None else ids[j])


def _fragment_plan(trans: LinkNFA, targets: set, field_name: str) -> tuple[list, list]:
    """States to create and edges to add for :func:`add_fragment` (``None`` is the end node)."""
    useful: set = set()
    for src, tr in trans.items():
        if any(lk in targets and f == field_name for f, lk, _ in tr):
            useful.add(src)
    rev = trans.rev()
    work = list(useful)
    while work:
        s = work.pop()
        for p in rev.get(s, ()):
            if p not in useful:
                useful.add(p)
                work.append(p)

    def addr_used(state) -> bool:
        return any(f == ADDR and (nxt in useful or (lk in targets and field_name == ADDR))
                   for f, lk, nxt in trans[state])

    states: list = []
    index: dict = {}

    def ref(state) -> int:
        if state not in index:
            if isinstance(state, str):
                states.append((state, None, None))
            else:
                link, obj = state
                f = link[2] if link[0] == "h" else ADDR
                # states are named by their target object; where the state's own
                # address matters, or there is no target, the link itself is named
                # so that two distinct links never share a node
                if obj is None:
                    site = link_site(link)
                elif link[0] == "a" or addr_used(state):
                    site = f"{loc_site(obj)}/{link_site(link)}"
                else:
                    site = loc_site(obj)
                states.append((state, f, site))
            index[state] = len(states) - 1
        return index[state]

    edges: list = []
    for src in sorted(useful, key=repr):
        r = ref(src)
        for f, lk, nxt in trans[src]:
            if lk in targets and f == field_name:
                edges.append((r, None))
            if nxt is not None and nxt in useful:
                edges.append((r, ref(nxt)))
    return states, edges


def iter_points(p: Program) -> Iterator[Point]:
    for _, s in p.all_stmts():
        yield ("in", s.id)
        yield ("out", s.id)
