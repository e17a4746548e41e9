"""Whole-program liveness with value contexts.

At every call the live-after graph is split three ways by what the callee
can define:

* ``pass``: some prefix's link is assigned directly in the callee; these
  paths are analysed flow-sensitively inside it;
* ``memo``: the link is only assigned by procedures the callee calls; the
  callee leaves them untouched, so they ride along with its context;
* ``bypass``: nothing in the callee's call cone defines them; they skip the
  call entirely.

A context is identified by ``(proc, pass, memo)``.  Contexts are solved
with a global worklist; when a context's entry value changes, every context
that called it is re-analysed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import apgraph as apg
from .alias import AliasOracle, Link, Point, PtState, _close_over_calls
from .apgraph import Builder, LivenessGraph
from .ir import DEFINES_FIELD, DEFINES_VAR, Program, Stmt
from .liveness import LivenessState, run_variant, variant_info

MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class DefSummary:
    direct: frozenset
    transitive: frozenset

    def level(self, link: Link) -> int:
        if link in self.direct:
            return 2
        if link in self.transitive:
            return 1
        return 0


def compute_def_summaries(p: Program, oracle: AliasOracle) -> dict[str, DefSummary]:
    """Abstract links each procedure may assign, directly and through callees."""
    direct: dict[str, set] = {}
    for name, proc in p.procedures.items():
        links: set = set()
        for s in proc.stmts:
            if s.kind in DEFINES_VAR:
                links.add(("v", s.x))
            elif s.kind in DEFINES_FIELD:
                st = oracle.state(("in", s.id))
                links.update(("h", l, s.f) for l in st.var(s.x))
        direct[name] = links
    trans = _close_over_calls(p, direct)
    return {name: DefSummary(frozenset(direct[name]), frozenset(trans[name])) for name in p.procedures}


@dataclass
class CallPartition:
    passed: LivenessGraph
    memo: LivenessGraph
    bypass: LivenessGraph


def call_state(oracle: AliasOracle, call: Stmt) -> PtState:
    return oracle.state(("in", call.id)).join(oracle.state(("out", call.id)))


def partition_at_call(call: Stmt, live_after: LivenessGraph, summaries: dict[str, DefSummary],
                      oracle: AliasOracle, enabled: bool = True) -> CallPartition:
    """Split ``live_after`` by the strongest definition level met along each path."""
    mode = live_after.mode
    if not enabled:
        return CallPartition(live_after, apg.empty(mode), apg.empty(mode))
    summary = summaries[call.callee]
    links = oracle.node_links(live_after, call_state(oracle, call))

    def level(ref) -> int:
        return max((summary.level(lk) for lk in links[ref]), default=0)

    # product of each state with the running status (max level over its prefixes)
    status: dict = {}
    work = deque()
    for v in live_after.roots:
        st = (v, level(v))
        status[st] = True
        work.append(st)
    edges: dict = {}
    while work:
        ref, lv = work.popleft()
        outs = []
        for m in live_after.entry(ref).succ:
            nxt = (m, max(lv, level(m)))
            outs.append(nxt)
            if nxt not in status:
                status[nxt] = True
                work.append(nxt)
        edges[(ref, lv)] = outs

    def build(keep_level) -> LivenessGraph:
        # states of the wanted status that can reach an accepting one
        good = {s for s in status if s[1] == keep_level and live_after.entry(s[0]).acc}
        changed = True
        while changed:
            changed = False
            for s, outs in edges.items():
                if s not in good and s[1] <= keep_level and any(o in good for o in outs):
                    good.add(s)
                    changed = True
        b = Builder(mode)
        ids: dict = {}

        def ref(s):
            r, lv = s
            acc = lv == keep_level and live_after.entry(r).acc
            if isinstance(r, str):
                return b.add_root(r, acc)
            if s not in ids:
                ids[s] = b.add_node(r[0], r[1], acc)
            return ids[s]

        for s in sorted(good, key=repr):
            src = ref(s)
            for o in edges[s]:
                if o in good:
                    b.add_edge(src, ref(o))
        return b.freeze()

    return CallPartition(build(2), build(1), build(0))


@dataclass
class Context:
    cid: int
    proc: str
    boundary: LivenessGraph
    memo: LivenessGraph
    state: LivenessState | None = None
    result: LivenessGraph | None = None
    callers: set = field(default_factory=set)  # (caller cid, call stmt id)
    sites: dict = field(default_factory=dict)  # call stmt id -> (CallPartition, child cid)


@dataclass
class ProgramResult:
    program: Program
    variant: str
    contexts: list[Context]
    ambient: dict[int, LivenessGraph]
    oracle: AliasOracle
    partitioning: bool = True

    def contexts_of(self, proc: str) -> list[Context]:
        return [c for c in self.contexts if c.proc == proc]

    def context_graph(self, ctx: Context, point: Point) -> LivenessGraph:
        """Full liveness at ``point`` in ``ctx``, including paths carried around it."""
        engine, _ = variant_info(self.variant)
        extra = self.ambient[ctx.cid]
        if engine == "greedy":
            local = ctx.state.at(point)
            return self.oracle.close(apg.union(local, extra), point, transitive=True)
        local = ctx.state.at(point, "phase1")
        return self.oracle.close(apg.union(local, extra), point)

    def graph(self, point: Point) -> LivenessGraph:
        """Union over every context of the procedure owning ``point``."""
        proc = self.program.proc_of(point[1]).name
        mode = variant_info(self.variant)[1]
        return apg.union(*(self.context_graph(c, point) for c in self.contexts_of(proc)), mode=mode)

    def phase1(self, point: Point) -> LivenessGraph:
        proc = self.program.proc_of(point[1]).name
        mode = variant_info(self.variant)[1]
        return apg.union(
            *(apg.union(c.state.at(point, "phase1"), self.ambient[c.cid]) for c in self.contexts_of(proc)),
            mode=mode,
        )

    def iterations(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.contexts:
            out[f"{c.proc}#{c.cid}"] = c.state.iterations
        return out


def analyze_program(p: Program, oracle: AliasOracle, v: str, partitioning: bool = True) -> ProgramResult:
    """Solve every reachable context of ``p`` for variant ``v``."""
    _, mode = variant_info(v)
    summaries = compute_def_summaries(p, oracle)
    contexts: list[Context] = []
    index: dict[tuple, int] = {}

    def context_for(proc: str, boundary: LivenessGraph, memo: LivenessGraph) -> Context:
        key = (proc, boundary, memo)
        if key not in index:
            index[key] = len(contexts)
            contexts.append(Context(len(contexts), proc, boundary, memo))
            enqueue(index[key])
        return contexts[index[key]]

    work: deque[int] = deque()
    queued: set[int] = set()

    def enqueue(cid: int) -> None:
        if cid not in queued:
            queued.add(cid)
            work.append(cid)

    empty = apg.empty(mode)
    context_for(p.main, empty, empty)
    rounds = 0
    while work:
        rounds += 1
        if rounds > MAX_ROUNDS:
            raise RuntimeError("interprocedural analysis did not stabilise")
        cid = work.popleft()
        queued.discard(cid)
        ctx = contexts[cid]
        proc = p.procedures[ctx.proc]
        sites: dict = {}

        def hook(s: Stmt, out: LivenessGraph, ctx=ctx, sites=sites) -> LivenessGraph:
            after = apg.union(out, ctx.memo)
            part = partition_at_call(s, after, summaries, oracle, partitioning)
            child = context_for(s.callee, part.passed, part.memo)
            child.callers.add((ctx.cid, s.id))
            sites[s.id] = (part, child.cid)
            res = child.result if child.result is not None else empty
            return apg.union(res, part.memo, part.bypass)

        ctx.state = run_variant(proc, oracle, v, hook, ctx.boundary)
        ctx.sites = sites
        entry = ctx.state.at(("in", proc.cfg.entry), "phase1")
        result = apg.union(entry, ctx.memo)
        if result != ctx.result:
            ctx.result = result
            for caller, _ in sorted(ctx.callers):
                enqueue(caller)
    # drop stale caller links left by earlier rounds
    for c in contexts:
        c.callers = {(cc, sid) for cc, sid in c.callers
                     if sid in contexts[cc].sites and contexts[cc].sites[sid][1] == c.cid}
    ambient = _ambient(contexts, mode)
    return ProgramResult(p, v, contexts, ambient, oracle, partitioning)


def _ambient(contexts: list[Context], mode: str) -> dict[int, LivenessGraph]:
    """Paths live across each context's activation that its own analysis never sees.

    A context sees its own memo plus every bypassed set on the chain of
    callers above it.  A caller's memo is not inherited: the caller's hook
    re-partitions it at each of its call sites, so it reaches the callee
    through the pass/memo/bypass split there.
    """
    carried = {c.cid: apg.empty(mode) for c in contexts}
    changed = True
    while changed:
        changed = False
        for c in contexts:
            parts = [carried[c.cid]]
            for caller, sid in sorted(c.callers):
                part, _ = contexts[caller].sites[sid]
                parts.extend([part.bypass, carried[caller]])
            new = apg.union(*parts, mode=mode)
            if new != carried[c.cid]:
                carried[c.cid] = new
                changed = True
    return {c.cid: apg.union(c.memo, carried[c.cid], mode=mode) for c in contexts}


def bypass_report(res: ProgramResult, k: int) -> list[dict]:
    """Per call site sizes of the three partitions (paths up to ``k``)."""
    rows = []
    for c in res.contexts:
        for sid, (part, child) in sorted(c.sites.items()):
            rows.append({
                "caller": c.proc, "context": c.cid, "call": sid,
                "callee": res.contexts[child].proc, "callee_context": child,
                "pass": sorted(map(str, apg.extract_paths(part.passed, k))),
                "memo": sorted(map(str, apg.extract_paths(part.memo, k))),
                "bypass": sorted(map(str, apg.extract_paths(part.bypass, k))),
            })
    return rows

