"""Backward heap liveness over access-path graphs.

Two engines share one set of transfer functions:

* greedy: every in/out value is closed under may-aliases as it is computed,
  so aliases travel with the fixpoint;
* minimal: the fixpoint runs without alias closure (aliases are only used
  inside gen/kill of stores), then each point's value is closed once.

Variants pair an engine with a graph mode: A greedy/nondet, B greedy/det,
C minimal/nondet, D minimal/det.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import apgraph as apg
from .alias import AliasOracle, Point
from .apgraph import AccessPath, LivenessGraph, use_site
from .ir import (
    ADDR, ADDROF, ADDROF_FIELD, ALLOC, BRANCH, CALL, COPY, LOAD, NULL, RET, STORE,
    STORE_ADDR, USE, Procedure, Stmt,
)

VARIANTS = {
    "A": ("greedy", apg.NONDET),
    "B": ("greedy", apg.DET),
    "C": ("minimal", apg.NONDET),
    "D": ("minimal", apg.DET),
}

MAX_PASSES = 10_000

CallHook = Callable[[Stmt, LivenessGraph], LivenessGraph]


def variant_info(v: str) -> tuple[str, str]:
    try:
        return VARIANTS[v]
    except KeyError:
        raise ValueError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}") from None


@dataclass
class GenKillResult:
    kill: list[AccessPath]
    gen: LivenessGraph

    def apply(self, out: LivenessGraph) -> LivenessGraph:
        g = out
        for pat in self.kill:
            g = apg.kill_prefix(g, pat)
        return apg.union(g, self.gen)


@dataclass
class LivenessState:
    proc: str
    variant: str
    mode: str
    lin: dict[int, LivenessGraph]
    lout: dict[int, LivenessGraph]
    phase1_in: dict[int, LivenessGraph] = field(default_factory=dict)
    phase1_out: dict[int, LivenessGraph] = field(default_factory=dict)
    iterations: int = 0

    def at(self, point: Point, phase: str = "final") -> LivenessGraph:
        side, sid = point
        if phase == "phase1":
            table = self.phase1_in if side == "in" else self.phase1_out
        else:
            table = self.lin if side == "in" else self.lout
        return table[sid]

    def points(self) -> list[Point]:
        return [(side, sid) for sid in sorted(self.lin) for side in ("in", "out")]


def _root(g: LivenessGraph, v: str) -> set:
    return {v} if v in g.roots else set()


def gen_kill(s: Stmt, out: LivenessGraph, oracle: AliasOracle) -> GenKillResult:
    """Kill patterns and generated paths of one normalized statement."""
    mode = out.mode
    k = s.kind
    here = ("in", s.id)
    lab = [use_site(s.id)]
    none = apg.empty(mode)
    if k == USE:
        return GenKillResult([], _bare(mode, s.x))
    if k in (ALLOC, NULL):
        return GenKillResult([AccessPath(s.x)], none)
    if k == COPY:
        if s.x == s.y:
            return GenKillResult([], none)
        gen = apg.graft(out, _root(out, s.x), s.y, (), root_acc=False)
        return GenKillResult([AccessPath(s.x)], gen)
    if k == LOAD:
        gen = apg.graft(out, _root(out, s.x), s.y, [(s.f, lab, False)], root_acc=True)
        return GenKillResult([AccessPath(s.x)], apg.union(gen, _bare(mode, s.y)))
    if k == ADDROF:
        gen = apg.graft(out, _root(out, s.x), s.y, [(ADDR, lab, False)], root_acc=False)
        return GenKillResult([AccessPath(s.x)], gen)
    if k == ADDROF_FIELD:
        chain = [(s.f, lab, False), (ADDR, lab, False)]
        gen = apg.graft(out, _root(out, s.x), s.y, chain, root_acc=True)
        return GenKillResult([AccessPath(s.x)], apg.union(gen, _bare(mode, s.y)))
    if k in (STORE, STORE_ADDR):
        target = AccessPath(s.x, (s.f,))
        kill = sorted(oracle.must_link_aliases(here, target))
        if not kill:
            raise AssertionError("must-alias set lost its reflexive member")
        sources = oracle.store_sources(out, here, s.x, s.f)
        if k == STORE:
            gen = apg.graft(out, sources, s.y, (), root_acc=False)
        else:
            gen = apg.graft(out, sources, s.y, [(ADDR, lab, False)], root_acc=False)
        return GenKillResult(kill, apg.union(gen, _bare(mode, s.x)))
    if k in (RET, BRANCH):
        return GenKillResult([], none)
    raise ValueError(f"no transfer function for statement kind {k!r}")


def _bare(mode: str, v: str) -> LivenessGraph:
    return apg.insert_path(apg.empty(mode), AccessPath(v), [])


def _backward_order(proc: Procedure) -> list[int]:
    """Reverse post-order of the reversed CFG, starting at the exit."""
    cfg = proc.cfg
    seen: set[int] = set()
    post: list[int] = []
    stack = [(cfg.exit, iter(sorted(cfg.pred[cfg.exit])))]
    seen.add(cfg.exit)
    while stack:
        n, it = stack[-1]
        for m in it:
            if m not in seen:
                seen.add(m)
                stack.append((m, iter(sorted(cfg.pred[m]))))
                break
        else:
            stack.pop()
            post.append(n)
    order = list(reversed(post))
    order.extend(n for n in sorted(cfg.nodes) if n not in seen)
    return order


def _fixpoint(
    proc: Procedure,
    mode: str,
    step: Callable[[Stmt, LivenessGraph], LivenessGraph],
    close_out: Callable[[int, LivenessGraph], LivenessGraph] | None,
    boundary: LivenessGraph | None,
) -> tuple[dict, dict, int]:
    cfg = proc.cfg
    order = _backward_order(proc)
    lin = {n: apg.empty(mode) for n in cfg.nodes}
    lout = {n: apg.empty(mode) for n in cfg.nodes}
    passes = 0
    for _ in range(MAX_PASSES):
        changed = False
        for n in order:
            if n == cfg.exit:
                out = boundary if boundary is not None else apg.empty(mode)
            else:
                out = apg.union(*(lin[m] for m in cfg.succ[n]), mode=mode)
            if close_out is not None:
                out = close_out(n, out)
            s = proc.stmt(n)
            new_in = step(s, out)
            if s.kind == CALL:
                # a callee context may still be pending (empty result) when the
                # live-after value first reaches it; joining keeps the pass monotone
                new_in = apg.union(lin[n], new_in)
            if out != lout[n] or new_in != lin[n]:
                changed = True
                lout[n] = out
                lin[n] = new_in
        if not changed:
            return lin, lout, passes
        passes += 1
    raise RuntimeError(f"no fixpoint for {proc.name} after {MAX_PASSES} passes")


def _stepper(oracle: AliasOracle, call_hook: CallHook | None):
    def step(s: Stmt, out: LivenessGraph) -> LivenessGraph:
        if s.kind == CALL:
            if call_hook is None:
                raise ValueError(f"call to {s.callee} needs an interprocedural driver")
            return call_hook(s, out)
        return gen_kill(s, out, oracle).apply(out)
    return step


def run_greedy(proc: Procedure, oracle: AliasOracle, mode: str, call_hook: CallHook | None = None,
               boundary: LivenessGraph | None = None, variant: str | None = None) -> LivenessState:
    base = _stepper(oracle, call_hook)

    def step(s: Stmt, out: LivenessGraph) -> LivenessGraph:
        return oracle.close(base(s, out), ("in", s.id), transitive=True)

    def close_out(n: int, out: LivenessGraph) -> LivenessGraph:
        return oracle.close(out, ("out", n), transitive=True)

    lin, lout, passes = _fixpoint(proc, mode, step, close_out, boundary)
    return LivenessState(proc.name, variant or ("A" if mode == apg.NONDET else "B"), mode,
                         lin, lout, dict(lin), dict(lout), passes)


def run_minimal(proc: Procedure, oracle: AliasOracle, mode: str, call_hook: CallHook | None = None,
                boundary: LivenessGraph | None = None, variant: str | None = None) -> LivenessState:
    lin1, lout1, passes = _fixpoint(proc, mode, _stepper(oracle, call_hook), None, boundary)
    lin = {n: oracle.close(g, ("in", n)) for n, g in lin1.items()}
    lout = {n: oracle.close(g, ("out", n)) for n, g in lout1.items()}
    return LivenessState(proc.name, variant or ("C" if mode == apg.NONDET else "D"), mode,
                         lin, lout, lin1, lout1, passes)


def run_variant(proc: Procedure, oracle: AliasOracle, v: str, call_hook: CallHook | None = None,
                boundary: LivenessGraph | None = None) -> LivenessState:
    engine, mode = variant_info(v)
    run = run_greedy if engine == "greedy" else run_minimal
    return run(proc, oracle, mode, call_hook, boundary, variant=v)
