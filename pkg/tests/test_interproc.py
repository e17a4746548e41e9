import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heaplive import apgraph as apg
from heaplive.alias import compute_points_to, heap_loc
from heaplive.interproc import (
    analyze_program, bypass_report, compute_def_summaries, partition_at_call,
)
from heaplive.ir import CALL, load_program
from heaplive.oracle import GenConfig, random_valid_program

from .helpers import load, paths, reachable_points

TWO_CALLS = """global a
proc p { use a }
proc main {
  a = new
  call p()
  call p()
  use a
}
"""

MUTUAL = """global a, b
proc f {
  a = new
  br L1 L2
L1: call g()
L2: ret
}
proc g {
  b = a
  br M1 M2
M1: call f()
M2: ret
}
proc main {
  call f()
  use b
}
"""

WALK = """global d
proc walk(n) {
  local m
  br more stop
more: m = n->next
  call walk(m)
stop: use n
}
proc main {
  local a, b
  a = new
  b = new
  a->next = b
  call walk(a)
  d = a->data
  use d
}
"""


def analyzed(text, v):
    p = load_program(text)
    return p, analyze_program(p, compute_points_to(p), v)


def test_store_in_bar_defines_shared_link(fig7):
    p, o = fig7
    s = compute_def_summaries(p, o)
    ly = heap_loc(next(st.id for _, st in p.all_stmts() if str(st) == "y = new"))
    # x->f in bar writes the cell that y.f names
    assert ("h", ly, "f") in s["bar"].direct
    assert ("v", "w") in s["foo"].direct
    assert ("h", ly, "f") in s["foo"].transitive - s["foo"].direct


def test_use_only_procedure_defines_nothing():
    p = load_program(TWO_CALLS)
    s = compute_def_summaries(p, compute_points_to(p))
    assert s["p"].direct == frozenset() and s["p"].transitive == frozenset()


def test_mutual_recursion_summaries():
    p = load_program(MUTUAL)
    s = compute_def_summaries(p, compute_points_to(p))
    both = s["f"].direct | s["g"].direct
    assert s["f"].transitive == s["g"].transitive == both
    for name in s:
        assert s[name].direct <= s[name].transitive


@pytest.mark.parametrize("v", "ABCD")
def test_callee_defining_nothing_bypasses_everything(v):
    _, res = analyzed(TWO_CALLS, v)
    for row in bypass_report(res, 5):
        assert row["pass"] == [] and row["memo"] == []
        assert row["bypass"] == ["a"]


@pytest.mark.parametrize("v", "ABCD")
def test_identical_calls_share_context(v):
    _, res = analyzed(TWO_CALLS, v)
    assert len(res.contexts_of("p")) == 1


@pytest.mark.parametrize("v", "ABCD")
def test_recursion_settles_on_distinct_boundaries(v):
    _, res = analyzed(WALK, v)
    walks = res.contexts_of("walk")
    assert len(walks) == 2
    assert len({(c.boundary, c.memo) for c in walks}) == 2


def test_nested_partitions(fig7):
    p, o = fig7
    res = analyze_program(p, o, "D")
    rows = {(r["caller"], r["callee"]): r for r in bypass_report(res, 5)}
    foo = rows[("main", "foo")]
    assert foo["pass"] == ["w", "w.g"] and foo["memo"] == ["y.f"] and foo["bypass"] == ["y", "z"]
    bar = rows[("foo", "bar")]
    assert bar["pass"] == ["y.f"] and bar["bypass"] == ["t", "t.g"]


def test_memo_reaches_callee_result(fig7):
    p, o = fig7
    res = analyze_program(p, o, "D")
    for c in res.contexts:
        assert apg.subset_upto(c.memo, c.result, 5)


def test_partitioning_off_passes_everything(fig7):
    p, o = fig7
    res = analyze_program(p, o, "D", partitioning=False)
    for row in bypass_report(res, 5):
        assert row["memo"] == [] and row["bypass"] == []


def test_reports_repeat(fig7):
    p, o = fig7
    assert bypass_report(analyze_program(p, o, "B"), 5) == bypass_report(analyze_program(p, o, "B"), 5)


@pytest.mark.parametrize("name", ["list_copy", "directory"])
def test_corpus_contexts_are_keyed_uniquely(name):
    p = load(name)
    res = analyze_program(p, compute_points_to(p), "D")
    keys = [(c.proc, c.boundary, c.memo) for c in res.contexts]
    assert len(keys) == len(set(keys))


# ---------------------------------------------------------------- properties

programs = st.integers(0, 10**6).map(
    lambda seed: random_valid_program(random.Random(seed), GenConfig(calls=True)))


def _check_partition(p, res):
    summaries = compute_def_summaries(p, res.oracle)
    for c in res.contexts:
        for sid in c.sites:
            s = p.stmt(sid)
            assert s.kind == CALL
            after = apg.union(c.state.lout[sid], c.memo)
            part = partition_at_call(s, after, summaries, res.oracle)
            sets = [apg.extract_paths(g, 5) for g in (part.passed, part.memo, part.bypass)]
            assert sets[0] | sets[1] | sets[2] == apg.extract_paths(after, 5)
            assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


@given(programs, st.sampled_from("ABCD"))
@settings(max_examples=40, deadline=None)
def test_partition_splits_live_set_exactly(p, v):
    _check_partition(p, analyze_program(p, compute_points_to(p), v))


@given(programs, st.sampled_from("ABCD"))
@settings(max_examples=30, deadline=None)
def test_partitioning_is_transparent(p, v):
    o = compute_points_to(p)
    on, off = analyze_program(p, o, v), analyze_program(p, o, v, partitioning=False)
    for pt in reachable_points(p):
        assert paths(on.graph(pt)) == paths(off.graph(pt)), pt


@pytest.mark.parametrize("name", ["fig7", "directory"])
def test_partition_property_on_corpus(name):
    p = load(name)
    for v in "AD":
        _check_partition(p, analyze_program(p, compute_points_to(p), v))
