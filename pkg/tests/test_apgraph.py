import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heaplive import apgraph as apg
from heaplive.apgraph import DET, NONDET, AccessPath, Builder, alloc_site, ap, use_site

from .helpers import paths

U = use_site


def det_graph(*items):
    """``items`` are (path text, [label-set per field]) pairs."""
    return apg.from_paths(DET, [(ap(t), [{U(s) for s in lab} for lab in labs]) for t, labs in items])


def nondet_graph(*items):
    return apg.from_paths(NONDET, [(ap(t), [U(s) for s in labs]) for t, labs in items])


# ---------------------------------------------------------------- access paths


def test_access_path_basics():
    r = ap("x.f.g")
    assert r.root == "x" and r.fields == ("f", "g")
    assert len(r) == 3
    assert str(r) == "x.f.g"
    assert ap("x->f->g") == r
    assert [str(q) for q in r.prefixes()] == ["x", "x.f", "x.f.g"]
    assert r.startswith(ap("x.f")) and not r.startswith(ap("x.g"))
    assert ap("x").extend("f") == ap("x.f")


def test_site_labels_render():
    assert str(U(4)) == "4"
    assert str(alloc_site(7)) == "@7"


# ---------------------------------------------------------------- empty / insert


@pytest.mark.parametrize("mode", [DET, NONDET])
def test_empty(mode):
    g = apg.empty(mode)
    assert not apg.accepts(g, ap("x"))
    assert apg.extract_paths(g, 5) == set()
    h = nondet_graph(("x.f", [1])) if mode == NONDET else det_graph(("x.f", [[1]]))
    assert apg.union(apg.empty(mode), h) == h


def test_det_insert_builds_chain_without_cycle():
    g = det_graph(("x.f", [[4]]), ("x.f.f", [[4], [2, 4]]))
    assert apg.describe(g) == "x->[f_{4}]; f_{2,4}->[]; f_{4}->[f_{2,4}]"
    assert paths(g) == {"x", "x.f", "x.f.f"}


def test_nondet_insert_merges_same_site_into_loop():
    g = nondet_graph(("x.f", [4]), ("x.f.f", [4, 4]), ("x.f.f.f", [4, 4, 2]))
    assert apg.describe(g) == "x->[f_4]; f_2->[]; f_4->[f_2,f_4]"
    # the self-loop makes every x.f^n live
    assert apg.accepts(g, ap("x.f.f.f.f.f"))


def test_insert_bare_variable():
    g = apg.insert_path(apg.empty(DET), ap("x"), [])
    assert g.roots.keys() == {"x"} and not g.nodes
    assert paths(g) == {"x"}


def test_insert_label_arity_mismatch():
    with pytest.raises(ValueError):
        apg.insert_path(apg.empty(DET), ap("x.f"), [])
    with pytest.raises(ValueError):
        apg.insert_path(apg.empty(NONDET), ap("x.f"), [{U(1), U(2)}])


def test_union_mode_mismatch():
    with pytest.raises(ValueError):
        apg.union(det_graph(("x", [])), nondet_graph(("y", [])))


# ---------------------------------------------------------------- union


def test_det_union_keeps_routes_apart():
    in5 = det_graph(("x.f.g", [[5], [6]]))
    in2 = det_graph(("x.h.f", [[2], [3, 5]]))
    g = apg.union(in5, in2)
    assert not apg.accepts(g, ap("x.h.f.g"))
    assert paths(g, 4) == {"x", "x.h", "x.h.f", "x.f", "x.f.g"}


def test_nondet_union_creates_spurious_path():
    in5 = nondet_graph(("x.f.g", [5, 6]))
    in2 = nondet_graph(("x.h.f", [2, 5]))
    g = apg.union(in5, in2)
    assert apg.accepts(g, ap("x.h.f.g"))


# ---------------------------------------------------------------- kill


def test_kill_sole_root_empties_graph():
    g = det_graph(("x.f", [[2]]))
    assert apg.kill_prefix(g, ap("x")).is_empty()


def test_kill_unreferenced_root_is_identity():
    g = det_graph(("x.f", [[2]]))
    assert apg.kill_prefix(g, ap("t")) is g


@pytest.mark.parametrize("mode", [DET, NONDET])
def test_kill_one_root_among_several(mode):
    items = [("y.f.g", [1, 2]), ("x.f", [3])]
    if mode == DET:
        g = det_graph(*[(t, [[s] for s in labs]) for t, labs in items])
    else:
        g = nondet_graph(*items)
    assert paths(apg.kill_prefix(g, ap("x"))) == {"y.f.g", "y.f", "y"}


def test_kill_field_prefix_keeps_base():
    g = det_graph(("x.f.g", [[1], [2]]), ("x.h", [[3]]))
    assert paths(apg.kill_prefix(g, ap("x.f"))) == {"x", "x.h"}


# ---------------------------------------------------------------- gen_transfer


def test_gen_transfer_copy():
    g = det_graph(("x.g", [[3]]))
    out = apg.gen_transfer(g, ap("x"), ap("y"), U(9))
    assert paths(out) == {"y", "y.g"}


def test_gen_transfer_load_prepends_labelled_field():
    # statement 4 is x = x->f; x and x.f live after it
    g = det_graph(("x.f", [[2, 4]]))
    out = apg.gen_transfer(g, ap("x"), ap("x.f"), U(4))
    assert apg.describe(out) == "x->[f_{4}]; f_{2,4}->[]; f_{4}->[f_{2,4}]"


def test_gen_transfer_missing_source():
    g = det_graph(("x.g", [[3]]))
    assert apg.gen_transfer(g, ap("z"), ap("y"), U(9)).is_empty()


# ---------------------------------------------------------------- extract / subset


def test_extract_from_cycle():
    # x.(f)*.g with all prefixes
    b = Builder(NONDET)
    b.add_root("x", True)
    f = b.add_node("f", [U(1)])
    g = b.add_node("g", [U(2)])
    b.add_edge("x", f)
    b.add_edge("x", g)
    b.add_edge(f, f)
    b.add_edge(f, g)
    graph = b.freeze()
    assert paths(graph, 4) == {"x", "x.g", "x.f", "x.f.g", "x.f.f", "x.f.f.g", "x.f.f.f"}
    with pytest.raises(ValueError):
        apg.extract_paths(graph, 0)


def test_unknown_root_not_accepted():
    assert not apg.accepts(det_graph(("x.f", [[1]])), ap("q"))


def test_subset_upto_direction():
    small = det_graph(("x.f", [[2]]))
    big = nondet_graph(("x.f", [4]), ("x.f.f", [4, 4]))
    assert apg.subset_upto(small, small, 5)
    assert apg.subset_upto(det_graph(("x.f", [[4]])), apg.union(det_graph(("x.f", [[4]])), det_graph(("y", []))), 5)
    assert not apg.subset_upto(big, nondet_graph(("x.f", [4])), 5)


def test_restrict_roots():
    g = det_graph(("x.f", [[1]]), ("y.g", [[2]]))
    assert paths(apg.restrict_roots(g, {"y"})) == {"y", "y.g"}
    assert paths(apg.restrict_roots(g, lambda v: v == "x")) == {"x", "x.f"}


def test_dot_is_stable_and_uses_site_names():
    g = nondet_graph(("x.f", [4]), ("x.f.f", [4, 4]))
    text = apg.to_dot(g, "t", site_name=lambda lb: f"s{lb.site}")
    assert text == apg.to_dot(g, "t", site_name=lambda lb: f"s{lb.site}")
    assert 'label="f_s4"' in text
    assert text.count("->") == 2


# ---------------------------------------------------------------- properties

ROOTS = ["x", "y"]
FIELDS = ["f", "g"]
SITES = [1, 2, 3]

path_st = st.builds(
    AccessPath, st.sampled_from(ROOTS), st.lists(st.sampled_from(FIELDS), max_size=4).map(tuple)
)


@st.composite
def labelled_paths(draw, mode, max_paths=4):
    items = []
    for p in draw(st.lists(path_st, min_size=1, max_size=max_paths)):
        if mode == NONDET:
            labs = [U(draw(st.sampled_from(SITES))) for _ in p.fields]
        else:
            labs = [{U(s) for s in draw(st.sets(st.sampled_from(SITES), min_size=1, max_size=2))}
                    for _ in p.fields]
        items.append((p, labs))
    return items


@st.composite
def random_graph(draw, mode):
    """Small graph built node by node, cycles allowed."""
    n = draw(st.integers(1, 6))
    b = Builder(mode)
    nodes = []
    for _ in range(n):
        f = draw(st.sampled_from(FIELDS))
        if mode == NONDET:
            labs = {U(draw(st.sampled_from(SITES)))}
        else:
            labs = {U(s) for s in draw(st.sets(st.sampled_from(SITES), min_size=1, max_size=2))}
        nodes.append(b.add_node(f, labs, draw(st.booleans())))
    for v in draw(st.sets(st.sampled_from(ROOTS), min_size=1)):
        b.add_root(v, draw(st.booleans()))
        for i in draw(st.sets(st.integers(0, n - 1), max_size=2)):
            b.add_edge(v, nodes[i])
    for a, c in draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=8)):
        b.add_edge(nodes[a], nodes[c])
    return b.freeze()


modes = st.sampled_from([DET, NONDET])


def trie(items):
    """Graph in which every path has private labels, so nothing is shared."""
    sites = itertools.count(100)
    fresh: dict = {}
    out = []
    for p, _ in items:
        labs = []
        for n in range(1, len(p.fields) + 1):
            key = p.prefix(n)
            if key not in fresh:
                fresh[key] = U(next(sites))
            labs.append(fresh[key])
        out.append((p, labs))
    return out


def closure(ps):
    return {q for p in ps for q in p.prefixes()}


@given(modes.flatmap(lambda m: st.tuples(st.just(m), random_graph(m))))
def test_invariants_hold_after_freeze(mg):
    _, g = mg
    assert apg.check_invariants(g) == []


@given(st.data())
def test_union_contains_both(data):
    mode = data.draw(modes)
    a, b = data.draw(random_graph(mode)), data.draw(random_graph(mode))
    u = apg.union(a, b)
    assert apg.extract_paths(a, 5) | apg.extract_paths(b, 5) <= apg.extract_paths(u, 5)
    assert apg.check_invariants(u) == []


@given(st.data())
def test_union_algebra(data):
    mode = data.draw(modes)
    a, b = data.draw(random_graph(mode)), data.draw(random_graph(mode))
    assert apg.union(a, a) == a
    assert apg.union(a, b) == apg.union(b, a)


@given(st.data())
def test_private_labels_make_union_exact(data):
    mode = data.draw(modes)
    items = trie(data.draw(labelled_paths(mode)))
    g = apg.from_paths(mode, items)
    assert apg.extract_paths(g, 5) == closure(p for p, _ in items)


@given(st.data())
def test_insert_is_prefix_closed(data):
    mode = data.draw(modes)
    g = apg.from_paths(mode, data.draw(labelled_paths(mode)))
    for r in apg.extract_paths(g, 6):
        for q in r.prefixes():
            assert apg.accepts(g, q)


@given(st.data(), path_st)
def test_kill_is_sound(data, pattern):
    # nothing outside the pattern is lost, nothing new appears
    mode = data.draw(modes)
    g = data.draw(random_graph(mode))
    k = apg.kill_prefix(g, pattern)
    before, after = apg.extract_paths(g, 5), apg.extract_paths(k, 5)
    assert {r for r in before if not r.startswith(pattern)} <= after <= before


@given(st.data(), path_st)
def test_kill_is_complete_on_unshared_graphs(data, pattern):
    mode = data.draw(modes)
    items = trie(data.draw(labelled_paths(mode)))
    g = apg.from_paths(mode, items)
    after = apg.extract_paths(apg.kill_prefix(g, pattern), 6)
    assert after == {r for r in closure(p for p, _ in items) if not r.startswith(pattern)}


# One new field at most, as every statement form produces; a longer chain
# with one repeated label would legitimately fold into a loop.
short_path_st = st.builds(AccessPath, st.sampled_from(ROOTS),
                          st.lists(st.sampled_from(FIELDS), max_size=1).map(tuple))


@given(st.data(), path_st, short_path_st)
@settings(max_examples=150)
def test_gen_transfer_matches_set_rewrite(data, src, dst):
    mode = data.draw(modes)
    g = data.draw(random_graph(mode))
    k = 5
    out = apg.gen_transfer(g, src, dst, U(99))
    big = apg.extract_paths(g, k + len(src))
    want = {AccessPath(dst.root, dst.fields + r.fields[len(src.fields):])
            for r in big if r.startswith(src)}
    if want and dst.fields:
        # the new nodes along dst accept too
        want |= set(dst.prefixes())
    assert apg.extract_paths(out, k) == {r for r in want if len(r) <= k}


@given(st.data())
def test_det_labels_only_grow(data):
    a = apg.from_paths(DET, data.draw(labelled_paths(DET)))
    b = apg.from_paths(DET, data.draw(labelled_paths(DET)))
    u = apg.union(a, b)
    for r in apg.extract_paths(a, 5):
        if r.fields:
            (na,), (nu,) = a.reach(r), u.reach(r)
            assert na[1] <= nu[1]


@given(st.data())
def test_det_reach_is_deterministic(data):
    g = data.draw(random_graph(DET))
    for r in apg.extract_paths(g, 5):
        assert len(g.reach(r)) == 1
