"""Access-path automata (liveness graphs).

A graph has one initial state per root variable and field nodes identified
by ``(field, labels)``.  In NONDET mode every node carries a single site
label and nodes with the same ``(field, label)`` are one node.  In DET mode a
node carries a label set, every source has at most one successor per field,
and nodes with equal ``(field, label-set)`` are merged.

Edges are not labelled explicitly: the edge into a node reads that node's
field.  Every node has an ``accepting`` flag; graphs produced by the
transfer functions accept every field node, while roots reached only through
aliasing and partitioned call-site graphs may carry non-accepting states.
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

NONDET = "nondet"
DET = "det"
MODES = (NONDET, DET)

# Debug-mode invariant scan after every graph construction.
DEBUG = bool(os.environ.get("HEAPLIVE_DEBUG"))
VIOLATIONS: list[str] = []
CHECKED = [0]


@dataclass(frozen=True)
class SiteLabel:
    kind: str  # "use" or "alloc"
    site: int | str

    def sort_key(self) -> tuple:
        return (self.kind != "use", isinstance(self.site, str), str(self.site).zfill(8))

    def __str__(self) -> str:
        return str(self.site) if self.kind == "use" else f"@{self.site}"


def use_site(s: int) -> SiteLabel:
    return SiteLabel("use", s)


def alloc_site(s: int | str) -> SiteLabel:
    return SiteLabel("alloc", s)


@dataclass(frozen=True, order=True)
class AccessPath:
    root: str
    fields: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "AccessPath":
        parts = text.replace("->", ".").split(".")
        return cls(parts[0], tuple(parts[1:]))

    def __str__(self) -> str:
        return ".".join((self.root,) + self.fields)

    def __len__(self) -> int:
        return 1 + len(self.fields)

    def extend(self, *fields: str) -> "AccessPath":
        return AccessPath(self.root, self.fields + tuple(fields))

    def prefix(self, n: int) -> "AccessPath":
        """The prefix with ``n`` fields."""
        return AccessPath(self.root, self.fields[:n])

    def prefixes(self) -> Iterator["AccessPath"]:
        for n in range(len(self.fields) + 1):
            yield self.prefix(n)

    def startswith(self, other: "AccessPath") -> bool:
        return self.root == other.root and self.fields[: len(other.fields)] == other.fields


def ap(text: str) -> AccessPath:
    return AccessPath.parse(text)


def label_key(labels: Iterable[SiteLabel]) -> tuple:
    return tuple(sorted((lb.sort_key() for lb in labels)))


NodeKey = tuple  # (field, frozenset[SiteLabel])


@dataclass(frozen=True)
class Entry:
    acc: bool
    succ: frozenset


class LivenessGraph:
    """Immutable canonical graph. Build new ones with :class:`Builder`."""

    __slots__ = ("mode", "roots", "nodes", "_hash", "_index")

    def __init__(self, mode: str, roots: Mapping[str, Entry], nodes: Mapping[NodeKey, Entry]):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.roots = dict(roots)
        self.nodes = dict(nodes)
        self._hash = None
        self._index = None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LivenessGraph)
            and self.mode == other.mode
            and self.roots == other.roots
            and self.nodes == other.nodes
        )

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(
                (self.mode, frozenset(self.roots.items()), frozenset(self.nodes.items()))
            )
        return self._hash

    def __repr__(self) -> str:
        return f"LivenessGraph({self.mode}, {describe(self)})"

    def is_empty(self) -> bool:
        return not self.roots

    def entry(self, ref) -> Entry:
        return self.roots[ref] if isinstance(ref, str) else self.nodes[ref]

    def step(self, refs: Iterable, field: str) -> set[NodeKey]:
        """Successors of ``refs`` reading ``field``."""
        idx = self._succ_index()
        out: set[NodeKey] = set()
        for r in refs:
            out.update(idx.get(r, {}).get(field, ()))
        return out

    def _succ_index(self) -> dict:
        if self._index is None:
            idx: dict = {}
            for ref, e in list(self.roots.items()) + list(self.nodes.items()):
                by_field: dict[str, list] = defaultdict(list)
                for m in e.succ:
                    by_field[m[0]].append(m)
                idx[ref] = dict(by_field)
            self._index = idx
        return self._index

    def reach(self, path: AccessPath) -> set:
        """States reached by reading ``path`` (a root name or node keys)."""
        if path.root not in self.roots:
            return set()
        cur: set = {path.root}
        for f in path.fields:
            cur = self.step(cur, f)
            if not cur:
                break
        return cur

    def accepting(self, refs: Iterable) -> bool:
        return any(self.entry(r).acc for r in refs)

    def variables(self) -> list[str]:
        return sorted(self.roots)

    def labels(self) -> set[SiteLabel]:
        return {lb for k in self.nodes for lb in k[1]}


def _node_sort(k: NodeKey) -> tuple:
    return (k[0], label_key(k[1]))


# ---------------------------------------------------------------- builder


class Builder:
    """Mutable graph under construction; :meth:`freeze` canonicalizes."""

    def __init__(self, mode: str):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.field: list[str] = []
        self.lab: list[set] = []
        self.acc: list[bool] = []
        self.succ: list[set[int]] = []
        self.roots: dict[str, list] = {}

    def add_root(self, var: str, acc: bool = False) -> str:
        r = self.roots.setdefault(var, [False, set()])
        r[0] = r[0] or acc
        return var

    def add_node(self, field: str, labels: Iterable[SiteLabel], acc: bool = True) -> int:
        labels = set(labels)
        if not labels:
            raise ValueError("field nodes need at least one site label")
        if self.mode == NONDET and len(labels) != 1:
            raise ValueError("non-deterministic graphs need single-site labels")
        self.field.append(field)
        self.lab.append(labels)
        self.acc.append(acc)
        self.succ.append(set())
        return len(self.field) - 1

    def add_edge(self, src, dst: int) -> None:
        if isinstance(src, str):
            self.roots[src][1].add(dst)
        else:
            self.succ[src].add(dst)

    def set_acc(self, ref, acc: bool = True) -> None:
        if isinstance(ref, str):
            self.roots[ref][0] = self.roots[ref][0] or acc
        else:
            self.acc[ref] = self.acc[ref] or acc

    def load(self, g: LivenessGraph, roots: bool = True) -> dict:
        """Copy ``g`` in; returns a map from g's node keys to builder ids."""
        if g.mode != self.mode:
            raise ValueError(f"mode mismatch: {g.mode} vs {self.mode}")
        ids = {}
        for k in sorted(g.nodes, key=_node_sort):
            ids[k] = self.add_node(k[0], k[1], g.nodes[k].acc)
        for k, e in g.nodes.items():
            self.succ[ids[k]].update(ids[m] for m in e.succ)
        if roots:
            for v, e in g.roots.items():
                self.add_root(v, e.acc)
                self.roots[v][1].update(ids[m] for m in e.succ)
        return ids

    def freeze(self) -> LivenessGraph:
        b = _trim(self)
        if b.mode == DET:
            b = _determinize(b)
        g = _canonicalize(b)
        if DEBUG:
            CHECKED[0] += 1
            for msg in check_invariants(g):
                VIOLATIONS.append(msg)
        return g


def _trim(b: Builder) -> Builder:
    """Copy of ``b`` without nodes that are unreachable or cannot reach acceptance."""
    reach: set[int] = set()
    stack = [m for _, s in b.roots.values() for m in s]
    while stack:
        i = stack.pop()
        if i not in reach:
            reach.add(i)
            stack.extend(b.succ[i])
    pred: dict[int, set[int]] = defaultdict(set)
    for i in reach:
        for m in b.succ[i]:
            pred[m].add(i)
    useful = {i for i in reach if b.acc[i]}
    stack = list(useful)
    while stack:
        i = stack.pop()
        for p in pred[i]:
            if p not in useful:
                useful.add(p)
                stack.append(p)
    out = Builder(b.mode)
    ids = {}
    for i in sorted(useful):
        ids[i] = out.add_node(b.field[i], b.lab[i], b.acc[i])
    for i in sorted(useful):
        out.succ[ids[i]] = {ids[m] for m in b.succ[i] if m in useful}
    for v, (a, succ) in b.roots.items():
        out.add_root(v, a)
        out.roots[v][1] = {ids[m] for m in succ if m in useful}
    return out


SUBSET_LIMIT = 4096


def _determinize(b: Builder) -> Builder:
    """Subset construction: one successor per field, labelled by the union of its members.

    Node keys can still collide afterwards; :func:`_canonicalize` merges
    those.  Falls back to ``b`` itself if the subset graph grows too large.
    """
    out = Builder(b.mode)
    ids: dict[frozenset, int] = {}
    work: list[frozenset] = []

    def group(members) -> list[frozenset]:
        by_field: dict[str, set[int]] = defaultdict(set)
        for m in members:
            by_field[b.field[m]].add(m)
        return [frozenset(by_field[f]) for f in sorted(by_field)]

    def ref(subset: frozenset) -> int:
        if subset not in ids:
            if len(ids) >= SUBSET_LIMIT:
                raise OverflowError
            labels = set().union(*(b.lab[m] for m in subset))
            ids[subset] = out.add_node(b.field[next(iter(subset))], labels,
                                       any(b.acc[m] for m in subset))
            work.append(subset)
        return ids[subset]

    try:
        for v, (a, succ) in sorted(b.roots.items()):
            out.add_root(v, a)
            for sub in group(succ):
                out.add_edge(v, ref(sub))
        while work:
            subset = work.pop()
            src = ids[subset]
            for sub in group(set().union(*(b.succ[m] for m in subset))):
                out.add_edge(src, ref(sub))
    except OverflowError:
        return b
    return out


def _canonicalize(b: Builder) -> LivenessGraph:
    n = len(b.field)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    labels = [set(s) for s in b.lab]
    acc = list(b.acc)
    succ = [set(s) for s in b.succ]
    roots = {v: [a, set(s)] for v, (a, s) in b.roots.items()}

    def merge(i: int, j: int) -> int:
        i, j = find(i), find(j)
        if i == j:
            return i
        if j < i:
            i, j = j, i
        parent[j] = i
        labels[i] |= labels[j]
        acc[i] = acc[i] or acc[j]
        succ[i] |= succ[j]
        return i

    def live_nodes() -> set[int]:
        seen: set[int] = set()
        stack = [find(m) for _, s in roots.values() for m in s]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(find(m) for m in succ[i])
        return seen

    changed = True
    while changed:
        changed = False
        alive = live_nodes()
        if b.mode == DET:
            sources = [s for _, s in roots.values()] + [succ[i] for i in alive]
            for s in sources:
                by_field: dict[str, set[int]] = defaultdict(set)
                for m in s:
                    by_field[b.field[find(m)]].add(find(m))
                for group in by_field.values():
                    if len(group) > 1:
                        first, *rest = sorted(group)
                        for r in rest:
                            merge(first, r)
                        changed = True
        by_key: dict[tuple, int] = {}
        for i in sorted(live_nodes()):
            key = (b.field[i], frozenset(labels[i]))
            if key in by_key and find(by_key[key]) != i:
                merge(by_key[key], i)
                changed = True
            else:
                by_key[key] = i
    alive = live_nodes()
    # drop states that cannot reach an accepting state
    useful = {i for i in alive if acc[i]}
    grew = True
    while grew:
        grew = False
        for i in alive - useful:
            if any(find(m) in useful for m in succ[i]):
                useful.add(i)
                grew = True
    key = {i: (b.field[i], frozenset(labels[i])) for i in useful}
    nodes = {
        key[i]: Entry(acc[i], frozenset(key[find(m)] for m in succ[i] if find(m) in useful))
        for i in useful
    }
    out_roots = {}
    for v, (a, s) in roots.items():
        ss = frozenset(key[find(m)] for m in s if find(m) in useful)
        if a or ss:
            out_roots[v] = Entry(a, ss)
    return LivenessGraph(b.mode, out_roots, nodes)


# ---------------------------------------------------------------- operations


def empty(mode: str = DET) -> LivenessGraph:
    return LivenessGraph(mode, {}, {})


def union(*graphs: LivenessGraph, mode: str | None = None) -> LivenessGraph:
    graphs = tuple(graphs)
    if not graphs:
        return empty(mode or DET)
    mode = mode or graphs[0].mode
    nonempty = [g for g in graphs if not g.is_empty()]
    for g in graphs:
        if g.mode != mode:
            raise ValueError(f"mode mismatch: {g.mode} vs {mode}")
    if len(nonempty) == 1:
        return nonempty[0]
    if not nonempty:
        return empty(mode)
    b = Builder(mode)
    for g in nonempty:
        b.load(g)
    return b.freeze()


def _label_sets(labels, n: int) -> list[set]:
    out = []
    for lb in labels:
        out.append({lb} if isinstance(lb, SiteLabel) else set(lb))
    if len(out) != n:
        raise ValueError(f"path has {n} fields but {len(out)} label sets were given")
    return out


def insert_path(g: LivenessGraph, path: AccessPath, labels: Sequence) -> LivenessGraph:
    """Add ``path`` (and its prefixes) with the given per-field labels."""
    sets = _label_sets(labels, len(path.fields))
    b = Builder(g.mode)
    b.load(g)
    cur = b.add_root(path.root, True)
    for f, lbs in zip(path.fields, sets):
        nxt = b.add_node(f, lbs, True)
        b.add_edge(cur, nxt)
        cur = nxt
    return b.freeze()


def from_paths(mode: str, paths: Iterable[tuple[AccessPath, Sequence]]) -> LivenessGraph:
    g = empty(mode)
    for p, labels in paths:
        g = insert_path(g, p, labels)
    return g


def _path_counts(g: LivenessGraph) -> dict:
    """Number of distinct paths reaching each state, saturated at 2."""
    count = {v: 1 for v in g.roots}
    count.update({k: 0 for k in g.nodes})
    changed = True
    while changed:
        changed = False
        new = {v: 1 for v in g.roots}
        new.update({k: 0 for k in g.nodes})
        for ref, e in list(g.roots.items()) + list(g.nodes.items()):
            for m in e.succ:
                new[m] = min(2, new[m] + count[ref])
        if new != count:
            count = new
            changed = True
    return count


def kill_prefix(g: LivenessGraph, pattern: AccessPath) -> LivenessGraph:
    """Remove every accepted path having ``pattern`` as a prefix.

    DET graphs split states along the pattern, so the removal is exact up to
    the merging that canonicalization re-imposes.  NONDET graphs cannot split
    a ``(field, site)`` node, so an edge is deleted only when its source is
    reached by the pattern's parent alone; otherwise the paths are kept.
    """
    if pattern.root not in g.roots:
        return g
    n = len(pattern.fields)
    if n == 0:
        roots = {v: e for v, e in g.roots.items() if v != pattern.root}
        b = Builder(g.mode)
        b.load(LivenessGraph(g.mode, roots, g.nodes))
        return b.freeze()
    if g.mode == NONDET:
        return _kill_nondet(g, pattern)
    return _kill_split(g, pattern)


def _kill_nondet(g: LivenessGraph, pattern: AccessPath) -> LivenessGraph:
    parent = g.reach(pattern.prefix(len(pattern.fields) - 1))
    last = pattern.fields[-1]
    counts = _path_counts(g)
    doomed = {ref for ref in parent if counts[ref] == 1}
    if not doomed:
        return g
    roots = dict(g.roots)
    nodes = dict(g.nodes)
    for ref in doomed:
        table = roots if isinstance(ref, str) else nodes
        e = table[ref]
        table[ref] = Entry(e.acc, frozenset(m for m in e.succ if m[0] != last))
    b = Builder(g.mode)
    b.load(LivenessGraph(g.mode, roots, nodes))
    return b.freeze()


def _kill_split(g: LivenessGraph, pattern: AccessPath) -> LivenessGraph:
    b = Builder(g.mode)
    off = b.load(LivenessGraph(g.mode, {v: e for v, e in g.roots.items() if v != pattern.root}, g.nodes))
    # every original node stays available as an "off the pattern" state
    fields = pattern.fields
    n = len(fields)
    root_entry = g.roots[pattern.root]
    b.add_root(pattern.root, root_entry.acc)
    on: dict[tuple, int] = {}
    stack: list[tuple] = []

    def link(src, m: NodeKey, i: int) -> None:
        # ``i`` fields of the pattern have been matched before reading m
        if m[0] != fields[i]:
            b.add_edge(src, off[m])
            return
        if i + 1 == n:
            return  # this edge completes the pattern: killed
        key = (m, i + 1)
        if key not in on:
            on[key] = b.add_node(m[0], m[1], g.nodes[m].acc)
            stack.append(key)
        b.add_edge(src, on[key])

    for m in root_entry.succ:
        link(pattern.root, m, 0)
    while stack:
        m, i = stack.pop()
        for s in g.nodes[m].succ:
            link(on[(m, i)], s, i)
    return b.freeze()


def graft(
    g: LivenessGraph,
    sources: Iterable,
    root: str,
    chain: Sequence[tuple[str, Iterable[SiteLabel], bool]] = (),
    root_acc: bool = True,
) -> LivenessGraph:
    """Fragment ``root.chain.σ`` for every suffix σ leaving ``sources`` in ``g``.

    ``chain`` lists ``(field, labels, accepting)`` for the new prefix nodes;
    the last new state also accepts when any source accepts.
    """
    sources = list(sources)
    if not sources:
        return empty(g.mode)
    b = Builder(g.mode)
    ids = b.load(g, roots=False)
    src_acc = g.accepting(sources)
    succ: set[int] = set()
    for r in sources:
        succ.update(ids[m] for m in g.entry(r).succ)
    cur = b.add_root(root, root_acc if chain else (root_acc or src_acc))
    for i, (f, labels, acc) in enumerate(chain):
        last = i == len(chain) - 1
        nxt = b.add_node(f, labels, acc or (last and src_acc))
        b.add_edge(cur, nxt)
        cur = nxt
    for m in succ:
        b.add_edge(cur, m)
    return b.freeze()


def gen_transfer(
    g: LivenessGraph, src: AccessPath, dst: AccessPath, label: SiteLabel
) -> LivenessGraph:
    """Fragment accepting ``dst.σ`` for every ``src.σ`` accepted by ``g``.

    New fields of ``dst`` are labelled with ``label``; σ keeps its labels.
    """
    sources = g.reach(src)
    chain = [(f, [label], True) for f in dst.fields]
    return graft(g, sources, dst.root, chain, root_acc=bool(chain))


def accepts(g: LivenessGraph, path: AccessPath) -> bool:
    return g.accepting(g.reach(path))


def extract_paths(g: LivenessGraph, k: int) -> set[AccessPath]:
    """All accepted paths of length at most ``k`` (a bare variable has length 1)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    out: set[AccessPath] = set()
    frontier = [(AccessPath(v), frozenset([v])) for v in g.roots]
    length = 1
    while frontier and length <= k:
        nxt = []
        for path, refs in frontier:
            if g.accepting(refs):
                out.add(path)
            if length == k:
                continue
            by_field: dict[str, set] = defaultdict(set)
            for r in refs:
                for m in g.entry(r).succ:
                    by_field[m[0]].add(m)
            for f, ms in by_field.items():
                nxt.append((path.extend(f), frozenset(ms)))
        frontier = nxt
        length += 1
    return out


def subset_upto(a: LivenessGraph, b: LivenessGraph, k: int) -> bool:
    return extract_paths(a, k) <= extract_paths(b, k)


def restrict_roots(g: LivenessGraph, keep) -> LivenessGraph:
    """Sub-graph reachable from the roots satisfying ``keep`` (a set or predicate)."""
    pred = keep if callable(keep) else (lambda v: v in keep)
    b = Builder(g.mode)
    b.load(LivenessGraph(g.mode, {v: e for v, e in g.roots.items() if pred(v)}, g.nodes))
    return b.freeze()


# ---------------------------------------------------------------- inspection


def node_name(key: NodeKey, mode: str, site_name: Callable[[SiteLabel], str] = str) -> str:
    labels = ",".join(site_name(lb) for lb in sorted(key[1], key=SiteLabel.sort_key))
    if mode == NONDET:
        return f"{key[0]}_{labels}"
    return f"{key[0]}_{{{labels}}}"


def describe(g: LivenessGraph) -> str:
    parts = []
    for v in sorted(g.roots):
        e = g.roots[v]
        tgt = ",".join(sorted(node_name(m, g.mode) for m in e.succ))
        parts.append(f"{v}{'' if e.acc else '?'}->[{tgt}]")
    for k in sorted(g.nodes, key=_node_sort):
        e = g.nodes[k]
        tgt = ",".join(sorted(node_name(m, g.mode) for m in e.succ))
        parts.append(f"{node_name(k, g.mode)}{'' if e.acc else '?'}->[{tgt}]")
    return "; ".join(parts)


def to_dot(g: LivenessGraph, name: str = "liveness", site_name: Callable[[SiteLabel], str] = str) -> str:
    """Graphviz text with deterministic ordering; ``site_name`` renders site labels."""
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    ids: dict = {}
    for v in sorted(g.roots):
        ids[v] = f"v_{len(ids)}"
        style = "" if g.roots[v].acc else ", style=dashed"
        lines.append(f'  {ids[v]} [label="{v}", shape=plaintext{style}];')
    for k in sorted(g.nodes, key=_node_sort):
        ids[k] = f"n_{len(ids)}"
        style = "" if g.nodes[k].acc else ", style=dashed"
        lines.append(f'  {ids[k]} [label="{node_name(k, g.mode, site_name)}", shape=circle{style}];')
    for ref in sorted(g.roots) + sorted(g.nodes, key=_node_sort):
        for m in sorted(g.entry(ref).succ, key=_node_sort):
            lines.append(f'  {ids[ref]} -> {ids[m]} [label="{m[0]}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def check_invariants(g: LivenessGraph) -> list[str]:
    """Mode-specific identity and determinism checks (empty list when fine)."""
    problems = []
    seen_keys: set = set()
    for k in g.nodes:
        if not k[1]:
            problems.append(f"node {k[0]} has no labels")
        if g.mode == NONDET and len(k[1]) != 1:
            problems.append(f"non-deterministic node {node_name(k, g.mode)} has several labels")
        if k in seen_keys:
            problems.append(f"duplicate node {node_name(k, g.mode)}")
        seen_keys.add(k)
    for ref, e in list(g.roots.items()) + list(g.nodes.items()):
        for m in e.succ:
            if m not in g.nodes:
                problems.append(f"dangling edge to {m}")
        if g.mode == DET:
            fields = [m[0] for m in e.succ]
            if len(fields) != len(set(fields)):
                problems.append(f"state {ref} has several successors on one field")
    reached: set = set()
    stack = [m for e in g.roots.values() for m in e.succ]
    while stack:
        m = stack.pop()
        if m in reached or m not in g.nodes:
            continue
        reached.add(m)
        stack.extend(g.nodes[m].succ)
    if reached != set(g.nodes):
        problems.append("unreachable field nodes")
    return problems
