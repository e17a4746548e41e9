"""Command line front end: ``analyze``, ``compare`` and ``check``.

Reports are JSON documents (``"schema": 1``) with stable key and list
ordering, so two runs on the same input produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import apgraph as apg
from .alias import AliasOracle, compute_points_to, point_name
from .apgraph import AccessPath, SiteLabel
from .interproc import ProgramResult, analyze_program, bypass_report
from .ir import ADDR, IRError, Program, load_program
from .liveness import VARIANTS
from .oracle import DEFAULT_K, check_soundness

SCHEMA = 1
BUCKET_WIDTH = 5
BUCKET_CAP = 35


@dataclass
class AnalyzeOptions:
    variants: list[str]
    k: int = DEFAULT_K
    partitioning: bool = True
    dump_pts: bool = False
    dump_bypass: bool = False
    suppress_may: bool = False


@dataclass
class ProcStats:
    allocated: int
    live_percent: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        vals = self.live_percent
        return {
            "allocated_paths": self.allocated,
            "live_percent": {
                "median": round(statistics.median(vals), 2) if vals else None,
                "min": round(min(vals), 2) if vals else None,
            },
        }


# ---------------------------------------------------------------- metrics


def allocated_paths(oracle: AliasOracle, point, k: int) -> set[AccessPath]:
    """Paths of length ≤ k, with at least one field, that may reach an allocated cell.

    A path counts when every link along it may hold an object (or is an
    address); these are the heap cells a collector would have to keep.
    """
    st = oracle.state(point)
    fields = list(oracle.program.fields()) + [ADDR]
    out: set[AccessPath] = set()
    layer = [(AccessPath(v), {("v", v)}) for v in sorted(oracle.scope(point))]
    while layer:
        nxt = []
        for path, links in layer:
            if path.fields:
                out.add(path)
            if len(path) >= k:
                continue
            for f in fields:
                if not any(st.targets(lk) for lk in links):
                    continue
                nl = st.step(links, f)
                if nl:
                    nxt.append((path.extend(f), nl))
        layer = nxt
    return out


def ratio_bucket(ratio: float) -> str:
    """Bucket of a reduction ratio: ``<1x``, ``1-5x``, ``5-10x``, ..., ``35x+``."""
    if ratio < 1:
        return "<1x"
    if math.isinf(ratio) or ratio >= BUCKET_CAP:
        return f"{BUCKET_CAP}x+"
    lo = int(ratio // BUCKET_WIDTH) * BUCKET_WIDTH
    return f"{max(lo, 1)}-{lo + BUCKET_WIDTH}x"


def bucket_names() -> list[str]:
    names = ["<1x"]
    names += [f"{max(lo, 1)}-{lo + BUCKET_WIDTH}x" for lo in range(0, BUCKET_CAP, BUCKET_WIDTH)]
    return names + [f"{BUCKET_CAP}x+"]


def site_namer(p: Program):
    """Render use sites by their source label when the statement has one."""
    names = {}
    for _, s in p.all_stmts():
        if s.labels:
            names[s.id] = s.labels[0]

    def name(lb: SiteLabel) -> str:
        if lb.kind == "use" and lb.site in names:
            return names[lb.site]
        return str(lb)

    return name


def reachable_points(p: Program, proc: str) -> list[tuple]:
    cfg = p.procedures[proc].cfg
    return [(side, sid) for sid in sorted(cfg.nodes) for side in ("in", "out")]


# ---------------------------------------------------------------- reports


def variant_report(p: Program, oracle: AliasOracle, res: ProgramResult, opts: AnalyzeOptions,
                   dot_dir: Path | None) -> dict:
    k = opts.k
    namer = site_namer(p)
    procs: dict = {}
    for name in sorted(p.procedures):
        contexts = res.contexts_of(name)
        if not contexts:
            continue
        pts = reachable_points(p, name)
        alloc = {pt: allocated_paths(oracle, pt, k) for pt in pts}
        # cells that may be allocated anywhere in the procedure
        stats = ProcStats(len(set().union(*alloc.values())))
        ctx_out = []
        for ctx in contexts:
            points = {}
            for pt in pts:
                g = res.context_graph(ctx, pt)
                paths = apg.extract_paths(g, k)
                heap = {r for r in paths if r.fields}
                if alloc[pt]:
                    stats.live_percent.append(100.0 * len(heap & alloc[pt]) / len(alloc[pt]))
                points[point_name(pt)] = {"paths": sorted(map(str, paths)), "count": len(paths)}
                if dot_dir is not None:
                    fname = dot_dir / f"{name}.{ctx.cid}.{point_name(pt)}.dot"
                    fname.write_text(apg.to_dot(g, f"{name}.{ctx.cid}.{point_name(pt)}", namer))
            ctx_out.append({"context": ctx.cid, "iterations": ctx.state.iterations, "points": points})
        procs[name] = {**stats.summary(), "contexts": ctx_out}
    out = {"procedures": procs}
    if opts.dump_bypass:
        out["bypass"] = bypass_report(res, k)
    return out


def analyze(p: Program, opts: AnalyzeOptions, dot_dir: Path | None = None) -> dict:
    oracle = compute_points_to(p, suppress_may=opts.suppress_may)
    report: dict = {"schema": SCHEMA, "k": opts.k, "partitioning": opts.partitioning, "variants": {}}
    for v in opts.variants:
        res = analyze_program(p, oracle, v, opts.partitioning)
        report["variants"][v] = variant_report(p, oracle, res, opts, dot_dir)
    if opts.dump_pts:
        report["points_to"] = oracle.dump()
        report["summarized_sites"] = sorted(oracle.summarized)
    return report


def compare(p: Program, first: str, second: str, k: int = DEFAULT_K, partitioning: bool = True,
            suppress_may: bool = False) -> dict:
    """Per-function reduction ratio of ``first`` over ``second`` and per-point diffs."""
    oracle = compute_points_to(p, suppress_may=suppress_may)
    ra = analyze_program(p, oracle, first, partitioning)
    rb = analyze_program(p, oracle, second, partitioning)
    buckets = {b: [] for b in bucket_names()}
    functions = {}
    for name in sorted(p.procedures):
        if not ra.contexts_of(name):
            continue
        total_a = total_b = 0
        points = {}
        for pt in reachable_points(p, name):
            pa = apg.extract_paths(ra.graph(pt), k)
            pb = apg.extract_paths(rb.graph(pt), k)
            total_a += len(pa)
            total_b += len(pb)
            points[point_name(pt)] = {
                first: len(pa), second: len(pb),
                "subset": pb <= pa,
                f"only_{first}": sorted(map(str, pa - pb)),
                f"only_{second}": sorted(map(str, pb - pa)),
            }
        if total_b:
            ratio = total_a / total_b
        else:
            ratio = 1.0 if not total_a else math.inf
        bucket = ratio_bucket(ratio)
        buckets[bucket].append(name)
        functions[name] = {
            "paths": {first: total_a, second: total_b},
            "ratio": None if math.isinf(ratio) else round(ratio, 4),
            "bucket": bucket,
            "points": points,
        }
    return {"schema": SCHEMA, "k": k, "variants": [first, second], "functions": functions,
            "buckets": {b: names for b, names in buckets.items() if names}}


# ---------------------------------------------------------------- arguments


def _variants(values: list[str] | None, default: list[str], unique: bool = True) -> list[str]:
    if not values:
        return default
    out: list[str] = []
    for raw in values:
        for v in raw.split(","):
            v = v.strip()
            if v == "all":
                out.extend(VARIANTS)
            elif v in VARIANTS:
                out.append(v)
            else:
                raise argparse.ArgumentTypeError(
                    f"unknown variant {v!r} (choose from {', '.join(VARIANTS)} or all)")
    return list(dict.fromkeys(out)) if unique else out


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heaplive", description="Heap liveness over access-path graphs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--variant", action="append", metavar="{A,B,C,D,all}",
                        help="variant(s) to run; repeat or comma-separate")
        sp.add_argument("--max-len", type=_positive, default=DEFAULT_K, metavar="K",
                        help="longest access path reported (default %(default)s)")
        sp.add_argument("--out", type=Path, metavar="DIR", help="directory for reports and graphs")
        sp.add_argument("--json", action="store_true", help="print the JSON report on stdout")
        sp.add_argument("--no-partition", action="store_true",
                        help="pass every live path into callees (no bypassing or memoization)")

    a = sub.add_parser("analyze", help="run liveness and report live paths per point")
    a.add_argument("program", type=Path)
    common(a)
    a.add_argument("--dump-dot", action="store_true", help="write one DOT file per context and point")
    a.add_argument("--dump-pts", action="store_true", help="include points-to facts in the report")
    a.add_argument("--dump-bypass", action="store_true", help="include call-site partitions in the report")
    a.add_argument("--no-may-alias", action="store_true",
                   help="assume no two distinct paths share a link (unsound on aliased heaps)")

    c = sub.add_parser("compare", help="compare the amount of liveness of two variants")
    c.add_argument("program", type=Path)
    common(c)
    c.add_argument("--no-may-alias", action="store_true",
                   help="assume no two distinct paths share a link (unsound on aliased heaps)")

    k = sub.add_parser("check", help="check soundness against bounded concrete executions")
    k.add_argument("paths", type=Path, nargs="+", help="program files or directories of .hl files")
    common(k)
    k.add_argument("--loop-bound", type=_positive, default=3, metavar="N")
    k.add_argument("--max-traces", type=_positive, default=10_000, metavar="M")
    k.add_argument("--seed-fault", action="store_true",
                   help="blank the results of main first; the check must then fail")
    return ap


def _load(path: Path) -> Program:
    return load_program(path.read_text())


def _emit(report: dict, args, name: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(text)
    if args.json:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    p = _load(args.program)
    opts = AnalyzeOptions(_variants(args.variant, ["D"]), args.max_len, not args.no_partition,
                          args.dump_pts, args.dump_bypass, args.no_may_alias)
    dot_dir = None
    if args.dump_dot:
        dot_dir = args.out if args.out is not None else Path(".")
        dot_dir.mkdir(parents=True, exist_ok=True)
    report = analyze(p, opts, dot_dir)
    report["program"] = args.program.name
    _emit(report, args, f"{args.program.stem}.report.json")
    if not args.json:
        for v, vr in report["variants"].items():
            for proc, pr in vr["procedures"].items():
                lp = pr["live_percent"]
                print(f"{v} {proc}: contexts={len(pr['contexts'])} allocated={pr['allocated_paths']} "
                      f"live%median={lp['median']} live%min={lp['min']}")
    return 0


def cmd_compare(args) -> int:
    vs = _variants(args.variant, ["A", "D"], unique=False)
    if len(vs) != 2:
        raise argparse.ArgumentTypeError("compare needs exactly two variants")
    p = _load(args.program)
    report = compare(p, vs[0], vs[1], args.max_len, not args.no_partition, args.no_may_alias)
    report["program"] = args.program.name
    _emit(report, args, f"{args.program.stem}.compare.json")
    if not args.json:
        for name, fr in report["functions"].items():
            print(f"{name}: {vs[0]}={fr['paths'][vs[0]]} {vs[1]}={fr['paths'][vs[1]]} "
                  f"ratio={fr['ratio']} bucket={fr['bucket']}")
    return 0


def _program_files(paths: list[Path]) -> list[Path]:
    out = []
    for p in paths:
        out.extend(sorted(p.glob("*.hl")) if p.is_dir() else [p])
    return out


def cmd_check(args) -> int:
    vs = _variants(args.variant, list(VARIANTS))
    failed = False
    summary = {"schema": SCHEMA, "programs": {}}
    for path in _program_files(args.paths):
        p = _load(path)
        rep = check_soundness(p, vs, args.loop_bound, args.max_traces, args.max_len,
                              seed_fault=args.seed_fault, partitioning=not args.no_partition)
        entry = {"traces": rep.traces, "points": rep.checked_points, "violations": len(rep.violations)}
        if rep.violations:
            failed = True
            out = args.out if args.out is not None else Path(".")
            out.mkdir(parents=True, exist_ok=True)
            witness = out / f"{path.stem}.witness.json"
            witness.write_text(json.dumps([json.loads(v.to_json()) for v in rep.violations],
                                          indent=2, sort_keys=True) + "\n")
            entry["witness"] = str(witness)
            if not args.json:
                print(f"{path.name}: UNSOUND, {len(rep.violations)} violation(s); witness {witness}")
        elif not args.json:
            print(f"{path.name}: ok ({rep.traces} traces, {rep.checked_points} points)")
        summary["programs"][path.name] = entry
    if args.json:
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 1 if failed else 0


COMMANDS = {"analyze": cmd_analyze, "compare": cmd_compare, "check": cmd_check}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except (IRError, OSError) as e:
        print(f"heaplive: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
