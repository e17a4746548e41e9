"""Check every variant against bounded executions of random programs.

Prints the first few unsound programs in full and exits 1 if any were found.
"""

import argparse
import random
import sys
import time

from heaplive.ir import format_program
from heaplive.oracle import GenConfig, check_soundness, random_valid_program


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-n", "--count", type=int, default=100)
    ap.add_argument("--max-stmts", type=int, default=GenConfig.max_stmts)
    ap.add_argument("--no-calls", action="store_true")
    ap.add_argument("--no-loops", action="store_true")
    ap.add_argument("--loop-bound", type=int, default=3)
    ap.add_argument("--show", type=int, default=3, help="unsound programs to print")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    cfg = GenConfig(max_stmts=args.max_stmts, loops=not args.no_loops, calls=not args.no_calls)
    start = time.perf_counter()
    bad = traces = 0
    for i in range(args.count):
        p = random_valid_program(rng, cfg)
        report = check_soundness(p, loop_bound=args.loop_bound)
        traces += report.traces
        if report.ok:
            continue
        bad += 1
        if bad <= args.show:
            print(f"--- program {i}")
            print(format_program(p))
            for v in report.violations[:6]:
                print(f"  {v.variant} {v.point} {v.path} steps={v.trace['steps']}")
    print(f"{bad} unsound of {args.count} programs, {traces} traces, "
          f"{time.perf_counter() - start:.1f}s")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
