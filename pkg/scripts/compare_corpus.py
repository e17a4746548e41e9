"""Tabulate path counts per variant and the A/D reduction for each corpus program."""

import argparse
from pathlib import Path

from heaplive.cli import compare
from heaplive.ir import load_program

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("paths", type=Path, nargs="*", default=[CORPUS])
    ap.add_argument("--first", default="A")
    ap.add_argument("--second", default="D")
    ap.add_argument("-k", type=int, default=5)
    args = ap.parse_args()

    files = []
    for p in args.paths:
        files.extend(sorted(p.glob("*.hl")) if p.is_dir() else [p])
    print(f"{'program':<14} {'function':<10} {args.first:>6} {args.second:>6}  ratio   bucket")
    for f in files:
        rep = compare(load_program(f.read_text()), args.first, args.second, args.k)
        for name, fr in rep["functions"].items():
            counts = fr["paths"]
            ratio = "inf" if fr["ratio"] is None else f"{fr['ratio']:.2f}"
            print(f"{f.stem:<14} {name:<10} {counts[args.first]:>6} {counts[args.second]:>6}  "
                  f"{ratio:>5}   {fr['bucket']}")


if __name__ == "__main__":
    main()
