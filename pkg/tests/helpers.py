from pathlib import Path

from heaplive import apgraph as apg
from heaplive.ir import load_program

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
FIGURES = ["fig2", "fig3", "fig4", "fig7"]
STRUCTURES = ["list_copy", "directory"]


def load(name: str):
    return load_program((CORPUS / f"{name}.hl").read_text())


def paths(g, k: int = 5) -> set[str]:
    return {str(r) for r in apg.extract_paths(g, k)}


def reachable_points(p):
    for proc in p.procedures.values():
        for sid in sorted(proc.cfg.nodes):
            yield ("in", sid)
            yield ("out", sid)
