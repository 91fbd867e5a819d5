"""Tree-to-sequence traversals: pre-order (POT) and structure-based (SBT)."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import mean

from .ast_core import Ast
from .errors import EmptyInput

POT = "POT"
SBT = "SBT"


@dataclass(frozen=True)
class LinearSeq:
    kind: str
    tokens: tuple[str, ...]
    node_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.tokens)

    def to_obj(self) -> dict:
        return {"kind": self.kind, "tokens": list(self.tokens), "node_ids": list(self.node_ids)}


def preorder(ast: Ast) -> LinearSeq:
    # ids are canonical preorder, so POT is id order
    ids = tuple(range(ast.N))
    return LinearSeq(POT, tuple(ast.render(i) for i in ids), ids)


def sbt(ast: Ast) -> LinearSeq:
    """Bracketed traversal: each node emits ``( text <children...> ) text``."""
    tokens: list[str] = []
    node_ids: list[int] = []
    # explicit stack; ("open", v) expands v, ("close", v) emits its tail
    stack = [("open", 0)]
    while stack:
        action, v = stack.pop()
        text = ast.render(v)
        if action == "open":
            tokens += ["(", text]
            node_ids += [v, v]
            stack.append(("close", v))
            stack.extend(("open", c) for c in reversed(ast[v].children))
        else:
            tokens += [")", text]
            node_ids += [v, v]
    return LinearSeq(SBT, tuple(tokens), tuple(node_ids))


def linearize(ast: Ast, kind: str = POT) -> LinearSeq:
    kind = kind.upper()
    if kind == POT:
        return preorder(ast)
    if kind == SBT:
        return sbt(ast)
    raise ValueError(f"unknown traversal {kind!r}")


def sequence_stats(seqs) -> dict:
    """Per-kind min/mean/max lengths and the mean SBT:POT length ratio."""
    seqs = list(seqs)
    if not seqs:
        raise EmptyInput("sequence_stats needs at least one sequence")
    report: dict = {}
    for kind in (POT, SBT):
        lengths = [s.n for s in seqs if s.kind == kind]
        if lengths:
            report[kind] = {
                "count": len(lengths),
                "min": min(lengths),
                "mean": mean(lengths),
                "max": max(lengths),
            }
    if POT in report and SBT in report:
        report["ratio"] = report[SBT]["mean"] / report[POT]["mean"]
    else:
        report["ratio"] = None
    return report
