"""AST data model, the MiniLang front end, and the AST JSON format.

MiniLang grammar::

    program := funcdef+ ;
    funcdef := "fn" IDENT "(" [IDENT ("," IDENT)*] ")" block ;
    block   := "{" stmt* "}" ;
    stmt    := assign ";" | "return" expr ";"
             | "if" "(" expr ")" block ["else" block]
             | "while" "(" expr ")" block | expr ";" ;
    assign  := IDENT "=" expr ;
    expr    := term (("+"|"-") term)* ;
    term    := factor (("*"|"/") factor)* ;
    factor  := NUMBER | IDENT ["(" [expr ("," expr)*] ")"] | "(" expr ")" ;

Comments run from ``#`` to end of line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .errors import LexError, ParseError, SchemaError, StructureError

LABELS = frozenset(
    {
        "FunctionDef",
        "Param",
        "Block",
        "If",
        "While",
        "Return",
        "Assign",
        "BinOp",
        "Call",
        "Name",
        "Num",
    }
)

KEYWORDS = frozenset({"fn", "return", "if", "else", "while"})
PUNCT = frozenset("(){},;=+-*/")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | keyword | punct
    lexeme: str
    line: int
    column: int


@dataclass(frozen=True)
class AstNode:
    node_id: int
    label: str
    value: Optional[str] = None
    parent: Optional[int] = None
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class Ast:
    nodes: tuple[AstNode, ...]

    @property
    def N(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def render(self, node_id: int) -> str:
        """Token text for a node: its value when present, else its label."""
        node = self.nodes[node_id]
        return node.value if node.value is not None else node.label


@dataclass(frozen=True)
class SourceUnit:
    id: str
    code: str
    summary: tuple[str, ...]
    ast: Optional[Ast] = None
    split: str = "train"


@dataclass(frozen=True)
class Diagnostic:
    node_id: Optional[int]
    message: str


# --------------------------------------------------------------------------
# building trees


class _Builder:
    """Collects nested (label, value, children) specs into a preorder Ast."""

    def __init__(self):
        self._labels: list[str] = []
        self._values: list[Optional[str]] = []
        self._parents: list[Optional[int]] = []
        self._children: list[list[int]] = []

    def add(self, spec, parent=None) -> int:
        label, value, kids = spec
        nid = len(self._labels)
        self._labels.append(label)
        self._values.append(value)
        self._parents.append(parent)
        self._children.append([])
        if parent is not None:
            self._children[parent].append(nid)
        for kid in kids:
            self.add(kid, nid)
        return nid

    def build(self) -> Ast:
        return Ast(
            tuple(
                AstNode(i, self._labels[i], self._values[i], self._parents[i], tuple(self._children[i]))
                for i in range(len(self._labels))
            )
        )


def ast_from_nested(spec) -> Ast:
    """Build an Ast from nested ``(label, value, [children...])`` tuples."""
    builder = _Builder()
    builder.add(spec)
    return builder.build()


def ast_to_nested(ast: Ast, node_id: int = 0):
    node = ast[node_id]
    return (node.label, node.value, [ast_to_nested(ast, c) for c in node.children])


# --------------------------------------------------------------------------
# lexer


def tokenize_minilang(source: str) -> list[Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
        elif ch in " \t\r":
            i += 1
            col += 1
        elif ch == "#":
            while i < n and source[i] != "\n":
                i += 1
        elif ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i
            while j < n and source[j].isascii() and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            tokens.append(Token("keyword" if word in KEYWORDS else "ident", word, line, col))
            col += j - i
            i = j
        elif ch.isascii() and ch.isdigit():
            j = i
            while j < n and source[j].isascii() and source[j].isdigit():
                j += 1
            tokens.append(Token("number", source[i:j], line, col))
            col += j - i
            i = j
        elif ch in PUNCT:
            tokens.append(Token("punct", ch, line, col))
            i += 1
            col += 1
        else:
            raise LexError(f"unexpected character {ch!r}", line, col)
    return tokens


# --------------------------------------------------------------------------
# recursive-descent parser; productions return nested specs


class _Parser:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.pos = 0

    def peek(self, offset=0) -> Optional[Token]:
        k = self.pos + offset
        return self.tokens[k] if k < len(self.tokens) else None

    def _where(self):
        tok = self.peek()
        if tok is not None:
            return tok.line, tok.column
        if self.tokens:
            last = self.tokens[-1]
            return last.line, last.column + len(last.lexeme)
        return 1, 1

    def fail(self, expected):
        tok = self.peek()
        found = "end of input" if tok is None else repr(tok.lexeme)
        raise ParseError(f"expected {expected}, found {found}", *self._where())

    def check(self, lexeme, kind=None) -> bool:
        tok = self.peek()
        return tok is not None and tok.lexeme == lexeme and (kind is None or tok.kind == kind)

    def expect(self, lexeme) -> Token:
        tok = self.peek()
        if tok is None or tok.lexeme != lexeme or tok.kind not in ("punct", "keyword"):
            self.fail(repr(lexeme))
        self.pos += 1
        return tok

    def expect_kind(self, kind, what) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            self.fail(what)
        self.pos += 1
        return tok

    def program(self):
        funcs = [self.funcdef()]
        while self.peek() is not None:
            funcs.append(self.funcdef())
        return funcs

    def funcdef(self):
        self.expect("fn")
        name = self.expect_kind("ident", "function name")
        self.expect("(")
        params = []
        if not self.check(")", "punct"):
            params.append(("Param", self.expect_kind("ident", "parameter name").lexeme, []))
            while self.check(",", "punct"):
                self.pos += 1
                params.append(("Param", self.expect_kind("ident", "parameter name").lexeme, []))
        self.expect(")")
        return ("FunctionDef", name.lexeme, params + [self.block()])

    def block(self):
        self.expect("{")
        stmts = []
        while not self.check("}", "punct"):
            if self.peek() is None:
                self.fail("'}'")
            stmts.append(self.stmt())
        self.expect("}")
        return ("Block", None, stmts)

    def stmt(self):
        tok = self.peek()
        if tok.kind == "keyword" and tok.lexeme == "return":
            self.pos += 1
            value = self.expr()
            self.expect(";")
            return ("Return", None, [value])
        if tok.kind == "keyword" and tok.lexeme in ("if", "while"):
            self.pos += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            body = [cond, self.block()]
            if tok.lexeme == "if":
                if self.check("else", "keyword"):
                    self.pos += 1
                    body.append(self.block())
                return ("If", None, body)
            return ("While", None, body)
        nxt = self.peek(1)
        if tok.kind == "ident" and nxt is not None and nxt.kind == "punct" and nxt.lexeme == "=":
            self.pos += 2
            value = self.expr()
            self.expect(";")
            return ("Assign", None, [("Name", tok.lexeme, []), value])
        value = self.expr()
        self.expect(";")
        return value

    def _binary(self, operand, ops):
        left = operand()
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "punct" or tok.lexeme not in ops:
                return left
            self.pos += 1
            left = ("BinOp", tok.lexeme, [left, operand()])

    def expr(self):
        return self._binary(self.term, "+-")

    def term(self):
        return self._binary(self.factor, "*/")

    def factor(self):
        tok = self.peek()
        if tok is None:
            self.fail("expression")
        if tok.kind == "number":
            self.pos += 1
            return ("Num", tok.lexeme, [])
        if tok.kind == "ident":
            self.pos += 1
            if not self.check("(", "punct"):
                return ("Name", tok.lexeme, [])
            self.pos += 1
            args = []
            if not self.check(")", "punct"):
                args.append(self.expr())
                while self.check(",", "punct"):
                    self.pos += 1
                    args.append(self.expr())
            self.expect(")")
            return ("Call", None, [("Name", tok.lexeme, [])] + args)
        if tok.kind == "punct" and tok.lexeme == "(":
            self.pos += 1
            inner = self.expr()
            self.expect(")")
            return inner
        self.fail("expression")


def parse_program(tokens) -> list[Ast]:
    """Parse a whole program into one Ast per function definition."""
    return [ast_from_nested(spec) for spec in _Parser(tokens).program()]


def parse_minilang(tokens) -> Ast:
    """Parse a single-function program.

    A code unit maps to exactly one tree, so a second function definition is
    rejected with a ParseError pointing at it.
    """
    parser = _Parser(tokens)
    spec = parser.funcdef()
    if parser.peek() is not None:
        parser.fail("end of input (one function per code unit)")
    return ast_from_nested(spec)


def parse_source(source: str) -> Ast:
    return parse_minilang(tokenize_minilang(source))


# --------------------------------------------------------------------------
# JSON


def _check_node_fields(obj, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: node must be an object")
    for key in ("label", "children"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    if not isinstance(obj["label"], str) or not obj["label"]:
        raise SchemaError(f"{where}: 'label' must be a nonempty string")
    value = obj.get("value")
    if value is not None and not isinstance(value, str):
        raise SchemaError(f"{where}: 'value' must be a string or null")
    if not isinstance(obj["children"], list):
        raise SchemaError(f"{where}: 'children' must be a list")


def _nested_spec(obj, where="root"):
    _check_node_fields(obj, where)
    kids = [_nested_spec(c, f"{where}.children[{k}]") for k, c in enumerate(obj["children"])]
    return (obj["label"], obj.get("value"), kids)


def _flat_spec(nodes):
    """Resolve the id-keyed form ``{"nodes": [{"id", "label", "value", "children": [ids]}]}``."""
    if not isinstance(nodes, list) or not nodes:
        raise SchemaError("'nodes' must be a nonempty list")
    by_id = {}
    for k, obj in enumerate(nodes):
        _check_node_fields(obj, f"nodes[{k}]")
        nid = obj.get("id")
        if not isinstance(nid, int) or isinstance(nid, bool):
            raise SchemaError(f"nodes[{k}]: 'id' must be an integer")
        if nid in by_id:
            raise StructureError(f"duplicate node id {nid}")
        for c in obj["children"]:
            if not isinstance(c, int) or isinstance(c, bool):
                raise SchemaError(f"nodes[{k}]: children must be node ids")
        by_id[nid] = obj

    listed_by = {}
    for nid, obj in by_id.items():
        for c in obj["children"]:
            if c not in by_id:
                raise StructureError(f"node {nid} lists unknown child {c}")
            if c == nid:
                raise StructureError(f"cycle: node {nid} lists itself as a child")
            if c in listed_by:
                raise StructureError(f"node {c} has more than one parent ({listed_by[c]}, {nid})")
            listed_by[c] = nid
    roots = [nid for nid in by_id if nid not in listed_by]
    if not roots:
        raise StructureError("no root: every node is some node's child (cycle)")
    if len(roots) > 1:
        raise StructureError(f"multiple roots: {sorted(roots)}")

    seen = set()

    def walk(nid, depth_guard):
        if nid in depth_guard:
            raise StructureError(f"cycle through node {nid}")
        seen.add(nid)
        obj = by_id[nid]
        kids = [walk(c, depth_guard | {nid}) for c in obj["children"]]
        return (obj["label"], obj.get("value"), kids)

    spec = walk(roots[0], frozenset())
    orphans = sorted(set(by_id) - seen)
    if orphans:
        raise StructureError(f"nodes unreachable from root: {orphans}")
    return spec


def ast_from_json(document: str) -> Ast:
    """Load an Ast from JSON text.

    Accepts the nested form (a single root object with ``label``, ``value``,
    ``children``) or an id-keyed form ``{"nodes": [...]}`` whose ids need not
    be preorder. Either way the result carries canonical preorder ids.
    """
    try:
        obj = json.loads(document)
    except (json.JSONDecodeError, TypeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return ast_from_obj(obj)


def ast_from_obj(obj) -> Ast:
    if isinstance(obj, dict) and "nodes" in obj and "label" not in obj:
        spec = _flat_spec(obj["nodes"])
    else:
        spec = _nested_spec(obj)
    ast = ast_from_nested(spec)
    diags = validate_ast(ast)
    if diags:
        raise StructureError("; ".join(d.message for d in diags))
    return ast


def ast_to_obj(ast: Ast, node_id: int = 0) -> dict:
    node = ast[node_id]
    return {
        "label": node.label,
        "value": node.value,
        "children": [ast_to_obj(ast, c) for c in node.children],
    }


def ast_to_json(ast: Ast) -> str:
    return json.dumps(ast_to_obj(ast), indent=2, ensure_ascii=False)


# --------------------------------------------------------------------------
# validation


def validate_ast(ast: Ast) -> list[Diagnostic]:
    """Check every structural invariant; one diagnostic per violation."""
    nodes = ast.nodes
    n = len(nodes)
    if n == 0:
        return [Diagnostic(None, "tree has no nodes")]
    diags = []
    for idx, node in enumerate(nodes):
        if node.node_id != idx:
            diags.append(Diagnostic(node.node_id, f"node at index {idx} carries id {node.node_id}"))
        if not node.label:
            diags.append(Diagnostic(idx, "empty label"))
    if diags:
        return diags

    listed_by: dict[int, list[int]] = {}
    for node in nodes:
        for c in node.children:
            if not 0 <= c < n:
                diags.append(Diagnostic(node.node_id, f"child id {c} out of range"))
                continue
            listed_by.setdefault(c, []).append(node.node_id)
    roots = [node.node_id for node in nodes if node.parent is None]
    if roots != [0]:
        diags.append(Diagnostic(roots[0] if roots and roots[0] != 0 else 0,
                                f"expected node 0 as the only root, found roots {roots}"))
    for node in nodes:
        expected = [] if node.parent is None else [node.parent]
        if node.parent is not None and not 0 <= node.parent < n:
            diags.append(Diagnostic(node.node_id, f"parent id {node.parent} out of range"))
        elif sorted(listed_by.get(node.node_id, [])) != expected:
            diags.append(
                Diagnostic(
                    node.node_id,
                    f"node {node.node_id} has parent {node.parent} but is listed as a child of "
                    f"{sorted(listed_by.get(node.node_id, []))}",
                )
            )
    if diags:
        return diags

    order = []
    visited = set()
    stack = [0]
    while stack:
        nid = stack.pop()
        if nid in visited:
            diags.append(Diagnostic(nid, f"cycle through node {nid}"))
            return diags
        visited.add(nid)
        order.append(nid)
        stack.extend(reversed(nodes[nid].children))
    unreachable = sorted(set(range(n)) - visited)
    for nid in unreachable:
        diags.append(Diagnostic(nid, f"node {nid} is unreachable from the root"))
    if diags:
        return diags
    for pos, nid in enumerate(order):
        if nid != pos:
            diags.append(Diagnostic(nid, f"ids not in preorder: node {nid} is visited at position {pos}"))
            break
    return diags
