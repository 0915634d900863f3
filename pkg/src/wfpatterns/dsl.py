"""Text format for process definitions (``.wfp``) and DOT export.

Grammar::

    file    := "process" IDENT "{" decl* "}"
    decl    := "start" IDENT ";" | "end" IDENT ";" | "task" IDENT ";"
             | "gateway" KIND IDENT ";"
             | IDENT "->" IDENT ( "[" LABEL "]" )? ";"
    KIND    := and_split | and_join | xor_split | xor_join | or_split
             | or_join | multi_merge | discriminator | n_of_m "(" INT ")"

``#`` starts a comment running to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .model import (
    Edge,
    InvalidProcessError,
    Kind,
    NodeKind,
    ProcessDefinition,
    WorkflowError,
    build_process,
)

_SIMPLE_KINDS = {
    k.value: NodeKind(k)
    for k in Kind
    if k not in (Kind.START, Kind.END, Kind.TASK, Kind.N_OF_M)
}
_DECL_KEYWORDS = {"start": Kind.START, "end": Kind.END, "task": Kind.TASK}


@dataclass(frozen=True, order=True)
class SourceSpan:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    expected: str
    found: str

    def __str__(self) -> str:
        return f"{self.span}: expected {self.expected}, found {self.found}"


class DSLSyntaxError(WorkflowError):
    def __init__(self, errors: list[ParseError]):
        super().__init__("PARSE", "; ".join(str(e) for e in errors))
        self.errors = errors


class DSLValidationError(InvalidProcessError):
    """Syntactically valid text describing an invalid process.

    ``spans`` maps node ids and ``"a->b"`` edge refs to where they were declared.
    """

    def __init__(self, report, spans: dict[str, SourceSpan]):
        super().__init__(report)
        self.spans = spans


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident, int, sym, label, eof
    text: str
    span: SourceSpan
    offset: int

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        if self.kind == "label":
            return f"'[{self.text}]'"
        return f"'{self.text}'"


def _lex(text: str) -> Iterator[_Tok]:
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                advance(1)
            continue
        span, start = SourceSpan(line, col), i
        if c.isascii() and (c.isalpha() or c == "_"):
            j = i + 1
            while j < n and text[j].isascii() and (text[j].isalnum() or text[j] == "_"):
                j += 1
            yield _Tok("ident", text[i:j], span, start)
            advance(j - i)
        elif c.isascii() and c.isdigit():
            j = i + 1
            while j < n and text[j].isascii() and text[j].isdigit():
                j += 1
            yield _Tok("int", text[i:j], span, start)
            advance(j - i)
        elif text.startswith("->", i):
            yield _Tok("sym", "->", span, start)
            advance(2)
        elif c == "[":
            j = i + 1
            while j < n and text[j] not in "]\n":
                j += 1
            if j < n and text[j] == "]":
                yield _Tok("label", text[i + 1 : j].strip(), span, start)
                advance(j + 1 - i)
            else:
                yield _Tok("sym", "[", span, start)  # unterminated; parser reports it
                advance(1)
        elif c in "{};()":
            yield _Tok("sym", c, span, start)
            advance(1)
        else:
            yield _Tok("bad", c, span, start)
            advance(1)
    yield _Tok("eof", "", SourceSpan(line, col), n)


class _Abort(Exception):
    pass


class _Parser:
    def __init__(self, text: str):
        self.toks = list(_lex(text))
        self.pos = 0
        self.errors: list[ParseError] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def take(self) -> _Tok:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, expected: str) -> None:
        self.errors.append(ParseError(self.tok.span, expected, self.tok.describe()))
        raise _Abort

    def expect_sym(self, sym: str) -> _Tok:
        if self.tok.kind == "sym" and self.tok.text == sym:
            return self.take()
        self.fail(f"'{sym}'")

    def expect_ident(self, what: str = "identifier") -> _Tok:
        if self.tok.kind == "ident":
            return self.take()
        self.fail(what)

    def recover(self) -> None:
        while self.tok.kind != "eof":
            if self.tok.kind == "sym" and self.tok.text == "}":
                return
            t = self.take()
            if t.kind == "sym" and t.text == ";":
                return

    def parse(self):
        nodes: list[tuple[str, NodeKind]] = []
        edges: list[Edge] = []
        spans: dict[str, SourceSpan] = {}
        name = ""
        try:
            if not (self.tok.kind == "ident" and self.tok.text == "process"):
                self.fail("'process'")
            self.take()
            name = self.expect_ident("process name").text
            self.expect_sym("{")
        except _Abort:
            return name, nodes, edges, spans

        while True:
            t = self.tok
            if t.kind == "sym" and t.text == "}":
                self.take()
                break
            if t.kind == "eof":
                self.errors.append(ParseError(t.span, "'}'", t.describe()))
                break
            try:
                self.declaration(nodes, edges, spans)
            except _Abort:
                self.recover()

        if self.tok.kind != "eof":
            self.errors.append(ParseError(self.tok.span, "end of input", self.tok.describe()))
        return name, nodes, edges, spans

    def declaration(self, nodes, edges, spans) -> None:
        t = self.tok
        if t.kind != "ident":
            self.fail("declaration")
        if t.text in _DECL_KEYWORDS:
            self.take()
            ident = self.expect_ident("node name")
            self.expect_sym(";")
            nodes.append((ident.text, NodeKind(_DECL_KEYWORDS[t.text])))
            spans.setdefault(ident.text, t.span)
        elif t.text == "gateway":
            self.take()
            kind = self.gateway_kind()
            ident = self.expect_ident("node name")
            self.expect_sym(";")
            nodes.append((ident.text, kind))
            spans.setdefault(ident.text, t.span)
        elif t.text == "process":
            self.fail("declaration")
        else:
            src = self.take()
            self.expect_sym("->")
            dst = self.expect_ident("node name")
            label = None
            if self.tok.kind == "label":
                label = self.take().text
            self.expect_sym(";")
            edge = Edge(src.text, dst.text, label)
            edges.append(edge)
            spans.setdefault(str(edge), src.span)

    def gateway_kind(self) -> NodeKind:
        t = self.tok
        if t.kind == "ident" and t.text in _SIMPLE_KINDS:
            self.take()
            return _SIMPLE_KINDS[t.text]
        if t.kind == "ident" and t.text == "n_of_m":
            self.take()
            self.expect_sym("(")
            if self.tok.kind != "int":
                self.fail("integer")
            n = int(self.take().text)
            self.expect_sym(")")
            return NodeKind(Kind.N_OF_M, n)
        self.fail("gateway kind")


def parse(text: str) -> ProcessDefinition:
    """Parse ``.wfp`` text.

    Raises ``DSLSyntaxError`` (all syntax errors found, with spans) or
    ``DSLValidationError`` when the text parses but the process is invalid.
    """
    p = _Parser(text)
    name, nodes, edges, spans = p.parse()
    if p.errors:
        raise DSLSyntaxError(p.errors)
    try:
        return build_process(name, nodes, edges)
    except InvalidProcessError as exc:
        raise DSLValidationError(exc.report, spans) from None


def serialize(pd: ProcessDefinition) -> str:
    lines = [f"process {pd.name} {{"]
    for node_id, kind in pd.nodes.items():
        if kind.is_gateway:
            lines.append(f"  gateway {kind} {node_id};")
        else:
            lines.append(f"  {kind.kind.value} {node_id};")
    for e in pd.edges:
        label = f" [{e.label}]" if e.label is not None else ""
        lines.append(f"  {e.source} -> {e.target}{label};")
    lines.append("}")
    return "\n".join(lines) + "\n"


_GATEWAY_LABELS = {
    Kind.AND_SPLIT: "AND-split",
    Kind.AND_JOIN: "AND-join",
    Kind.XOR_SPLIT: "XOR-split",
    Kind.XOR_JOIN: "XOR-join",
    Kind.OR_SPLIT: "OR-split",
    Kind.OR_JOIN: "OR-join",
    Kind.MULTI_MERGE: "MULTI-MERGE",
    Kind.DISCRIMINATOR: "DISC",
}


def gateway_label(pd: ProcessDefinition, node: str) -> Optional[str]:
    kind = pd.nodes[node]
    if kind.kind is Kind.N_OF_M:
        return f"{kind.n}-of-{len(pd.index.incoming[node])}"
    return _GATEWAY_LABELS.get(kind.kind)


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(pd: ProcessDefinition) -> str:
    out = [f"digraph {_q(pd.name)} {{", "  rankdir=LR;"]
    for node_id, kind in pd.nodes.items():
        if kind.kind is Kind.TASK:
            attrs = f"shape=box, label={_q(node_id)}"
        elif kind.kind is Kind.START:
            attrs = f"shape=circle, label={_q(node_id)}"
        elif kind.kind is Kind.END:
            attrs = f"shape=circle, peripheries=2, label={_q(node_id)}"
        else:
            attrs = f'shape=diamond, label="{gateway_label(pd, node_id)}\\n{node_id}"'
        out.append(f"  {_q(node_id)} [{attrs}];")
    for e in pd.edges:
        label = f" [label={_q(e.label)}]" if e.label is not None else ""
        out.append(f"  {_q(e.source)} -> {_q(e.target)}{label};")
    out.append("}")
    return "\n".join(out) + "\n"
