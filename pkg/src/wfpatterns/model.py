"""Process definitions: nodes, edges, structural validation.

A process is a directed graph with one start node, one end node, atomic
tasks, and gateway nodes that do all of the routing. Tokens live on edges,
so most of the engine works with edge indices into ``ProcessDefinition.edges``.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence


class WorkflowError(Exception):
    """Base error; ``code`` is a stable machine-readable identifier."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class Kind(str, Enum):
    START = "start"
    END = "end"
    TASK = "task"
    AND_SPLIT = "and_split"
    AND_JOIN = "and_join"
    XOR_SPLIT = "xor_split"
    XOR_JOIN = "xor_join"
    OR_SPLIT = "or_split"
    OR_JOIN = "or_join"
    MULTI_MERGE = "multi_merge"
    DISCRIMINATOR = "discriminator"
    N_OF_M = "n_of_m"


SPLIT_KINDS = frozenset({Kind.AND_SPLIT, Kind.XOR_SPLIT, Kind.OR_SPLIT})
JOIN_KINDS = frozenset(
    {Kind.AND_JOIN, Kind.XOR_JOIN, Kind.OR_JOIN, Kind.MULTI_MERGE, Kind.DISCRIMINATOR, Kind.N_OF_M}
)
COUNTING_KINDS = frozenset({Kind.DISCRIMINATOR, Kind.N_OF_M})

RESERVED_WORDS = frozenset({"process", "start", "end", "task", "gateway"})
_ID_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class NodeKind:
    """Kind of a node; ``n`` is only meaningful for ``Kind.N_OF_M``."""

    kind: Kind
    n: Optional[int] = None

    @property
    def is_gateway(self) -> bool:
        return self.kind in SPLIT_KINDS or self.kind in JOIN_KINDS

    @property
    def is_split(self) -> bool:
        return self.kind in SPLIT_KINDS

    @property
    def is_join(self) -> bool:
        return self.kind in JOIN_KINDS

    @property
    def threshold(self) -> int:
        """Arrivals needed before a counting join fires (1 for a discriminator)."""
        if self.kind is Kind.N_OF_M:
            return self.n if self.n is not None else 0
        return 1

    def __str__(self) -> str:
        if self.kind is Kind.N_OF_M:
            return f"n_of_m({self.n})"
        return self.kind.value


START = NodeKind(Kind.START)
END = NodeKind(Kind.END)
TASK = NodeKind(Kind.TASK)
AND_SPLIT = NodeKind(Kind.AND_SPLIT)
AND_JOIN = NodeKind(Kind.AND_JOIN)
XOR_SPLIT = NodeKind(Kind.XOR_SPLIT)
XOR_JOIN = NodeKind(Kind.XOR_JOIN)
OR_SPLIT = NodeKind(Kind.OR_SPLIT)
OR_JOIN = NodeKind(Kind.OR_JOIN)
MULTI_MERGE = NodeKind(Kind.MULTI_MERGE)
DISCRIMINATOR = NodeKind(Kind.DISCRIMINATOR)


def n_of_m(n: int) -> NodeKind:
    return NodeKind(Kind.N_OF_M, n)


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    label: Optional[str] = None

    @property
    def branch(self) -> str:
        """Name used in logs and traces: the label, else the target node."""
        return self.label if self.label is not None else self.target

    def __str__(self) -> str:
        return f"{self.source}->{self.target}"


@dataclass(frozen=True)
class Violation:
    code: str
    ref: Optional[str]  # node id, "a->b" edge, or None for process-wide problems
    message: str

    def __str__(self) -> str:
        where = f" {self.ref}" if self.ref else ""
        return f"{self.code}{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes_for(self, ref: str) -> list[str]:
        return [v.code for v in self.violations if v.ref == ref]


class InvalidProcessError(WorkflowError):
    """Raised by ``build_process`` with the full report of violations."""

    def __init__(self, report: ValidationReport):
        super().__init__("INVALID", f"{len(report.violations)} violation(s)")
        self.report = report


@dataclass(frozen=True)
class _Index:
    """Precomputed adjacency, in edge declaration order."""

    incoming: Mapping[str, tuple[int, ...]]
    outgoing: Mapping[str, tuple[int, ...]]
    start_edge: int
    end_edge: int
    counting_joins: tuple[str, ...]  # discriminator / n-of-m, declaration order
    node_order: tuple[str, ...]  # sorted node ids (canonical scheduling order)


@dataclass(frozen=True, eq=True)
class ProcessDefinition:
    """An immutable, validated process graph. Build it with ``build_process``."""

    name: str
    nodes: Mapping[str, NodeKind]
    edges: tuple[Edge, ...] = field(default=())

    def __hash__(self) -> int:
        return hash((self.name, frozenset(self.nodes.items()), self.edges))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProcessDefinition):
            return NotImplemented
        return (
            self.name == other.name
            and dict(self.nodes) == dict(other.nodes)
            and self.edges == other.edges
        )

    @cached_property
    def index(self) -> _Index:
        incoming: dict[str, list[int]] = {n: [] for n in self.nodes}
        outgoing: dict[str, list[int]] = {n: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            outgoing[e.source].append(i)
            incoming[e.target].append(i)
        start = next(n for n, k in self.nodes.items() if k.kind is Kind.START)
        end = next(n for n, k in self.nodes.items() if k.kind is Kind.END)
        return _Index(
            incoming={n: tuple(v) for n, v in incoming.items()},
            outgoing={n: tuple(v) for n, v in outgoing.items()},
            start_edge=outgoing[start][0],
            end_edge=incoming[end][0],
            counting_joins=tuple(n for n, k in self.nodes.items() if k.kind in COUNTING_KINDS),
            node_order=tuple(sorted(self.nodes)),
        )

    @property
    def start(self) -> str:
        return self.edges[self.index.start_edge].source

    @property
    def end(self) -> str:
        return self.edges[self.index.end_edge].target

    def edge_name(self, i: int) -> str:
        return str(self.edges[i])


def _valid_id(node_id: object) -> bool:
    return isinstance(node_id, str) and bool(_ID_RE.match(node_id)) and node_id not in RESERVED_WORDS


def _valid_label(label: Optional[str]) -> bool:
    if label is None:
        return True
    return (
        label != ""
        and label == label.strip()
        and not any(c in label for c in "[]\n\r")
    )


def validate_process(
    name: str, nodes: Sequence[tuple[str, NodeKind]], edges: Sequence[Edge]
) -> ValidationReport:
    """Check every structural invariant and collect all violations."""
    out: list[Violation] = []
    kinds: dict[str, NodeKind] = {}

    if not _valid_id(name):
        out.append(Violation("BAD_ID", None, f"invalid process name {name!r}"))

    for node_id, kind in nodes:
        if not _valid_id(node_id):
            out.append(Violation("BAD_ID", node_id, f"invalid node id {node_id!r}"))
        if node_id in kinds:
            out.append(Violation("DUP_NODE", node_id, f"node {node_id!r} declared more than once"))
            continue
        kinds[node_id] = kind

    starts = [n for n, k in kinds.items() if k.kind is Kind.START]
    ends = [n for n, k in kinds.items() if k.kind is Kind.END]
    if len(starts) != 1:
        ref = starts[1] if len(starts) > 1 else None
        out.append(Violation("START_END", ref, f"expected exactly one start node, found {len(starts)}"))
    if len(ends) != 1:
        ref = ends[1] if len(ends) > 1 else None
        out.append(Violation("START_END", ref, f"expected exactly one end node, found {len(ends)}"))

    indeg = {n: 0 for n in kinds}
    outdeg = {n: 0 for n in kinds}
    succ: dict[str, list[str]] = {n: [] for n in kinds}
    pred: dict[str, list[str]] = {n: [] for n in kinds}
    seen_pairs: set[tuple[str, str]] = set()
    for e in edges:
        ref = str(e)
        if e.source not in kinds or e.target not in kinds:
            missing = [x for x in (e.source, e.target) if x not in kinds]
            out.append(Violation("BAD_EDGE", ref, f"unknown endpoint(s): {', '.join(missing)}"))
            continue
        if e.source == e.target:
            out.append(Violation("BAD_EDGE", ref, "self-loop"))
            continue
        if (e.source, e.target) in seen_pairs:
            out.append(Violation("BAD_EDGE", ref, "duplicate edge"))
            continue
        if not _valid_label(e.label):
            out.append(Violation("BAD_EDGE", ref, f"invalid label {e.label!r}"))
        seen_pairs.add((e.source, e.target))
        outdeg[e.source] += 1
        indeg[e.target] += 1
        succ[e.source].append(e.target)
        pred[e.target].append(e.source)

    for node_id, kind in kinds.items():
        i, o = indeg[node_id], outdeg[node_id]
        k = kind.kind
        if k is Kind.START:
            want, ok = "0 in / 1 out", i == 0 and o == 1
        elif k is Kind.END:
            want, ok = "1 in / 0 out", i == 1 and o == 0
        elif k is Kind.TASK:
            want, ok = "1 in / 1 out", i == 1 and o == 1
        elif kind.is_split:
            want, ok = "1 in / >=2 out", i == 1 and o >= 2
        else:
            want, ok = ">=2 in / 1 out", i >= 2 and o == 1
        if not ok:
            out.append(Violation("ARITY", node_id, f"{kind} needs {want}, has {i} in / {o} out"))
        if k is Kind.N_OF_M:
            n = kind.n
            if not isinstance(n, int) or n < 1 or n > max(i, 1):
                out.append(Violation("BAD_N", node_id, f"n={n} must be in 1..{i} (incoming edges)"))

    if len(starts) == 1 and len(ends) == 1:
        fwd = _closure(starts[0], succ)
        bwd = _closure(ends[0], pred)
        for node_id in kinds:
            if node_id not in fwd or node_id not in bwd:
                out.append(
                    Violation("UNREACHABLE", node_id, "node is not on any path from start to end")
                )

    return ValidationReport(tuple(out))


def _closure(root: str, adj: Mapping[str, Iterable[str]]) -> set[str]:
    seen = {root}
    queue = deque([root])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def build_process(
    name: str, nodes: Sequence[tuple[str, NodeKind]], edges: Sequence[Edge]
) -> ProcessDefinition:
    """Validate and freeze a process.

    Raises ``InvalidProcessError`` carrying a ``ValidationReport`` with every
    violated invariant, not just the first.
    """
    report = validate_process(name, nodes, edges)
    if not report.ok:
        raise InvalidProcessError(report)
    return ProcessDefinition(
        name=name,
        nodes=MappingProxyType(dict(nodes)),
        edges=tuple(edges),
    )


def node_edges(pd: ProcessDefinition, node: str) -> tuple[list[Edge], list[Edge]]:
    """Incoming and outgoing edges of ``node``, in declaration order."""
    if node not in pd.nodes:
        raise WorkflowError("NO_NODE", f"unknown node {node!r}")
    idx = pd.index
    return (
        [pd.edges[i] for i in idx.incoming[node]],
        [pd.edges[i] for i in idx.outgoing[node]],
    )
