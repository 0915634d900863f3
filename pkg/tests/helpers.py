from __future__ import annotations

import random
import string
from pathlib import Path

from wfpatterns.dsl import parse
from wfpatterns.engine import EventKind
from wfpatterns.model import (
    AND_JOIN,
    AND_SPLIT,
    DISCRIMINATOR,
    END,
    MULTI_MERGE,
    OR_JOIN,
    OR_SPLIT,
    START,
    TASK,
    XOR_JOIN,
    XOR_SPLIT,
    Edge,
    build_process,
    n_of_m,
)

NETS = Path(__file__).parent / "nets"


def load(name: str):
    return parse((NETS / f"{name}.wfp").read_text())


def or_nets():
    return {p.stem: parse(p.read_text()) for p in sorted((NETS / "or").glob("*.wfp"))}


def and_net(k: int, depth: int = 1):
    """AND-split into k branches of ``depth`` tasks each, then AND-join."""
    nodes = [("s", START), ("e", END), ("G1", AND_SPLIT), ("G2", AND_JOIN)]
    edges = [Edge("s", "G1")]
    for b in range(k):
        prev = "G1"
        for d in range(depth):
            t = f"B{b + 1}" if depth == 1 else f"B{b + 1}_{d + 1}"
            nodes.append((t, TASK))
            edges.append(Edge(prev, t))
            prev = t
        edges.append(Edge(prev, "G2"))
    edges.append(Edge("G2", "e"))
    return build_process(f"And{k}x{depth}", nodes, edges)


def tasks(log):
    return [e.node for e in log if e.kind is EventKind.TASK_COMPLETED]


def count(log, kind: EventKind, node=None):
    return sum(1 for e in log if e.kind is kind and (node is None or e.node == node))


# -- random structurally valid nets -------------------------------------------

_SPLITS = [AND_SPLIT, XOR_SPLIT, OR_SPLIT]
_JOINS = [AND_JOIN, XOR_JOIN, OR_JOIN, MULTI_MERGE, DISCRIMINATOR]
_LABEL_CHARS = string.ascii_letters + string.digits + "_- .:#"


class _Builder:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.nodes = []
        self.edges = []
        self.used = set()

    def name(self) -> str:
        while True:
            head = self.rng.choice(string.ascii_letters + "_")
            tail = "".join(self.rng.choice(string.ascii_letters + string.digits + "_")
                           for _ in range(self.rng.randint(0, 6)))
            n = head + tail
            if n not in self.used and n not in {"process", "start", "end", "task", "gateway"}:
                self.used.add(n)
                return n

    def label(self):
        if self.rng.random() < 0.5:
            return None
        raw = "".join(self.rng.choice(_LABEL_CHARS) for _ in range(self.rng.randint(1, 8)))
        return raw.strip() or "x"

    def edge(self, a, b):
        self.edges.append(Edge(a, b, self.label()))

    def block(self, depth: int) -> tuple[str, str]:
        """Returns (entry, exit) of a single-entry single-exit fragment."""
        r = self.rng.random()
        if depth <= 0 or r < 0.35:
            t = self.name()
            self.nodes.append((t, TASK))
            return t, t
        if r < 0.55:
            a_in, a_out = self.block(depth - 1)
            b_in, b_out = self.block(depth - 1)
            self.edge(a_out, b_in)
            return a_in, b_out
        if r < 0.9:
            k = self.rng.randint(2, 4)
            split, join = self.name(), self.name()
            jkind = self.rng.choice(_JOINS + [None])
            if jkind is None:
                jkind = n_of_m(self.rng.randint(1, k))
            self.nodes.append((split, self.rng.choice(_SPLITS)))
            self.nodes.append((join, jkind))
            for _ in range(k):
                b_in, b_out = self.block(depth - 1)
                self.edge(split, b_in)
                self.edge(b_out, join)
            return split, join
        # loop: merge -> body -> decision -> (back | out)
        merge, decide = self.name(), self.name()
        self.nodes.append((merge, XOR_JOIN))
        self.nodes.append((decide, XOR_SPLIT))
        b_in, b_out = self.block(depth - 1)
        self.edge(merge, b_in)
        self.edge(b_out, decide)
        self.edge(decide, merge)
        return merge, decide


def random_net(rng: random.Random, depth: int = 3):
    b = _Builder(rng)
    s, e = b.name(), b.name()
    b.nodes += [(s, START), (e, END)]
    entry, exit_ = b.block(depth)
    b.edge(s, entry)
    b.edge(exit_, e)
    rng.shuffle(b.nodes)
    return build_process(b.name(), b.nodes, b.edges)
