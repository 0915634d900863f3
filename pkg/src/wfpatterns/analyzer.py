"""Bounded state-space exploration, soundness checks and brute-force oracles."""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Optional, Union

from .engine import (
    DEFAULT_OR_JOIN_BOUND,
    CaseState,
    Choice,
    Counters,
    Marking,
    Status,
    choice_domain,
    enabled_nodes,
    or_join_ready,
    settle,
    step,
)
from .model import Kind, ProcessDefinition, WorkflowError

DEFAULT_MAX_STATES = 100_000
DEFAULT_MAX_TRACES = 10_000


class Snapshot(NamedTuple):
    """Canonical state: marking, (fired, arrived) per counting join, status.

    Join rounds are deliberately left out so loops stay finite-state.
    """

    marking: Marking
    counters: Counters
    status: Status

    @classmethod
    def of(cls, pd: ProcessDefinition, case: CaseState) -> "Snapshot":
        return cls(case.marking, case.counters(pd), case.status)


class Transition(NamedTuple):
    source: int
    node: str
    choice: Choice
    target: int


@dataclass
class StateGraph:
    states: list[Snapshot]
    transitions: list[Transition]
    initial: int = 0
    truncated: bool = False
    deadlocks: list[int] = field(default_factory=list)  # expanded states with nothing enabled

    def successors(self) -> list[list[Transition]]:
        out: list[list[Transition]] = [[] for _ in self.states]
        for t in self.transitions:
            out[t.source].append(t)
        return out


@dataclass(frozen=True)
class SoundnessReport:
    sound: bool
    deadlock_states: list[dict]
    improper_completion_states: list[dict]
    dead_nodes: list[str]
    truncated: bool

    def to_dict(self) -> dict:
        return {
            "sound": self.sound,
            "deadlock_states": self.deadlock_states,
            "improper_completion_states": self.improper_completion_states,
            "dead_nodes": self.dead_nodes,
            "truncated": self.truncated,
        }


def initial_snapshot(pd: ProcessDefinition) -> Snapshot:
    m = [0] * len(pd.edges)
    m[pd.index.start_edge] = 1
    return Snapshot(tuple(m), tuple((False, 0) for _ in pd.index.counting_joins), Status.RUNNING)


def describe_state(pd: ProcessDefinition, s: Snapshot) -> dict:
    return {
        "marking": {pd.edge_name(i): c for i, c in enumerate(s.marking) if c},
        "joins": {
            j: {"fired": f, "arrived": a}
            for j, (f, a) in zip(pd.index.counting_joins, s.counters)
        },
        "status": s.status.value,
    }


def canonical_key(pd: ProcessDefinition, s: Snapshot) -> tuple:
    """Sorted (edge, count) pairs plus sorted join tuples; independent of edge order."""
    return (
        tuple(sorted((pd.edge_name(i), c) for i, c in enumerate(s.marking) if c)),
        tuple(sorted(zip(pd.index.counting_joins, s.counters))),
        s.status.value,
    )


def explore(
    pd: ProcessDefinition,
    max_states: int = DEFAULT_MAX_STATES,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
) -> StateGraph:
    """Breadth-first closure of the token game from the initial state.

    A token in front of the end node is its own state; consuming it is a
    transition labelled with the end node. Stops adding states at
    ``max_states`` and sets ``truncated``.
    """
    domains = {n: choice_domain(pd, n) for n in pd.nodes}
    end_node, end_edge = pd.end, pd.index.end_edge
    init = initial_snapshot(pd)
    graph = StateGraph(states=[init], transitions=[])
    index = {init: 0}
    queue = deque([0])

    while queue:
        si = queue.popleft()
        s = graph.states[si]
        if s.status is not Status.RUNNING:
            continue
        succ: list[tuple[str, Choice, Snapshot]] = []
        if s.marking[end_edge]:
            m2, status = settle(pd, s.marking)
            succ.append((end_node, (), Snapshot(m2, s.counters, status)))
        else:
            ready = lambda j: or_join_ready(pd, s.marking, s.counters, j, or_join_bound)  # noqa: E731
            for node in enabled_nodes(pd, s.marking, ready):
                for ch in domains[node]:
                    m2, c2, _ = step(pd, s.marking, s.counters, node, ch)
                    succ.append((node, ch, Snapshot(m2, c2, Status.RUNNING)))
            if not succ:
                graph.deadlocks.append(si)
        for node, ch, t in succ:
            ti = index.get(t)
            if ti is None:
                if len(graph.states) >= max_states:
                    graph.truncated = True
                    return graph
                ti = len(graph.states)
                graph.states.append(t)
                index[t] = ti
                queue.append(ti)
            graph.transitions.append(Transition(si, node, ch, ti))
    return graph


def check_soundness(
    pd: ProcessDefinition,
    max_states: int = DEFAULT_MAX_STATES,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
    graph: Optional[StateGraph] = None,
) -> SoundnessReport:
    """No deadlocks, no completion with leftover tokens, no node that never fires."""
    if graph is None:
        graph = explore(pd, max_states, or_join_bound)
    deadlocks = [describe_state(pd, graph.states[i]) for i in graph.deadlocks]
    improper = [
        describe_state(pd, s) for s in graph.states if s.status is Status.COMPLETED_IMPROPERLY
    ]
    fired = {t.node for t in graph.transitions}
    dead = [n for n in pd.nodes if n not in fired and pd.nodes[n].kind is not Kind.START]
    sound = not deadlocks and not improper and not dead and not graph.truncated
    return SoundnessReport(sound, deadlocks, improper, dead, graph.truncated)


def trace_step(pd: ProcessDefinition, node: str, choice: Choice) -> str:
    if not choice:
        return node
    return f"{node}[{','.join(pd.edges[i].branch for i in choice)}]"


def enumerate_traces(
    pd: ProcessDefinition,
    max_traces: int = DEFAULT_MAX_TRACES,
    max_states: int = DEFAULT_MAX_STATES,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
    max_visits: int = 1,
    graph: Optional[StateGraph] = None,
) -> set[tuple[str, ...]]:
    """Distinct firing sequences along maximal paths of the state graph.

    Each trace lists fired nodes (tasks and gateways; split choices in
    brackets), without the final end-node consumption. A path may pass
    through any state at most ``max_visits`` times, which bounds loops.
    """
    if graph is None:
        graph = explore(pd, max_states, or_join_bound)
    succ = graph.successors()
    end_node = pd.end
    deadlocks = set(graph.deadlocks)

    def terminal(i: int) -> bool:
        return graph.states[i].status is not Status.RUNNING or i in deadlocks

    traces: set[tuple[str, ...]] = set()
    visits = Counter({graph.initial: 1})
    path: list[Optional[str]] = []
    stack = [(graph.initial, iter(succ[graph.initial]))]
    if terminal(graph.initial):
        return {()}
    while stack:
        state, it = stack[-1]
        t = next(it, None)
        if t is None:
            stack.pop()
            visits[state] -= 1
            if path:
                path.pop()
            continue
        if visits[t.target] >= max_visits:
            continue
        path.append(None if t.node == end_node else trace_step(pd, t.node, t.choice))
        if terminal(t.target):
            traces.add(tuple(p for p in path if p is not None))
            path.pop()
            if len(traces) >= max_traces:
                break
            continue
        visits[t.target] += 1
        stack.append((t.target, iter(succ[t.target])))
    return traces


# -- OR-join oracle -----------------------------------------------------------
#
# Deliberately shares no code with the engine's lookahead: dict markings,
# its own firing rules, depth-first full closure, check afterwards.


def _oracle_moves(pd: ProcessDefinition, marking: dict, counters: dict, skip: str):
    for node, kind in pd.nodes.items():
        k = kind.kind
        if node == skip or k in (Kind.START, Kind.END):
            continue
        ins = [i for i, e in enumerate(pd.edges) if e.target == node]
        outs = [i for i, e in enumerate(pd.edges) if e.source == node]
        marked = [i for i in ins if marking.get(i, 0) > 0]
        if not marked or (k is Kind.AND_JOIN and len(marked) < len(ins)):
            continue
        if k is Kind.XOR_SPLIT:
            productions = [[o] for o in outs]
        elif k is Kind.OR_SPLIT:
            productions = [list(c) for r in range(1, len(outs) + 1) for c in combinations(outs, r)]
        else:
            productions = [outs]
        if k in (Kind.AND_JOIN, Kind.OR_JOIN):
            consumed = marked
        else:
            consumed = marked[:1]
        for produce in productions:
            m = dict(marking)
            for i in consumed:
                m[i] -= 1
            c = counters
            if k in (Kind.DISCRIMINATOR, Kind.N_OF_M):
                fired, arrived = counters[node]
                arrived += 1
                emit = not fired and arrived == kind.threshold
                fired = fired or emit
                if arrived == len(ins):
                    fired, arrived = False, 0
                c = {**counters, node: (fired, arrived)}
                if not emit:
                    produce = []
            for o in produce:
                m[o] = m.get(o, 0) + 1
            yield {i: v for i, v in m.items() if v}, c


def oracle_or_join(
    pd: ProcessDefinition,
    state: Union[CaseState, Snapshot],
    join: str,
    max_states: int = DEFAULT_MAX_STATES,
) -> bool:
    """Ground truth for OR-join enablement by exhaustive exploration."""
    if pd.nodes.get(join) is None or pd.nodes[join].kind is not Kind.OR_JOIN:
        raise WorkflowError("NOT_ORJOIN", f"{join!r} is not an OR-join")
    if isinstance(state, CaseState):
        state = Snapshot.of(pd, state)
    ins = [i for i, e in enumerate(pd.edges) if e.target == join]
    if not any(state.marking[i] for i in ins):
        return False
    empty_inputs = {i for i in ins if state.marking[i] == 0}
    end_edge = next(i for i, e in enumerate(pd.edges) if pd.nodes[e.target].kind is Kind.END)

    start = {i: v for i, v in enumerate(state.marking) if v}
    counters = dict(zip(pd.index.counting_joins, state.counters))
    freeze = lambda m, c: (tuple(sorted(m.items())), tuple(sorted(c.items())))  # noqa: E731
    seen = {freeze(start, counters)}
    reached = [start]
    stack = [(start, counters)]
    while stack:
        m, c = stack.pop()
        if m.get(end_edge):
            continue  # the end node consumes this token and the case stops
        for m2, c2 in _oracle_moves(pd, m, c, join):
            key = freeze(m2, c2)
            if key in seen:
                continue
            if len(seen) >= max_states:
                raise WorkflowError("ORACLE_CAP", f"more than {max_states} states")
            seen.add(key)
            reached.append(m2)
            stack.append((m2, c2))
    return not any(m.get(i) for m in reached for i in empty_inputs)


@dataclass(frozen=True)
class Agreement:
    checked: int
    mismatches: tuple[tuple[int, str], ...]  # (state index, join)

    @property
    def rate(self) -> float:
        return 1.0 if not self.checked else 1 - len(self.mismatches) / self.checked


def or_join_agreement(
    pd: ProcessDefinition,
    max_states: int = DEFAULT_MAX_STATES,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
    graph: Optional[StateGraph] = None,
) -> Agreement:
    """Compare the engine's OR-join evaluation with the oracle on every running state."""
    if graph is None:
        graph = explore(pd, max_states, or_join_bound)
    joins = [n for n, k in pd.nodes.items() if k.kind is Kind.OR_JOIN]
    checked, bad = 0, []
    for si, s in enumerate(graph.states):
        if s.status is not Status.RUNNING:
            continue
        for j in joins:
            checked += 1
            engine_says = or_join_ready(pd, s.marking, s.counters, j, or_join_bound)
            if engine_says != oracle_or_join(pd, s, j, max_states):
                bad.append((si, j))
    return Agreement(checked, tuple(bad))


# -- exports -------------------------------------------------------------------


def graph_to_json(pd: ProcessDefinition, graph: StateGraph) -> str:
    doc = {
        "process": pd.name,
        "initial": graph.initial,
        "truncated": graph.truncated,
        "states": [dict(id=i, **describe_state(pd, s)) for i, s in enumerate(graph.states)],
        "transitions": [
            {
                "from": t.source,
                "to": t.target,
                "node": t.node,
                "choice": [pd.edges[i].branch for i in t.choice],
            }
            for t in graph.transitions
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def graph_to_dot(pd: ProcessDefinition, graph: StateGraph) -> str:
    out = [f'digraph "{pd.name}_states" {{']
    for i, s in enumerate(graph.states):
        tokens = ", ".join(
            f"{pd.edge_name(e)}" + (f"x{c}" if c > 1 else "")
            for e, c in enumerate(s.marking)
            if c
        )
        label = tokens or "(empty)"
        if s.status is not Status.RUNNING:
            label += f"\\n{s.status.value}"
        shape = "doublecircle" if i == graph.initial else "ellipse"
        if s.status is not Status.RUNNING or i in graph.deadlocks:
            shape = "box"
        out.append(f'  s{i} [shape={shape}, label="{label}"];')
    for t in graph.transitions:
        out.append(f'  s{t.source} -> s{t.target} [label="{trace_step(pd, t.node, t.choice)}"];')
    out.append("}")
    return "\n".join(out) + "\n"
