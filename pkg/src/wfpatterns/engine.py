"""Token-game execution of process definitions.

Tokens sit on edges; a marking is a tuple of per-edge counts indexed like
``ProcessDefinition.edges``. Discriminator and n-of-m joins carry a small
counter (``JoinState``) alongside the marking.

The private helpers ``enabled_nodes``, ``step`` and ``settle`` work on raw
tuples and are shared with the analyzer; the public functions wrap them
with case bookkeeping and event emission.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .model import Kind, ProcessDefinition, WorkflowError

DEFAULT_OR_JOIN_BOUND = 10_000
DEFAULT_STEP_LIMIT = 10_000

Marking = tuple[int, ...]
Choice = tuple[int, ...]  # global edge indices chosen by a split; () for everything else
DEFAULT: Choice = ()

# Per counting join, (fired, arrived); aligned with ``pd.index.counting_joins``.
Counters = tuple[tuple[bool, int], ...]


class Status(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    COMPLETED_IMPROPERLY = "completed_improperly"
    DEADLOCKED = "deadlocked"


class EventKind(str, Enum):
    CASE_STARTED = "case_started"
    TASK_COMPLETED = "task_completed"
    GATEWAY_FIRED = "gateway_fired"
    TOKEN_ABSORBED = "token_absorbed"
    CASE_COMPLETED = "case_completed"
    CASE_COMPLETED_IMPROPERLY = "case_completed_improperly"
    CASE_DEADLOCKED = "case_deadlocked"


@dataclass(frozen=True)
class JoinState:
    fired: bool = False
    arrived: int = 0
    round: int = 0


@dataclass(frozen=True)
class CaseState:
    case_id: str
    marking: Marking
    join_states: Mapping[str, JoinState]
    seq: int = 0
    status: Status = Status.RUNNING

    def tokens(self, pd: ProcessDefinition) -> dict[str, int]:
        """Non-zero edge counts keyed by ``"a->b"``."""
        return {pd.edge_name(i): c for i, c in enumerate(self.marking) if c}

    def counters(self, pd: ProcessDefinition) -> Counters:
        return tuple(
            (self.join_states[j].fired, self.join_states[j].arrived)
            for j in pd.index.counting_joins
        )


@dataclass(frozen=True)
class Enabled:
    node: str
    choice_domain: tuple[Choice, ...]


@dataclass(frozen=True)
class Event:
    case_id: str
    seq: int
    kind: EventKind
    node: Optional[str] = None
    detail: Optional[str] = None

    def to_json(self) -> str:
        obj: dict[str, object] = {"case": self.case_id, "seq": self.seq, "kind": self.kind.value}
        if self.node is not None:
            obj["node"] = self.node
        if self.detail:
            obj["detail"] = self.detail
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Event":
        obj = json.loads(line)
        return cls(obj["case"], obj["seq"], EventKind(obj["kind"]), obj.get("node"), obj.get("detail"))


EventLog = list[Event]


def to_jsonl(events: Iterable[Event]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def from_jsonl(text: str) -> EventLog:
    return [Event.from_json(line) for line in text.splitlines() if line.strip()]


class OrJoinBoundExceeded(WorkflowError):
    def __init__(self, join: str, bound: int):
        super().__init__("ORJOIN_BOUND", f"OR-join {join!r}: more than {bound} markings to explore")
        self.join = join
        self.bound = bound


class RunAborted(WorkflowError):
    """A run stopped without reaching a terminal status; keeps the partial log."""

    def __init__(self, code: str, message: str, state: CaseState, log: EventLog):
        super().__init__(code, message)
        self.state = state
        self.log = log


# -- raw token game ---------------------------------------------------------


def choice_domain(pd: ProcessDefinition, node: str) -> tuple[Choice, ...]:
    """Choices available when ``node`` fires, in canonical order.

    XOR-split: each single outgoing edge. OR-split: every non-empty subset,
    in binary-counting order over edge declaration order. Others: ``(DEFAULT,)``.
    """
    kind = pd.nodes[node].kind
    outs = pd.index.outgoing[node]
    if kind is Kind.XOR_SPLIT:
        return tuple((e,) for e in outs)
    if kind is Kind.OR_SPLIT:
        return tuple(
            tuple(e for bit, e in enumerate(outs) if mask >> bit & 1)
            for mask in range(1, 1 << len(outs))
        )
    return (DEFAULT,)


def enabled_nodes(
    pd: ProcessDefinition,
    marking: Marking,
    or_join_ready: Callable[[str], bool],
    exclude: Optional[str] = None,
) -> list[str]:
    """Node ids whose firing rule holds, sorted by id."""
    idx = pd.index
    out = []
    for node in idx.node_order:
        if node == exclude:
            continue
        kind = pd.nodes[node].kind
        ins = idx.incoming[node]
        if kind is Kind.START or kind is Kind.END:
            continue
        if kind is Kind.AND_JOIN:
            ok = all(marking[i] for i in ins)
        elif kind is Kind.OR_JOIN:
            ok = any(marking[i] for i in ins) and or_join_ready(node)
        else:
            ok = any(marking[i] for i in ins)
        if ok:
            out.append(node)
    return out


@dataclass(frozen=True)
class _Effect:
    absorbed: bool = False
    reset: bool = False
    join_pos: int = -1


def step(
    pd: ProcessDefinition, marking: Marking, counters: Counters, node: str, choice: Choice
) -> tuple[Marking, Counters, _Effect]:
    """Fire ``node`` without checking enablement or settling the end token."""
    idx = pd.index
    kind = pd.nodes[node]
    ins, outs = idx.incoming[node], idx.outgoing[node]
    m = list(marking)
    effect = _Effect()

    k = kind.kind
    if k is Kind.TASK or k is Kind.AND_SPLIT:
        m[ins[0]] -= 1
        for o in outs:
            m[o] += 1
    elif k is Kind.XOR_SPLIT or k is Kind.OR_SPLIT:
        m[ins[0]] -= 1
        for o in choice:
            m[o] += 1
    elif k is Kind.AND_JOIN:
        for i in ins:
            m[i] -= 1
        m[outs[0]] += 1
    elif k is Kind.OR_JOIN:
        for i in ins:
            if m[i]:
                m[i] -= 1
        m[outs[0]] += 1
    elif k is Kind.XOR_JOIN or k is Kind.MULTI_MERGE:
        m[next(i for i in ins if m[i])] -= 1
        m[outs[0]] += 1
    else:  # discriminator / n-of-m
        m[next(i for i in ins if m[i])] -= 1
        pos = idx.counting_joins.index(node)
        fired, arrived = counters[pos]
        arrived += 1
        absorbed = True
        if not fired and arrived == kind.threshold:
            m[outs[0]] += 1
            fired, absorbed = True, False
        reset = arrived == len(ins)
        if reset:
            fired, arrived = False, 0
        counters = counters[:pos] + ((fired, arrived),) + counters[pos + 1 :]
        effect = _Effect(absorbed=absorbed, reset=reset, join_pos=pos)
    return tuple(m), counters, effect


def settle(pd: ProcessDefinition, marking: Marking) -> tuple[Marking, Status]:
    """Consume a token waiting in front of the end node, if any."""
    end = pd.index.end_edge
    if not marking[end]:
        return marking, Status.RUNNING
    m = list(marking)
    m[end] -= 1
    return tuple(m), Status.COMPLETED if not any(m) else Status.COMPLETED_IMPROPERLY


def or_join_ready(
    pd: ProcessDefinition, marking: Marking, counters: Counters, join: str, bound: int
) -> bool:
    ins = pd.index.incoming[join]
    if not any(marking[i] for i in ins):
        return False
    unmarked = [i for i in ins if not marking[i]]
    if not unmarked:
        return True
    if marking[pd.index.end_edge]:
        return True  # case is about to terminate; nothing else can fire

    seen = {(marking, counters)}
    queue = deque(seen)
    # Other OR-joins met during the lookahead fire on any marked input.
    always: Callable[[str], bool] = lambda _: True  # noqa: E731
    while queue:
        m, c = queue.popleft()
        for node in enabled_nodes(pd, m, always, exclude=join):
            for ch in choice_domain(pd, node):
                m2, c2, _ = step(pd, m, c, node, ch)
                if any(m2[i] for i in unmarked):
                    return False
                m2, status = settle(pd, m2)
                key = (m2, c2)
                if status is Status.RUNNING and key not in seen:
                    if len(seen) >= bound:
                        raise OrJoinBoundExceeded(join, bound)
                    seen.add(key)
                    queue.append(key)
    return True


# -- case API ---------------------------------------------------------------


def start_case(pd: ProcessDefinition, case_id: str) -> tuple[CaseState, list[Event]]:
    if not case_id:
        raise WorkflowError("BAD_CASE", "case id must be non-empty")
    marking = [0] * len(pd.edges)
    marking[pd.index.start_edge] = 1
    state = CaseState(
        case_id=case_id,
        marking=tuple(marking),
        join_states=MappingProxyType({j: JoinState() for j in pd.index.counting_joins}),
        seq=1,
    )
    return state, [Event(case_id, 0, EventKind.CASE_STARTED)]


def evaluate_or_join(
    pd: ProcessDefinition, case: CaseState, join: str, bound: int = DEFAULT_OR_JOIN_BOUND
) -> bool:
    """Non-local OR-join enablement.

    True iff some input of ``join`` is marked and no marking reachable without
    firing ``join`` itself puts a token on a currently empty input. Raises
    ``OrJoinBoundExceeded`` instead of guessing when more than ``bound``
    markings would have to be visited.
    """
    if pd.nodes.get(join) is None or pd.nodes[join].kind is not Kind.OR_JOIN:
        raise WorkflowError("NOT_ORJOIN", f"{join!r} is not an OR-join")
    return or_join_ready(pd, case.marking, case.counters(pd), join, bound)


def enabled_elements(
    pd: ProcessDefinition, case: CaseState, or_join_bound: int = DEFAULT_OR_JOIN_BOUND
) -> list[Enabled]:
    if case.status is not Status.RUNNING:
        raise WorkflowError("NOT_RUNNING", f"case {case.case_id} is {case.status.value}")
    counters = case.counters(pd)
    ready = lambda j: or_join_ready(pd, case.marking, counters, j, or_join_bound)  # noqa: E731
    return [Enabled(n, choice_domain(pd, n)) for n in enabled_nodes(pd, case.marking, ready)]


def _normalize_choice(choice: Union[Choice, int, Iterable[int], None]) -> Choice:
    if choice is None:
        return DEFAULT
    if isinstance(choice, int):
        return (choice,)
    return tuple(sorted(choice))


def branch_choice(pd: ProcessDefinition, node: str, *branches: Union[str, int]) -> Choice:
    """Translate branch labels, target node ids, or 0-based positions into a Choice."""
    outs = pd.index.outgoing.get(node)
    if outs is None:
        raise WorkflowError("NO_NODE", f"unknown node {node!r}")
    picked = set()
    for b in branches:
        if isinstance(b, int):
            if not 0 <= b < len(outs):
                raise WorkflowError("BAD_CHOICE", f"{node}: no branch #{b}")
            picked.add(outs[b])
            continue
        matches = [i for i in outs if pd.edges[i].label == b] or [
            i for i in outs if pd.edges[i].target == b
        ]
        if not matches and b.isdigit() and int(b) < len(outs):
            matches = [outs[int(b)]]
        if not matches:
            raise WorkflowError("BAD_CHOICE", f"{node}: no branch named {b!r}")
        picked.add(matches[0])
    return tuple(sorted(picked))


def fire(
    pd: ProcessDefinition,
    case: CaseState,
    node: str,
    choice: Union[Choice, int, Iterable[int], None] = DEFAULT,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
) -> tuple[CaseState, list[Event]]:
    """Fire one enabled node; a token reaching the end node is consumed at once."""
    enabled = {e.node: e for e in enabled_elements(pd, case, or_join_bound)}
    if node not in enabled:
        raise WorkflowError("NOT_ENABLED", f"{node!r} is not enabled")
    ch = _normalize_choice(choice)
    if ch not in enabled[node].choice_domain:
        raise WorkflowError("BAD_CHOICE", f"{node!r}: invalid choice {ch}")
    return _fire_unchecked(pd, case, node, ch)


def _fire_unchecked(
    pd: ProcessDefinition, case: CaseState, node: str, choice: Choice
) -> tuple[CaseState, list[Event]]:
    kind = pd.nodes[node].kind
    marking, counters, effect = step(pd, case.marking, case.counters(pd), node, choice)
    seq = case.seq
    events: list[Event] = []

    def emit(k: EventKind, n: Optional[str] = None, detail: Optional[str] = None) -> None:
        nonlocal seq
        events.append(Event(case.case_id, seq, k, n, detail))
        seq += 1

    join_states = case.join_states
    if kind is Kind.TASK:
        emit(EventKind.TASK_COMPLETED, node)
    elif effect.join_pos >= 0:
        old = case.join_states[node]
        emit(
            EventKind.TOKEN_ABSORBED if effect.absorbed else EventKind.GATEWAY_FIRED,
            node,
            f"round={old.round}",
        )
        fired, arrived = counters[effect.join_pos]
        new = JoinState(fired, arrived, old.round + 1 if effect.reset else old.round)
        join_states = MappingProxyType({**case.join_states, node: new})
    elif kind is Kind.XOR_SPLIT or kind is Kind.OR_SPLIT:
        emit(EventKind.GATEWAY_FIRED, node, ",".join(pd.edges[i].branch for i in choice))
    else:
        emit(EventKind.GATEWAY_FIRED, node)

    marking, status = settle(pd, marking)
    if status is Status.COMPLETED:
        emit(EventKind.CASE_COMPLETED)
    elif status is Status.COMPLETED_IMPROPERLY:
        emit(EventKind.CASE_COMPLETED_IMPROPERLY, detail=f"residual={sum(marking)}")

    new_state = replace(case, marking=marking, join_states=join_states, seq=seq, status=status)
    return new_state, events


# -- deciders and runs ------------------------------------------------------


@dataclass
class Decider:
    """Source of branch choices for XOR/OR splits.

    ``deterministic`` always takes the first choice in canonical order,
    ``seeded`` draws uniformly from a seeded RNG, ``scripted`` replays a list
    of ``(node, choice)`` pairs and fails when it runs out.
    """

    strategy: str = "deterministic"
    seed: Optional[int] = None
    script: Sequence[tuple[str, Choice]] = ()
    _rng: random.Random = field(init=False, repr=False)
    _pos: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.strategy not in ("deterministic", "seeded", "scripted"):
            raise ValueError(f"unknown decider strategy {self.strategy!r}")
        self._rng = random.Random(self.seed)

    @classmethod
    def deterministic(cls) -> "Decider":
        return cls("deterministic")

    @classmethod
    def seeded(cls, seed: int) -> "Decider":
        return cls("seeded", seed=seed)

    @classmethod
    def scripted(cls, script: Sequence[tuple[str, Union[Choice, int, Iterable[int]]]]) -> "Decider":
        return cls("scripted", script=[(n, _normalize_choice(c)) for n, c in script])

    def choose(self, node: str, domain: Sequence[Choice]) -> Choice:
        if self.strategy == "deterministic":
            return domain[0]
        if self.strategy == "seeded":
            return self._rng.choice(domain)
        if self._pos >= len(self.script):
            raise WorkflowError("SCRIPT_SHORT", f"no scripted choice left for {node!r}")
        want, choice = self.script[self._pos]
        if want != node:
            raise WorkflowError("SCRIPT_MISMATCH", f"script expects {want!r}, engine is firing {node!r}")
        if choice not in domain:
            raise WorkflowError("BAD_CHOICE", f"scripted choice {choice} invalid for {node!r}")
        self._pos += 1
        return choice


def run_to_completion(
    pd: ProcessDefinition,
    case_id: str = "c1",
    decider: Optional[Decider] = None,
    scheduler_seed: Optional[int] = None,
    or_join_bound: int = DEFAULT_OR_JOIN_BOUND,
    step_limit: int = DEFAULT_STEP_LIMIT,
) -> tuple[CaseState, EventLog]:
    """Run one case until it completes, completes improperly, or deadlocks.

    Without ``scheduler_seed`` the enabled node with the smallest id fires
    first; with it, an enabled node is drawn uniformly. Raises ``RunAborted``
    (STEP_LIMIT, SCRIPT_SHORT, ORJOIN_BOUND, ...) with the partial log.
    """
    decider = decider or Decider.deterministic()
    rng = random.Random(scheduler_seed) if scheduler_seed is not None else None
    state, log = start_case(pd, case_id)
    steps = 0
    while state.status is Status.RUNNING:
        try:
            enabled = enabled_elements(pd, state, or_join_bound)
        except OrJoinBoundExceeded as exc:
            raise RunAborted(exc.code, exc.message, state, log) from exc
        if not enabled:
            log.append(Event(case_id, state.seq, EventKind.CASE_DEADLOCKED))
            state = replace(state, seq=state.seq + 1, status=Status.DEADLOCKED)
            break
        if steps >= step_limit:
            raise RunAborted("STEP_LIMIT", f"no termination after {step_limit} steps", state, log)
        pick = enabled[0] if rng is None else rng.choice(enabled)
        choice = DEFAULT
        if pd.nodes[pick.node].kind in (Kind.XOR_SPLIT, Kind.OR_SPLIT):
            try:
                choice = decider.choose(pick.node, pick.choice_domain)
            except WorkflowError as exc:
                raise RunAborted(exc.code, exc.message, state, log) from exc
        state, events = _fire_unchecked(pd, state, pick.node, choice)
        log.extend(events)
        steps += 1
    return state, log
