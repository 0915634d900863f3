import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import NETS, and_net, count, load, random_net, tasks
from wfpatterns.analyzer import explore, initial_snapshot
from wfpatterns.dsl import parse
from wfpatterns.engine import (
    CaseState,
    Decider,
    Event,
    EventKind,
    JoinState,
    RunAborted,
    Status,
    branch_choice,
    enabled_elements,
    enabled_nodes,
    evaluate_or_join,
    fire,
    from_jsonl,
    run_to_completion,
    start_case,
    to_jsonl,
)
from wfpatterns.model import WorkflowError

K = EventKind


def with_tokens(pd, case, **tokens):
    """Replace the case marking: keyword ``A__B=1`` puts one token on edge A->B."""
    m = [0] * len(pd.edges)
    for key, n in tokens.items():
        src, dst = key.split("__")
        m[next(i for i, e in enumerate(pd.edges) if (e.source, e.target) == (src, dst))] = n
    return CaseState(case.case_id, tuple(m), case.join_states, case.seq, case.status)


# -- start_case ------------------------------------------------------------------


def test_start_case_sequence():
    pd = parse("process P { start s; end e; task A; s -> A; A -> e; }")
    case, events = start_case(pd, "c1")
    assert case.tokens(pd) == {"s->A": 1}
    assert case.seq == 1 and case.status is Status.RUNNING
    assert events == [Event("c1", 0, K.CASE_STARTED)]


def test_start_case_and_net():
    pd = load("synchronization")
    case, _ = start_case(pd, "c2")
    assert case.tokens(pd) == {"s->G1": 1}


def test_start_case_zeroes_join_state():
    pd = load("discriminator_loop")
    case, _ = start_case(pd, "c3")
    assert case.join_states == {"D": JoinState(fired=False, arrived=0, round=0)}


def test_start_case_requires_id():
    with pytest.raises(WorkflowError):
        start_case(load("sequence"), "")


# -- enabled_elements ----------------------------------------------------------


def test_enabled_sequence():
    pd = load("sequence")
    case, _ = start_case(pd, "c")
    assert [e.node for e in enabled_elements(pd, case)] == ["A"]


def test_and_join_waits_for_every_branch():
    pd = load("synchronization")
    case, _ = start_case(pd, "c")
    half = with_tokens(pd, case, B__G2=1)
    assert "G2" not in [e.node for e in enabled_elements(pd, half)]
    both = with_tokens(pd, case, B__G2=1, C__G2=1)
    assert [e.node for e in enabled_elements(pd, both)] == ["G2"]


def test_choice_domains():
    pd = load("multi_choice")
    case, _ = start_case(pd, "c")
    (en,) = enabled_elements(pd, case)
    a, b, c = (i for i, e in enumerate(pd.edges) if e.source == "O")
    assert en.choice_domain == ((a,), (b,), (a, b), (c,), (a, c), (b, c), (a, b, c))


def test_enabled_on_finished_case():
    pd = load("sequence")
    state, _ = run_to_completion(pd)
    with pytest.raises(WorkflowError) as exc:
        enabled_elements(pd, state)
    assert exc.value.code == "NOT_RUNNING"


# -- fire ------------------------------------------------------------------------


def test_xor_split_marks_exactly_the_chosen_edge():
    pd = load("exclusive_choice")
    case, _ = start_case(pd, "c")
    case, events = fire(pd, case, "X", branch_choice(pd, "X", 2))
    assert case.tokens(pd) == {"X->C": 1}
    assert events == [Event("c", 1, K.GATEWAY_FIRED, "X", "high")]


def test_or_split_marks_chosen_subset():
    pd = load("multi_choice")
    case, _ = start_case(pd, "c")
    case, events = fire(pd, case, "O", branch_choice(pd, "O", "a", "c"))
    assert case.tokens(pd) == {"O->A": 1, "O->C": 1}
    assert events[0].detail == "a,c"


def test_discriminator_fire_absorb_reset():
    pd = load("discriminator_loop")
    case, _ = start_case(pd, "c")
    case = with_tokens(pd, case, A__D=1, B__D=1, C__D=1)

    case, ev = fire(pd, case, "D")
    assert [e.kind for e in ev] == [K.GATEWAY_FIRED]
    assert case.tokens(pd) == {"B->D": 1, "C->D": 1, "D->X": 1}
    assert case.join_states["D"] == JoinState(True, 1, 0)

    case, ev = fire(pd, case, "D")
    assert [e.kind for e in ev] == [K.TOKEN_ABSORBED]
    assert case.tokens(pd) == {"C->D": 1, "D->X": 1}
    assert case.join_states["D"] == JoinState(True, 2, 0)

    case, ev = fire(pd, case, "D")
    assert [(e.kind, e.detail) for e in ev] == [(K.TOKEN_ABSORBED, "round=0")]
    assert case.tokens(pd) == {"D->X": 1}
    assert case.join_states["D"] == JoinState(False, 0, 1)


def test_n_of_m_fires_on_second_arrival():
    pd = load("n_of_m_loop")
    case, _ = start_case(pd, "c")
    case = with_tokens(pd, case, A__D=1, B__D=1, C__D=1)
    kinds = []
    for _ in range(3):
        case, ev = fire(pd, case, "D")
        kinds += [e.kind for e in ev]
    assert kinds == [K.TOKEN_ABSORBED, K.GATEWAY_FIRED, K.TOKEN_ABSORBED]
    assert case.tokens(pd) == {"D->X": 1}


def test_multi_merge_fires_per_token():
    pd = load("multi_merge_plain")
    case, _ = start_case(pd, "c")
    case = with_tokens(pd, case, B1__M=1, B2__M=1)
    case, _ = fire(pd, case, "M")
    assert case.tokens(pd) == {"B2->M": 1, "M->D": 1}
    case, _ = fire(pd, case, "M")
    assert case.tokens(pd) == {"M->D": 2}


def test_fire_errors():
    pd = load("exclusive_choice")
    case, _ = start_case(pd, "c")
    with pytest.raises(WorkflowError) as exc:
        fire(pd, case, "A")
    assert exc.value.code == "NOT_ENABLED"
    with pytest.raises(WorkflowError) as exc:
        fire(pd, case, "X", ())
    assert exc.value.code == "BAD_CHOICE"


def test_end_token_completes_case():
    pd = load("sequence")
    case, _ = start_case(pd, "c")
    for node in "AB":
        case, _ = fire(pd, case, node)
    case, ev = fire(pd, case, "C")
    assert case.status is Status.COMPLETED and not any(case.marking)
    assert [e.kind for e in ev] == [K.TASK_COMPLETED, K.CASE_COMPLETED]
    assert ev[-1].node is None


# -- OR-join -----------------------------------------------------------------------


def test_or_join_single_branch_done():
    pd = load("multi_choice")
    case, _ = start_case(pd, "c")
    case, _ = fire(pd, case, "O", branch_choice(pd, "O", "b"))
    assert evaluate_or_join(pd, case, "J") is False  # nothing on J's inputs yet
    case, _ = fire(pd, case, "B")
    assert evaluate_or_join(pd, case, "J") is True


def test_or_join_waits_for_second_branch():
    pd = load("multi_choice")
    case, _ = start_case(pd, "c")
    case, _ = fire(pd, case, "O", branch_choice(pd, "O", "a", "c"))
    case, _ = fire(pd, case, "A")
    assert evaluate_or_join(pd, case, "J") is False
    case, _ = fire(pd, case, "C")
    assert evaluate_or_join(pd, case, "J") is True


def test_or_join_errors():
    pd = load("multi_choice")
    case, _ = start_case(pd, "c")
    with pytest.raises(WorkflowError) as exc:
        evaluate_or_join(pd, case, "O")
    assert exc.value.code == "NOT_ORJOIN"

    # Short branch done, long one three tasks away: the lookahead must add states.
    pd = parse((NETS / "or" / "or_uneven.wfp").read_text())
    case, _ = start_case(pd, "c")
    case, _ = fire(pd, case, "O", branch_choice(pd, "O", "long", "short"))
    case, _ = fire(pd, case, "B")
    assert evaluate_or_join(pd, case, "J", bound=3) is False
    with pytest.raises(WorkflowError) as exc:
        evaluate_or_join(pd, case, "J", bound=1)
    assert exc.value.code == "ORJOIN_BOUND"


# -- run_to_completion ---------------------------------------------------------------


def test_run_sequence_trace():
    state, log = run_to_completion(load("sequence"), "c1")
    assert [(e.kind, e.node) for e in log] == [
        (K.CASE_STARTED, None),
        (K.TASK_COMPLETED, "A"),
        (K.TASK_COMPLETED, "B"),
        (K.TASK_COMPLETED, "C"),
        (K.CASE_COMPLETED, None),
    ]
    assert state.status is Status.COMPLETED


def test_run_xor_into_and_join_deadlocks():
    pd = load("xor_and_mismatch")
    state, log = run_to_completion(pd)
    assert state.status is Status.DEADLOCKED
    assert log[-1].kind is K.CASE_DEADLOCKED
    # Oracle: no reachable state of the full state graph enables J.
    graph = explore(pd)
    assert all("J" not in enabled_nodes(pd, s.marking, lambda _: True) for s in graph.states)


def test_run_and_split_into_xor_join_completes_improperly():
    pd = load("and_xor_mismatch")
    state, log = run_to_completion(pd)
    assert state.status is Status.COMPLETED_IMPROPERLY
    assert sum(state.marking) == 2
    assert log[-1].kind is K.CASE_COMPLETED_IMPROPERLY
    # Oracle: every terminal state of the state graph is an improper completion.
    graph = explore(pd)
    terminal = [s for s in graph.states if s.status is not Status.RUNNING]
    assert terminal and all(s.status is Status.COMPLETED_IMPROPERLY for s in terminal)


def test_step_limit():
    pd = load("discriminator_loop")  # the first choice at R is "again", forever
    with pytest.raises(RunAborted) as exc:
        run_to_completion(pd, step_limit=50)
    assert exc.value.code == "STEP_LIMIT"
    assert exc.value.log[0].kind is K.CASE_STARTED


def test_script_exhausted():
    pd = load("discriminator_loop")
    with pytest.raises(RunAborted) as exc:
        run_to_completion(pd, decider=Decider.scripted([("R", branch_choice(pd, "R", "again"))]))
    assert exc.value.code == "SCRIPT_SHORT"


def test_script_mismatch():
    pd = load("discriminator_loop")
    with pytest.raises(RunAborted) as exc:
        run_to_completion(pd, decider=Decider.scripted([("G", ())]))
    assert exc.value.code == "SCRIPT_MISMATCH"


def test_or_join_bound_aborts_run():
    pd = parse(
        "process P { start s; end e; gateway or_split O; gateway or_join J; task A; task L1; task L2; "
        "s -> O; O -> A; O -> L1; L1 -> L2; A -> J; L2 -> J; J -> e; }"
    )
    script = [("O", branch_choice(pd, "O", "A", "L1"))]
    with pytest.raises(RunAborted) as exc:
        run_to_completion(pd, decider=Decider.scripted(script), or_join_bound=1)
    assert exc.value.code == "ORJOIN_BOUND"
    state, _ = run_to_completion(pd, decider=Decider.scripted(script), or_join_bound=2)
    assert state.status is Status.COMPLETED


def test_event_jsonl_format():
    pd = load("discriminator_loop")
    script = [("R", branch_choice(pd, "R", "done"))]
    _, log = run_to_completion(pd, "c9", decider=Decider.scripted(script))
    lines = to_jsonl(log).splitlines()
    assert lines[0] == '{"case":"c9","seq":0,"kind":"case_started"}'
    assert '{"case":"c9","seq":2,"kind":"gateway_fired","node":"G"}' in lines
    assert any('"kind":"token_absorbed","node":"D","detail":"round=0"' in l for l in lines)
    assert from_jsonl(to_jsonl(log)) == log


# -- properties ----------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**64 - 1))
def test_chain_has_one_trace_for_every_seed(k, seed):
    names = [f"T{i}" for i in range(k)]
    text = "process P { start s; end e; " + " ".join(f"task {n};" for n in names)
    chain = ["s"] + names + ["e"]
    text += " ".join(f"{a} -> {b};" for a, b in zip(chain, chain[1:])) + " }"
    pd = parse(text)
    _, log = run_to_completion(pd, scheduler_seed=seed, decider=Decider.seeded(seed))
    assert tasks(log) == names


@pytest.mark.parametrize("k", [2, 3, 4])
def test_and_fan_out_fan_in(k):
    pd = and_net(k)
    seen = set()
    for seed in range(200):
        state, log = run_to_completion(pd, scheduler_seed=seed)
        assert state.status is Status.COMPLETED
        assert count(log, K.GATEWAY_FIRED, "G2") == 1
        seen.add(tuple(tasks(log)))
    assert seen <= set(itertools.permutations(f"B{i + 1}" for i in range(k)))


def test_xor_exclusivity():
    pd = load("exclusive_choice")
    chosen = set()
    for seed in range(100):
        _, log = run_to_completion(pd, decider=Decider.seeded(seed), scheduler_seed=seed)
        assert len(tasks(log)) == 1
        chosen.add(tasks(log)[0])
    assert chosen == {"A", "B", "C"}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_event_seq_is_gapless(net_seed, run_seed):
    pd = random_net(random.Random(net_seed), depth=2)
    try:
        _, log = run_to_completion(pd, decider=Decider.seeded(run_seed), scheduler_seed=run_seed,
                                   step_limit=500)
    except RunAborted as exc:
        log = exc.log
    assert [e.seq for e in log] == list(range(len(log)))
    assert log[0].kind is K.CASE_STARTED


def test_seeded_runs_are_reproducible():
    pd = load("synchronizing_merge")
    a = run_to_completion(pd, decider=Decider.seeded(11), scheduler_seed=11)[1]
    b = run_to_completion(pd, decider=Decider.seeded(11), scheduler_seed=11)[1]
    assert to_jsonl(a) == to_jsonl(b)


def test_initial_snapshot_matches_start_case():
    pd = load("discriminator_loop")
    case, _ = start_case(pd, "c")
    assert initial_snapshot(pd).marking == case.marking
