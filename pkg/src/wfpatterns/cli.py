"""``wfp`` command line: validate, run, explore, dot.

Exit codes: 0 ok / completed / sound, 2 parse or validation failure,
3 unreadable or unwritable file, 4 improper completion (or unsound without
deadlock), 5 deadlock, 6 aborted run or bound overflow.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import analyzer, engine
from .dsl import DSLSyntaxError, DSLValidationError, export_dot, parse
from .model import ProcessDefinition, WorkflowError

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_IMPROPER, EXIT_DEADLOCK, EXIT_ABORTED = 0, 2, 3, 4, 5, 6


class _Exit(Exception):
    def __init__(self, code: int):
        self.code = code


@dataclass
class RunConfig:
    input_path: Path
    command: str
    seed: Optional[int] = None
    decider_script: Optional[Path] = None
    max_states: int = analyzer.DEFAULT_MAX_STATES
    or_join_bound: int = engine.DEFAULT_OR_JOIN_BOUND
    step_limit: int = engine.DEFAULT_STEP_LIMIT
    output_path: Optional[Path] = None
    graph_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.seed is not None and self.decider_script is not None:
            raise ValueError("--seed and --script are mutually exclusive")


def _read(path: Path) -> str:
    try:
        return path.read_bytes().decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        print(f"{path}: cannot read: {exc}", file=sys.stderr)
        raise _Exit(EXIT_IO) from None


def _write(cfg: RunConfig, text: str, path: Optional[Path] = None) -> None:
    path = path or cfg.output_path
    if path is None:
        sys.stdout.buffer.write(text.encode("utf-8"))
        sys.stdout.flush()
        return
    try:
        path.write_bytes(text.encode("utf-8"))
    except OSError as exc:
        print(f"{path}: cannot write: {exc}", file=sys.stderr)
        raise _Exit(EXIT_IO) from None


def _load(cfg: RunConfig) -> ProcessDefinition:
    text = _read(cfg.input_path)
    try:
        return parse(text)
    except DSLSyntaxError as exc:
        for err in exc.errors:
            print(f"{cfg.input_path}:{err.span}: syntax error: expected {err.expected}, found {err.found}",
                  file=sys.stderr)
    except DSLValidationError as exc:
        for v in exc.report.violations:
            span = exc.spans.get(v.ref) if v.ref else None
            where = f"{cfg.input_path}:{span}" if span else f"{cfg.input_path}"
            print(f"{where}: {v}", file=sys.stderr)
    raise _Exit(EXIT_INVALID)


def load_script(pd: ProcessDefinition, text: str) -> list[tuple[str, engine.Choice]]:
    """Parse a decider script: ``<node> <branch>[,<branch>...]`` per line.

    A branch is an edge label, a target node id, or a 0-based position among
    the node's outgoing edges. ``#`` comments and blank lines are ignored.
    """
    script = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise WorkflowError("BAD_SCRIPT", f"line {lineno}: expected '<node> <branch>[,<branch>]'")
        node, rest = parts
        if node not in pd.nodes:
            raise WorkflowError("BAD_SCRIPT", f"line {lineno}: unknown node {node!r}")
        branches = [b.strip() for b in rest.split(",") if b.strip()]
        try:
            script.append((node, engine.branch_choice(pd, node, *branches)))
        except WorkflowError as exc:
            raise WorkflowError("BAD_SCRIPT", f"line {lineno}: {exc.message}") from None
    return script


def cmd_validate(cfg: RunConfig) -> int:
    pd = _load(cfg)
    _write(cfg, f"OK: process {pd.name}, {len(pd.nodes)} nodes, {len(pd.edges)} edges\n")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    pd = _load(cfg)
    decider = engine.Decider.deterministic()
    if cfg.decider_script is not None:
        try:
            decider = engine.Decider.scripted(load_script(pd, _read(cfg.decider_script)))
        except WorkflowError as exc:
            print(f"{cfg.decider_script}: {exc.message}", file=sys.stderr)
            return EXIT_INVALID
    elif cfg.seed is not None:
        decider = engine.Decider.seeded(cfg.seed)
    try:
        state, log = engine.run_to_completion(
            pd,
            "c1",
            decider=decider,
            scheduler_seed=cfg.seed,
            or_join_bound=cfg.or_join_bound,
            step_limit=cfg.step_limit,
        )
    except engine.RunAborted as exc:
        _write(cfg, engine.to_jsonl(exc.log))
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    _write(cfg, engine.to_jsonl(log))
    return {
        engine.Status.COMPLETED: EXIT_OK,
        engine.Status.COMPLETED_IMPROPERLY: EXIT_IMPROPER,
        engine.Status.DEADLOCKED: EXIT_DEADLOCK,
    }[state.status]


def cmd_explore(cfg: RunConfig) -> int:
    pd = _load(cfg)
    try:
        graph = analyzer.explore(pd, cfg.max_states, cfg.or_join_bound)
    except engine.OrJoinBoundExceeded as exc:
        doc = {"process": pd.name, "error": exc.code, "message": exc.message, "truncated": True}
        _write(cfg, json.dumps(doc, indent=2) + "\n")
        return EXIT_ABORTED
    traces = analyzer.enumerate_traces(pd, graph=graph)
    report = analyzer.check_soundness(pd, graph=graph)
    doc = {
        "process": pd.name,
        "states": len(graph.states),
        "transitions": len(graph.transitions),
        "traces": len(traces),
        **report.to_dict(),
    }
    _write(cfg, json.dumps(doc, indent=2) + "\n")
    if cfg.graph_path is not None:
        render = analyzer.graph_to_dot if cfg.graph_path.suffix == ".dot" else analyzer.graph_to_json
        _write(cfg, render(pd, graph), cfg.graph_path)
    if report.truncated:
        return EXIT_ABORTED
    if report.sound:
        return EXIT_OK
    return EXIT_DEADLOCK if report.deadlock_states else EXIT_IMPROPER


def cmd_dot(cfg: RunConfig) -> int:
    _write(cfg, export_dot(_load(cfg)))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "explore": cmd_explore, "dot": cmd_dot}


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not -(2**63) <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfp", description="Workflow pattern engine and analyzer")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("validate", "parse and validate a .wfp file"),
        ("run", "execute one case and write its JSONL event log"),
        ("explore", "explore the state space and report soundness"),
        ("dot", "export the process as Graphviz DOT"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input", type=Path)
        p.add_argument("--out", type=Path, default=None)
        if name == "run":
            group = p.add_mutually_exclusive_group()
            group.add_argument("--seed", type=_seed, default=None)
            group.add_argument("--script", type=Path, default=None)
            p.add_argument("--step-limit", type=_positive, default=engine.DEFAULT_STEP_LIMIT)
        if name in ("run", "explore"):
            p.add_argument("--or-join-bound", type=_positive, default=engine.DEFAULT_OR_JOIN_BOUND)
        if name == "explore":
            p.add_argument("--max-states", type=_positive, default=analyzer.DEFAULT_MAX_STATES)
            p.add_argument("--graph", type=Path, default=None,
                           help="also write the state graph (.dot or .json)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        input_path=args.input,
        command=args.command,
        seed=getattr(args, "seed", None),
        decider_script=getattr(args, "script", None),
        max_states=getattr(args, "max_states", analyzer.DEFAULT_MAX_STATES),
        or_join_bound=getattr(args, "or_join_bound", engine.DEFAULT_OR_JOIN_BOUND),
        step_limit=getattr(args, "step_limit", engine.DEFAULT_STEP_LIMIT),
        output_path=args.out,
        graph_path=getattr(args, "graph", None),
    )
    try:
        return COMMANDS[cfg.command](cfg)
    except _Exit as exc:
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
