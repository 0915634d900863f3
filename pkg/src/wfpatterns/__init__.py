"""Workflow control-flow patterns: process DSL, token engine and analyzer."""

from .analyzer import (
    SoundnessReport,
    StateGraph,
    check_soundness,
    enumerate_traces,
    explore,
    oracle_or_join,
    or_join_agreement,
)
from .dsl import DSLSyntaxError, DSLValidationError, ParseError, SourceSpan, export_dot, parse, serialize
from .engine import (
    CaseState,
    Decider,
    Enabled,
    Event,
    EventKind,
    JoinState,
    OrJoinBoundExceeded,
    RunAborted,
    Status,
    enabled_elements,
    evaluate_or_join,
    fire,
    run_to_completion,
    start_case,
)
from .model import (
    Edge,
    InvalidProcessError,
    Kind,
    NodeKind,
    ProcessDefinition,
    ValidationReport,
    Violation,
    WorkflowError,
    build_process,
    node_edges,
    validate_process,
)

__all__ = [name for name in dir() if not name.startswith("_")]
