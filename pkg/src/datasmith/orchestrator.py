"""The step engine: decide, delegate, execute, retry, halt.

One step is one routing decision.  The router sees the rendered transcript
and picks exactly one action; prose is delegated to the text agent, code to
the code agent followed by execution with bounded rewrite retries, and
``finish`` closes the session.  Every decision, render, execution, and halt
leaves a trace record; an optional observer receives each record as it is
appended (the CLI prints them, the service streams them).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from . import history, prompts
from .actions import ACTION_FINISH, ActionParseError, TOOL_DEFINITIONS, parse_action
from .domain import (
    Cell,
    CellKind,
    ExecStatus,
    ExecutionResult,
    Finish,
    OrchestratorAction,
    RequestCode,
    RequestText,
    STEPPABLE_STATUSES,
    Session,
    SessionStateError,
    SessionStatus,
    ToolMode,
    add_trace,
    append_cell,
    renumber_attempt,
)
from .gateway import AgentRole, ChatRequest, LLMGateway

#: Closing text used when the router finishes without a summary hint.
FINISH_PREFIX = "Finished: "
DEFAULT_FINISH_SUMMARY = "Task complete."

Observer = Callable[..., None]


class LimitReached(Exception):
    """The session is at its step budget; raising leaves it StoppedMaxSteps."""


class ActionParseFailure(Exception):
    """Two attempts at reading a routing decision failed; session is Failed."""


class OrchestratorError(Exception):
    pass


class Executor(Protocol):
    """Anything that can run one code cell to completion."""

    def execute_cell(self, source: str, timeout_ms: Optional[int] = None) -> ExecutionResult: ...


@dataclass(frozen=True)
class StepOutcome:
    action: OrchestratorAction
    cell: Optional[Cell]
    execution: Optional[ExecutionResult]
    halted: bool


_FENCE_RE = re.compile(r"(`{3,})[a-zA-Z0-9_+-]*\n(.*?)\1", re.DOTALL)


def extract_code_block(text: str) -> str:
    """The first fenced block if there is one, else the reply as-is."""
    match = _FENCE_RE.search(text)
    if match:
        return match.group(2).rstrip("\n")
    return text.strip()


def _trace(session: Session, observer: Optional[Observer], kind: str, data: dict) -> None:
    record = add_trace(session, kind, data)
    if observer is not None:
        observer(session, record)


def _with_instruction(rendered: str, instruction: str) -> str:
    return f"{rendered}\n\nInstruction\n===========\n{instruction}"


def _action_argument(action: OrchestratorAction) -> str:
    if isinstance(action, RequestText):
        return action.spec
    if isinstance(action, RequestCode):
        return action.purpose
    return action.summary_hint


def _action_name(action: OrchestratorAction) -> str:
    if isinstance(action, RequestText):
        return "request_text"
    if isinstance(action, RequestCode):
        return "request_code"
    return ACTION_FINISH


def _render(session: Session, observer: Optional[Observer], context: str) -> str:
    report = history.render_size_report(session)
    _trace(
        session,
        observer,
        "render",
        {
            "context": context,
            "untruncated_chars": report.untruncated_chars,
            "emitted_chars": report.emitted_chars,
            "truncated": report.truncated,
        },
    )
    return history.render_history(session)


def _decide(
    session: Session,
    gateway: LLMGateway,
    rendered: str,
    observer: Optional[Observer],
) -> OrchestratorAction:
    """One routing decision, with a single corrective re-ask on a bad reply."""
    config = session.config
    tools = tuple(TOOL_DEFINITIONS) if config.tool_mode is ToolMode.NATIVE_TOOL_CALLS else None
    request = ChatRequest(
        role=AgentRole.ORCHESTRATOR,
        system_prompt=prompts.system_prompt(AgentRole.ORCHESTRATOR, config.tool_mode),
        rendered_context=rendered,
        temperature=config.orchestrator.temperature,
        model=config.orchestrator.model,
        tools=tools,
    )
    response = gateway.complete(request)
    try:
        return parse_action(response, config.tool_mode)
    except ActionParseError as first_error:
        _trace(session, observer, "parse_retry", {"error": str(first_error)})
        corrective = _with_instruction(
            rendered,
            "Your previous reply could not be used: "
            f"{first_error}. Reply again with exactly one valid action "
            "(request_text, request_code, or finish) and only its own field.",
        )
        retry_request = ChatRequest(
            role=AgentRole.ORCHESTRATOR,
            system_prompt=request.system_prompt,
            rendered_context=corrective,
            temperature=config.orchestrator.temperature,
            model=config.orchestrator.model,
            tools=tools,
        )
        retry_response = gateway.complete(retry_request)
        try:
            return parse_action(retry_response, config.tool_mode)
        except ActionParseError as second_error:
            raise ActionParseFailure(
                f"routing decision unreadable twice: {first_error}; then: {second_error}"
            ) from second_error


def _run_attempt(
    session: Session,
    cell: Cell,
    executor: Executor,
    attempt: int,
    observer: Optional[Observer],
) -> ExecutionResult:
    raw = executor.execute_cell(cell.source, session.config.cell_timeout_ms)
    result = renumber_attempt(raw, attempt)
    cell.add_result(result)
    _trace(
        session,
        observer,
        "execution",
        {
            "cell_id": cell.id,
            "attempt": result.attempt,
            "status": result.status.value,
            "duration_ms": result.duration_ms,
            "artifacts_written": list(result.artifacts_written),
        },
    )
    return result


def retry_code_loop(
    session: Session,
    cell: Cell,
    gateway: LLMGateway,
    executor: Executor,
    *,
    observer: Optional[Observer] = None,
) -> ExecutionResult:
    """Execute a code cell; on failure, ask for rewrites up to the budget.

    ``max_code_retries`` counts rewrites after the first attempt, so the cell
    runs at most ``max_code_retries + 1`` times.  Every attempt's result stays
    on the cell; each rewrite replaces the cell source, and the replaced
    source is preserved in the trace.
    """
    config = session.config
    result = _run_attempt(session, cell, executor, 1, observer)
    rewrites = 0
    while result.status is not ExecStatus.SUCCESS and rewrites < config.max_code_retries:
        rewrites += 1
        # The failed cell is now the transcript tail, so the render shows its
        # error tail to the code agent.
        rendered = _render(session, observer, "code_rewrite")
        response = gateway.complete(
            ChatRequest(
                role=AgentRole.CODE,
                system_prompt=prompts.system_prompt(AgentRole.CODE),
                rendered_context=_with_instruction(
                    rendered,
                    "The last code block failed; its error tail is shown above. "
                    f"Rewrite it so that it achieves: {cell.purpose_or_spec}",
                ),
                temperature=config.code_agent.temperature,
                model=config.code_agent.model,
            )
        )
        _trace(
            session,
            observer,
            "rewrite",
            {"cell_id": cell.id, "attempt": rewrites + 1, "prior_source": cell.source},
        )
        cell.source = extract_code_block(response.raw_text)
        result = _run_attempt(session, cell, executor, rewrites + 1, observer)
    return result


def step(
    session: Session,
    gateway: LLMGateway,
    executor: Optional[Executor],
    *,
    observer: Optional[Observer] = None,
) -> StepOutcome:
    """Advance the session by exactly one routing decision.

    Raises ``LimitReached`` when the step budget is already spent (leaving
    the session StoppedMaxSteps) and ``ActionParseFailure`` after two
    unusable router replies (leaving it Failed).  Transport-level errors
    propagate with the session restored to its prior resumable status.
    """
    if session.status is SessionStatus.STOPPED_MAX_STEPS:
        raise LimitReached(f"step budget of {session.config.max_steps} is spent")
    if session.status not in STEPPABLE_STATUSES:
        raise SessionStateError(f"cannot step a {session.status.value} session")
    if session.step_count >= session.config.max_steps:
        session.status = SessionStatus.STOPPED_MAX_STEPS
        _trace(session, observer, "halt", {"reason": "max_steps", "status": session.status.value})
        raise LimitReached(f"step budget of {session.config.max_steps} is spent")

    prior_status = session.status
    prior_step_count = session.step_count
    session.status = SessionStatus.RUNNING
    config = session.config
    try:
        rendered = _render(session, observer, "orchestrator")
        try:
            action = _decide(session, gateway, rendered, observer)
        except ActionParseFailure:
            session.status = SessionStatus.FAILED
            _trace(session, observer, "halt", {"reason": "action_parse", "status": "failed"})
            raise
        session.step_count += 1
        _trace(
            session,
            observer,
            "action",
            {
                "step": session.step_count,
                "action": _action_name(action),
                "argument": _action_argument(action),
            },
        )

        cell: Optional[Cell] = None
        execution: Optional[ExecutionResult] = None
        if isinstance(action, RequestText):
            response = gateway.complete(
                ChatRequest(
                    role=AgentRole.TEXT,
                    system_prompt=prompts.system_prompt(AgentRole.TEXT),
                    rendered_context=_with_instruction(
                        rendered, f"Write the next text block. It should cover: {action.spec}"
                    ),
                    temperature=config.text_agent.temperature,
                    model=config.text_agent.model,
                )
            )
            cell = append_cell(session, CellKind.TEXT, response.raw_text.strip(), action.spec)
            _trace(
                session,
                observer,
                "cell_added",
                {"cell_id": cell.id, "kind": cell.kind.value, "ordinal": cell.ordinal},
            )
        elif isinstance(action, RequestCode):
            if executor is None:
                raise OrchestratorError("a code action was routed but no executor is attached")
            response = gateway.complete(
                ChatRequest(
                    role=AgentRole.CODE,
                    system_prompt=prompts.system_prompt(AgentRole.CODE),
                    rendered_context=_with_instruction(
                        rendered, f"Write the next code block. It must achieve: {action.purpose}"
                    ),
                    temperature=config.code_agent.temperature,
                    model=config.code_agent.model,
                )
            )
            cell = append_cell(
                session, CellKind.CODE, extract_code_block(response.raw_text), action.purpose
            )
            _trace(
                session,
                observer,
                "cell_added",
                {"cell_id": cell.id, "kind": cell.kind.value, "ordinal": cell.ordinal},
            )
            execution = retry_code_loop(session, cell, gateway, executor, observer=observer)
        else:
            summary = action.summary_hint.strip() or DEFAULT_FINISH_SUMMARY
            cell = append_cell(
                session, CellKind.FINISH, FINISH_PREFIX + summary, action.summary_hint
            )
            _trace(
                session,
                observer,
                "cell_added",
                {"cell_id": cell.id, "kind": cell.kind.value, "ordinal": cell.ordinal},
            )
    except (ActionParseFailure, LimitReached):
        raise
    except Exception:
        # Infra errors (gateway, executor) leave the session resumable, and
        # an incomplete step must not burn budget.
        session.status = prior_status
        session.step_count = prior_step_count
        raise

    if isinstance(action, Finish):
        session.status = SessionStatus.FINISHED
        _trace(session, observer, "halt", {"reason": "finish", "status": session.status.value})
    elif session.step_count >= config.max_steps:
        session.status = SessionStatus.STOPPED_MAX_STEPS
        _trace(session, observer, "halt", {"reason": "max_steps", "status": session.status.value})
    else:
        session.status = SessionStatus.AWAITING_NEXT_STEP
    return StepOutcome(
        action=action,
        cell=cell,
        execution=execution,
        halted=session.status
        in (SessionStatus.FINISHED, SessionStatus.STOPPED_MAX_STEPS),
    )


def autorun(
    session: Session,
    gateway: LLMGateway,
    executor: Optional[Executor],
    *,
    observer: Optional[Observer] = None,
    should_continue: Optional[Callable[[], bool]] = None,
) -> Session:
    """Step until finish, budget exhaustion, failure, or cancellation.

    Terminal failures surface via ``session.status``; a false
    ``should_continue`` cancels cleanly at the next step boundary with the
    session still resumable.
    """
    if session.status not in STEPPABLE_STATUSES:
        return session
    while True:
        if should_continue is not None and not should_continue():
            _trace(session, observer, "halt", {"reason": "cancelled", "status": session.status.value})
            break
        try:
            outcome = step(session, gateway, executor, observer=observer)
        except LimitReached:
            break
        except ActionParseFailure:
            break
        if outcome.halted:
            break
    return session
