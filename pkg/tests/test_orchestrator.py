import json

import pytest

from datasmith.domain import (
    CellKind,
    ExecStatus,
    ExecutionResult,
    Finish,
    ProjectSpec,
    RequestCode,
    RequestText,
    RunConfig,
    SessionStateError,
    SessionStatus,
    ToolMode,
    new_session,
)
from datasmith.gateway import BackendError, ToolCall, scripted_gateway
from datasmith.orchestrator import (
    ActionParseFailure,
    DEFAULT_FINISH_SUMMARY,
    FINISH_PREFIX,
    LimitReached,
    OrchestratorError,
    autorun,
    extract_code_block,
    retry_code_loop,
    step,
)


def tc(name, **fields):
    return ToolCall(name=name, arguments_json=json.dumps(fields))

TEXT_ACTION = tc("request_text", spec="Describe the evaluation metric.")
CODE_ACTION = tc("request_code", purpose="Load the dataset.")
FINISH_ACTION = tc("finish", summary_hint="All done, accuracy 0.9.")


def ok(stdout=""):
    return ExecutionResult(
        attempt=1, status=ExecStatus.SUCCESS, stdout=stdout, stderr="", duration_ms=5
    )


def err(stderr="boom"):
    return ExecutionResult(
        attempt=1, status=ExecStatus.ERROR, stdout="", stderr=stderr, duration_ms=5
    )


def timed_out():
    return ExecutionResult(
        attempt=1, status=ExecStatus.TIMEOUT, stdout="", stderr="killed", duration_ms=5
    )


class FakeExecutor:
    """Returns canned results in order and records what it was asked to run."""

    def __init__(self, results=()):
        self.results = list(results)
        self.calls = []

    def execute_cell(self, source, timeout_ms=None):
        self.calls.append((source, timeout_ms))
        return self.results.pop(0)


class RecordingGateway:
    def __init__(self, inner):
        self.inner = inner
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        return self.inner.complete(request)


def make_session(**config_kwargs):
    spec = ProjectSpec(task_description="Classify the widgets.")
    return new_session(spec, RunConfig(**config_kwargs), session_id="s-orch")


def gateway_for(orchestrator=(), text=(), code=()):
    from datasmith.gateway import AgentRole

    per_role = {}
    per_role[AgentRole.ORCHESTRATOR] = list(orchestrator) or ["unused"]
    per_role[AgentRole.TEXT] = list(text) or ["unused"]
    per_role[AgentRole.CODE] = list(code) or ["unused"]
    return scripted_gateway(per_role=per_role)


class TestExtractCodeBlock:
    def test_fenced_with_language(self):
        assert extract_code_block("```python\nx = 1\n```") == "x = 1"

    def test_fenced_without_language(self):
        assert extract_code_block("here\n```\ny = 2\n```\nthere") == "y = 2"

    def test_longer_fences(self):
        assert extract_code_block("````\nprint('```')\n````") == "print('```')"

    def test_first_fence_wins(self):
        text = "```\nfirst\n```\n```\nsecond\n```"
        assert extract_code_block(text) == "first"

    def test_no_fence_returns_stripped_reply(self):
        assert extract_code_block("  x = 1\n") == "x = 1"


class TestTextStep:
    def test_text_action_appends_a_text_cell(self):
        session = make_session()
        gateway = gateway_for(orchestrator=[TEXT_ACTION], text=["  We will use accuracy.  \n"])
        outcome = step(session, gateway, None)
        assert isinstance(outcome.action, RequestText)
        assert outcome.halted is False
        assert outcome.execution is None
        cell = outcome.cell
        assert cell.kind is CellKind.TEXT and cell.ordinal == 1
        assert cell.source == "We will use accuracy."
        assert cell.purpose_or_spec == "Describe the evaluation metric."
        assert session.status is SessionStatus.AWAITING_NEXT_STEP
        assert session.step_count == 1

    def test_text_agent_sees_transcript_plus_instruction(self):
        session = make_session()
        gateway = RecordingGateway(gateway_for(orchestrator=[TEXT_ACTION], text=["prose"]))
        step(session, gateway, None)
        text_request = gateway.requests[-1]
        assert text_request.role.value == "text"
        assert "Instruction\n===========" in text_request.rendered_context
        assert "Describe the evaluation metric." in text_request.rendered_context
        assert "Classify the widgets." in text_request.rendered_context

    def test_trace_records_render_action_and_cell(self):
        session = make_session()
        step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["prose"]), None)
        kinds = [record.kind for record in session.trace]
        assert kinds == ["render", "action", "cell_added"]
        render = session.trace[0]
        assert render.data["context"] == "orchestrator"
        assert set(render.data) == {"context", "untruncated_chars", "emitted_chars", "truncated"}
        action = session.trace[1]
        assert action.data == {
            "step": 1,
            "action": "request_text",
            "argument": "Describe the evaluation metric.",
        }
        assert [record.seq for record in session.trace] == [1, 2, 3]


class TestCodeStep:
    def test_code_action_extracts_runs_and_records(self):
        session = make_session()
        executor = FakeExecutor([ok("42\n")])
        gateway = gateway_for(
            orchestrator=[CODE_ACTION], code=["```python\nprint(42)\n```"]
        )
        outcome = step(session, gateway, executor)
        cell = outcome.cell
        assert cell.kind is CellKind.CODE
        assert cell.source == "print(42)"
        assert cell.purpose_or_spec == "Load the dataset."
        assert [r.attempt for r in cell.results] == [1]
        assert outcome.execution.ok and outcome.execution.stdout == "42\n"
        assert executor.calls == [("print(42)", session.config.cell_timeout_ms)]
        assert session.status is SessionStatus.AWAITING_NEXT_STEP

    def test_unfenced_reply_is_taken_raw(self):
        session = make_session()
        executor = FakeExecutor([ok()])
        step(session, gateway_for(orchestrator=[CODE_ACTION], code=["x = 1\n"]), executor)
        assert session.cells[0].source == "x = 1"

    def test_code_action_without_executor_is_an_error(self):
        session = make_session()
        with pytest.raises(OrchestratorError):
            step(session, gateway_for(orchestrator=[CODE_ACTION], code=["x"]), None)
        # Resumable, and the failed step did not burn budget.
        assert session.status is SessionStatus.IDLE
        assert session.step_count == 0


class TestRetryLoop:
    def test_failure_then_success_keeps_both_results(self):
        session = make_session()
        executor = FakeExecutor([err("NameError: x"), ok("fixed\n")])
        gateway = gateway_for(
            orchestrator=[CODE_ACTION],
            code=["bad code", "```python\ngood code\n```"],
        )
        outcome = step(session, gateway, executor)
        cell = outcome.cell
        assert cell.source == "good code"
        assert [r.attempt for r in cell.results] == [1, 2]
        assert [r.status for r in cell.results] == [ExecStatus.ERROR, ExecStatus.SUCCESS]
        assert outcome.execution.ok
        rewrite_records = [r for r in session.trace if r.kind == "rewrite"]
        assert len(rewrite_records) == 1
        assert rewrite_records[0].data == {
            "cell_id": 1,
            "attempt": 2,
            "prior_source": "bad code",
        }

    def test_budget_exhaustion_gives_exactly_four_attempts(self):
        session = make_session(max_code_retries=3)
        executor = FakeExecutor([err(), err(), err(), err()])
        gateway = gateway_for(
            orchestrator=[CODE_ACTION],
            code=["v1", "v2", "v3", "v4"],
        )
        outcome = step(session, gateway, executor)
        cell = outcome.cell
        assert len(cell.results) == 4
        assert [r.attempt for r in cell.results] == [1, 2, 3, 4]
        assert cell.final_result.status is ExecStatus.ERROR
        assert cell.source == "v4"
        # A failed cell is not a failed session.
        assert session.status is SessionStatus.AWAITING_NEXT_STEP
        assert executor.results == []

    def test_timeout_counts_as_failure(self):
        session = make_session()
        executor = FakeExecutor([timed_out(), ok()])
        gateway = gateway_for(orchestrator=[CODE_ACTION], code=["slow", "fast"])
        outcome = step(session, gateway, executor)
        assert [r.status for r in outcome.cell.results] == [
            ExecStatus.TIMEOUT,
            ExecStatus.SUCCESS,
        ]

    def test_zero_retries_means_single_attempt(self):
        session = make_session(max_code_retries=0)
        executor = FakeExecutor([err()])
        outcome = step(session, gateway_for(orchestrator=[CODE_ACTION], code=["v1"]), executor)
        assert len(outcome.cell.results) == 1

    def test_rewrite_context_mentions_purpose_and_shows_error(self):
        session = make_session()
        executor = FakeExecutor([err("ValueError: nope"), ok()])
        gateway = RecordingGateway(
            gateway_for(orchestrator=[CODE_ACTION], code=["v1", "v2"])
        )
        step(session, gateway, executor)
        rewrite_request = gateway.requests[-1]
        assert "Load the dataset." in rewrite_request.rendered_context
        assert "Error (tail):" in rewrite_request.rendered_context
        assert "ValueError: nope" in rewrite_request.rendered_context

    def test_loop_usable_directly(self):
        session = make_session()
        cell = None
        gateway = gateway_for(code=["better"])
        executor = FakeExecutor([err(), ok()])
        from datasmith.domain import append_cell

        cell = append_cell(session, CellKind.CODE, "orig", "do it")
        result = retry_code_loop(session, cell, gateway, executor)
        assert result.ok and cell.source == "better"


class TestFinishStep:
    def test_finish_closes_the_session(self):
        session = make_session()
        outcome = step(session, gateway_for(orchestrator=[FINISH_ACTION]), None)
        assert isinstance(outcome.action, Finish)
        assert outcome.halted is True
        cell = outcome.cell
        assert cell.kind is CellKind.FINISH
        assert cell.source == FINISH_PREFIX + "All done, accuracy 0.9."
        assert cell.purpose_or_spec == "All done, accuracy 0.9."
        assert session.status is SessionStatus.FINISHED
        with pytest.raises(SessionStateError):
            step(session, gateway_for(orchestrator=[FINISH_ACTION]), None)

    def test_blank_hint_gets_default_summary(self):
        session = make_session()
        outcome = step(session, gateway_for(orchestrator=[tc("finish")]), None)
        assert outcome.cell.source == FINISH_PREFIX + DEFAULT_FINISH_SUMMARY


class TestParseRecovery:
    def test_one_bad_reply_triggers_corrective_reask(self):
        session = make_session()
        gateway = RecordingGateway(
            gateway_for(orchestrator=["I think we should do X", TEXT_ACTION], text=["prose"])
        )
        outcome = step(session, gateway, None)
        assert isinstance(outcome.action, RequestText)
        retry_request = gateway.requests[1]
        assert "could not be used" in retry_request.rendered_context
        assert [r.kind for r in session.trace][:2] == ["render", "parse_retry"]

    def test_two_bad_replies_fail_the_session(self):
        session = make_session()
        gateway = gateway_for(orchestrator=["junk one", "junk two"])
        with pytest.raises(ActionParseFailure):
            step(session, gateway, None)
        assert session.status is SessionStatus.FAILED
        assert session.step_count == 0
        halt = session.trace[-1]
        assert halt.kind == "halt" and halt.data["reason"] == "action_parse"
        with pytest.raises(SessionStateError):
            step(session, gateway_for(orchestrator=[TEXT_ACTION]), None)


class TestLimits:
    def test_budget_spent_raises_and_stops(self):
        session = make_session(max_steps=2)
        session.step_count = 2
        with pytest.raises(LimitReached):
            step(session, gateway_for(), None)
        assert session.status is SessionStatus.STOPPED_MAX_STEPS
        assert session.trace[-1].data == {"reason": "max_steps", "status": "stopped_max_steps"}

    def test_stopped_session_raises_limit_again(self):
        session = make_session(max_steps=1)
        session.status = SessionStatus.STOPPED_MAX_STEPS
        with pytest.raises(LimitReached):
            step(session, gateway_for(), None)

    def test_last_allowed_step_halts_after_completing(self):
        session = make_session(max_steps=1)
        outcome = step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["p"]), None)
        assert outcome.halted is True
        assert session.status is SessionStatus.STOPPED_MAX_STEPS
        assert len(session.cells) == 1

    def test_raising_the_limit_reopens_a_stopped_session(self):
        session = make_session(max_steps=1)
        step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["p"]), None)
        assert session.status is SessionStatus.STOPPED_MAX_STEPS
        import dataclasses

        session.config = dataclasses.replace(session.config, max_steps=3)
        session.status = SessionStatus.AWAITING_NEXT_STEP
        outcome = step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["q"]), None)
        assert outcome.cell.ordinal == 2


class TestInfraErrors:
    def test_gateway_error_restores_status_and_budget(self):
        session = make_session()
        step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["p"]), None)
        assert session.status is SessionStatus.AWAITING_NEXT_STEP

        class ExplodingGateway:
            def complete(self, request):
                raise BackendError("backend down")

        with pytest.raises(BackendError):
            step(session, ExplodingGateway(), None)
        assert session.status is SessionStatus.AWAITING_NEXT_STEP
        assert session.step_count == 1
        assert len(session.cells) == 1
        # And the session still steps fine afterwards.
        step(session, gateway_for(orchestrator=[TEXT_ACTION], text=["again"]), None)
        assert len(session.cells) == 2

    def test_agent_failure_after_decision_restores_budget(self):
        session = make_session()

        class HalfGateway:
            def __init__(self):
                self.inner = gateway_for(orchestrator=[TEXT_ACTION])

            def complete(self, request):
                if request.role.value == "text":
                    raise BackendError("text agent down")
                return self.inner.complete(request)

        with pytest.raises(BackendError):
            step(session, HalfGateway(), None)
        assert session.step_count == 0
        assert session.cells == []


class TestEmulatedMode:
    def test_json_reply_routes_without_tools(self):
        session = make_session(tool_mode=ToolMode.EMULATED_JSON)
        reply = 'Sure. {"action": "request_text", "spec": "Explain the plan."}'
        gateway = RecordingGateway(gateway_for(orchestrator=[reply], text=["prose"]))
        outcome = step(session, gateway, None)
        assert outcome.action == RequestText(spec="Explain the plan.")
        orchestrator_request = gateway.requests[0]
        assert orchestrator_request.tools is None
        assert "JSON" in orchestrator_request.system_prompt

    def test_native_mode_sends_tool_definitions(self):
        session = make_session()
        gateway = RecordingGateway(gateway_for(orchestrator=[TEXT_ACTION], text=["p"]))
        step(session, gateway, None)
        names = [t["function"]["name"] for t in gateway.requests[0].tools]
        assert names == ["request_text", "request_code", "finish"]

    def test_legacy_finish_shape_still_routes(self):
        session = make_session(tool_mode=ToolMode.EMULATED_JSON)
        reply = '{"action": "finish", "purpose": "wrap up"}'
        outcome = step(session, gateway_for(orchestrator=[reply]), None)
        assert outcome.action == Finish(summary_hint="wrap up")
        assert session.status is SessionStatus.FINISHED


class TestAutorun:
    def test_runs_to_finish(self):
        session = make_session()
        gateway = gateway_for(
            orchestrator=[TEXT_ACTION, CODE_ACTION, FINISH_ACTION],
            text=["The plan."],
            code=["print('hello')"],
        )
        executor = FakeExecutor([ok("hello\n")])
        autorun(session, gateway, executor)
        assert session.status is SessionStatus.FINISHED
        assert [c.kind for c in session.cells] == [
            CellKind.TEXT,
            CellKind.CODE,
            CellKind.FINISH,
        ]
        assert session.step_count == 3

    def test_stops_at_budget_without_raising(self):
        session = make_session(max_steps=2)
        gateway = gateway_for(
            orchestrator=[TEXT_ACTION, TEXT_ACTION], text=["one", "two"]
        )
        autorun(session, gateway, None)
        assert session.status is SessionStatus.STOPPED_MAX_STEPS
        assert len(session.cells) == 2

    def test_swallow_parse_failure_status_tells_the_story(self):
        session = make_session()
        autorun(session, gateway_for(orchestrator=["junk", "junk"]), None)
        assert session.status is SessionStatus.FAILED

    def test_infra_errors_propagate(self):
        session = make_session()

        class ExplodingGateway:
            def complete(self, request):
                raise BackendError("down")

        with pytest.raises(BackendError):
            autorun(session, ExplodingGateway(), None)

    def test_noop_on_terminal_session(self):
        session = make_session()
        session.status = SessionStatus.FINISHED

        class MustNotBeCalled:
            def complete(self, request):
                raise AssertionError("gateway used on a finished session")

        autorun(session, MustNotBeCalled(), None)
        assert session.status is SessionStatus.FINISHED

    def test_cancellation_between_steps(self):
        session = make_session()
        gateway = gateway_for(
            orchestrator=[TEXT_ACTION, TEXT_ACTION, TEXT_ACTION],
            text=["a", "b", "c"],
        )
        checks = iter([True, False])
        autorun(session, gateway, None, should_continue=lambda: next(checks))
        assert len(session.cells) == 1
        assert session.status is SessionStatus.AWAITING_NEXT_STEP
        halt = session.trace[-1]
        assert halt.kind == "halt" and halt.data["reason"] == "cancelled"
