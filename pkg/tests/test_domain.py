import random
from datetime import datetime, timezone

import pytest

from datasmith.domain import (
    AgentSettings,
    Cell,
    CellKind,
    DomainError,
    ExecStatus,
    ExecutionResult,
    InvalidConfig,
    InvalidSpec,
    ProjectSpec,
    RunConfig,
    SessionStateError,
    SessionStatus,
    add_trace,
    append_cell,
    fixed_clock,
    new_session,
    renumber_attempt,
    reset_session,
    update_config,
)

CLOCK_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_session(**kwargs):
    return new_session(
        ProjectSpec(task_description="t"),
        kwargs.pop("config", None),
        clock=fixed_clock(CLOCK_START),
        **kwargs,
    )


class TestProjectSpec:
    def test_requires_task_description(self):
        with pytest.raises(InvalidSpec):
            ProjectSpec(task_description="")
        with pytest.raises(InvalidSpec):
            ProjectSpec(task_description="   ")

    def test_rejects_control_characters_in_data_location(self):
        with pytest.raises(InvalidSpec):
            ProjectSpec(task_description="t", data_location="a\x00b")
        with pytest.raises(InvalidSpec):
            ProjectSpec(task_description="t", data_location="a\nb")

    def test_accepts_paths_and_uris(self):
        ProjectSpec(task_description="t", data_location="/data/train.csv")
        ProjectSpec(task_description="t", data_location="s3://bucket/key.parquet")

    def test_general_instructions_keep_order(self):
        spec = ProjectSpec(
            task_description="t",
            general_instructions=(("b", "2"), ("a", "1")),
        )
        assert spec.general_instructions == (("b", "2"), ("a", "1"))


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.max_steps == 30
        assert config.max_code_retries == 3
        assert config.history_char_limit == 10_000
        assert config.head_tail_lines == 20
        assert config.cell_timeout_ms == 120_000
        assert config.network_enabled is False

    def test_role_temperatures(self):
        config = RunConfig()
        assert config.orchestrator.temperature == 0.2
        assert config.text_agent.temperature == 0.4
        assert config.code_agent.temperature == 0.0

    def test_temperature_bounds(self):
        AgentSettings(temperature=0.0)
        AgentSettings(temperature=2.0)
        with pytest.raises(InvalidConfig):
            AgentSettings(temperature=-0.1)
        with pytest.raises(InvalidConfig):
            AgentSettings(temperature=2.1)

    def test_rejects_nonsense(self):
        with pytest.raises(InvalidConfig):
            RunConfig(max_steps=0)
        with pytest.raises(InvalidConfig):
            RunConfig(max_code_retries=-1)
        with pytest.raises(InvalidConfig):
            RunConfig(history_char_limit=0)
        with pytest.raises(InvalidConfig):
            RunConfig(cell_timeout_ms=0)


class TestExecutionResult:
    def test_error_requires_stderr(self):
        with pytest.raises(DomainError):
            ExecutionResult(
                attempt=1, status=ExecStatus.ERROR, stdout="", stderr="", duration_ms=1
            )

    def test_attempt_numbering_starts_at_one(self):
        with pytest.raises(DomainError):
            ExecutionResult(
                attempt=0, status=ExecStatus.SUCCESS, stdout="", stderr="", duration_ms=1
            )

    def test_renumber_attempt(self):
        result = ExecutionResult(
            attempt=1, status=ExecStatus.SUCCESS, stdout="x", stderr="", duration_ms=3
        )
        moved = renumber_attempt(result, 4)
        assert moved.attempt == 4
        assert moved.stdout == "x"
        assert result.attempt == 1


class TestCells:
    def test_ids_and_per_kind_ordinals(self):
        session = make_session()
        kinds = [
            CellKind.TEXT,
            CellKind.CODE,
            CellKind.TEXT,
            CellKind.CODE,
            CellKind.CODE,
            CellKind.TEXT,
        ]
        cells = [append_cell(session, kind, "src") for kind in kinds]
        assert [cell.id for cell in cells] == [1, 2, 3, 4, 5, 6]
        assert [c.ordinal for c in cells if c.kind is CellKind.TEXT] == [1, 2, 3]
        assert [c.ordinal for c in cells if c.kind is CellKind.CODE] == [1, 2, 3]

    def test_ordinals_fuzz(self):
        rng = random.Random(7)
        session = make_session()
        seen = {kind: 0 for kind in CellKind}
        previous_id = 0
        for _ in range(300):
            kind = rng.choice([CellKind.TEXT, CellKind.CODE])
            cell = append_cell(session, kind, "s")
            seen[kind] += 1
            assert cell.ordinal == seen[kind]
            assert cell.id == previous_id + 1
            previous_id = cell.id

    def test_created_at_from_injected_clock(self):
        session = make_session()
        cell = append_cell(session, CellKind.TEXT, "s")
        assert cell.created_at == CLOCK_START

    def test_only_code_cells_take_results(self):
        session = make_session()
        text = append_cell(session, CellKind.TEXT, "s")
        ok = ExecutionResult(
            attempt=1, status=ExecStatus.SUCCESS, stdout="", stderr="", duration_ms=1
        )
        with pytest.raises(DomainError):
            text.add_result(ok)
        code = append_cell(session, CellKind.CODE, "s")
        code.add_result(ok)
        with pytest.raises(DomainError):
            code.add_result(renumber_attempt(ok, 5))

    def test_append_blocked_on_closed_sessions(self):
        session = make_session()
        session.status = SessionStatus.FINISHED
        with pytest.raises(SessionStateError):
            append_cell(session, CellKind.TEXT, "s")
        session.status = SessionStatus.FAILED
        with pytest.raises(SessionStateError):
            append_cell(session, CellKind.TEXT, "s")
        # A budget-stopped session may continue if the budget is raised.
        session.status = SessionStatus.STOPPED_MAX_STEPS
        append_cell(session, CellKind.TEXT, "s")


class TestSessionLifecycle:
    def test_new_session_is_idle_and_empty(self):
        session = make_session()
        assert session.status is SessionStatus.IDLE
        assert session.cells == []
        assert session.step_count == 0

    def test_session_ids_unique_by_default(self):
        a = new_session(ProjectSpec(task_description="t"))
        b = new_session(ProjectSpec(task_description="t"))
        assert a.session_id != b.session_id

    def test_reset_restores_fresh_observable_state(self):
        session = make_session()
        append_cell(session, CellKind.TEXT, "s")
        add_trace(session, "action", {"a": 1})
        session.step_count = 1
        session.status = SessionStatus.AWAITING_NEXT_STEP
        spec, config, sid = session.spec, session.config, session.session_id
        reset_session(session)
        assert session.cells == []
        assert session.trace == []
        assert session.step_count == 0
        assert session.status is SessionStatus.IDLE
        assert (session.spec, session.config, session.session_id) == (spec, config, sid)

    def test_reset_of_fresh_session_is_identity(self):
        session = make_session()
        before = (session.session_id, session.spec, session.config, list(session.cells))
        reset_session(session)
        after = (session.session_id, session.spec, session.config, list(session.cells))
        assert before == after

    def test_update_config_only_while_idle(self):
        session = make_session()
        update_config(session, RunConfig(max_steps=5))
        assert session.config.max_steps == 5
        session.status = SessionStatus.AWAITING_NEXT_STEP
        with pytest.raises(SessionStateError):
            update_config(session, RunConfig())

    def test_trace_sequence_numbers(self):
        session = make_session()
        first = add_trace(session, "render", {"chars": 10})
        second = add_trace(session, "action", {"action": "finish"})
        assert (first.seq, second.seq) == (1, 2)
        assert second.timestamp > first.timestamp
