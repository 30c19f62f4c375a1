"""Core data model for orchestrated analysis sessions.

Everything here is plain in-memory state: the project brief, the growing
list of notebook-style cells, per-cell execution results, run settings,
and the session state machine.  Serialization lives in ``assets``;
LLM traffic lives in ``gateway``; nothing in this module does I/O.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

# A clock is any zero-argument callable returning an aware datetime.  The
# default uses the wall clock; tests and replayable runs inject a fixed or
# stepping clock so two runs of the same script produce identical bytes.
Clock = Callable[[], datetime]


def system_clock() -> datetime:
    return datetime.now(timezone.utc)


class DomainError(Exception):
    """Base class for model-level rule violations."""


class InvalidSpec(DomainError):
    pass


class InvalidConfig(DomainError):
    pass


class SessionStateError(DomainError):
    """An operation was attempted in a status that forbids it."""


class CellKind(str, Enum):
    TEXT = "text"
    CODE = "code"
    FINISH = "finish"


class ExecStatus(str, Enum):
    SUCCESS = "success"
    ERROR = "error"
    TIMEOUT = "timeout"


class SessionStatus(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    AWAITING_NEXT_STEP = "awaiting_next_step"
    FINISHED = "finished"
    STOPPED_MAX_STEPS = "stopped_max_steps"
    FAILED = "failed"


#: Statuses in which no further cells may be appended.
CLOSED_STATUSES = frozenset({SessionStatus.FINISHED, SessionStatus.FAILED})

#: Statuses from which stepping may proceed.
STEPPABLE_STATUSES = frozenset({SessionStatus.IDLE, SessionStatus.AWAITING_NEXT_STEP})


class ToolMode(str, Enum):
    """How orchestrator decisions are carried on the wire.

    ``NATIVE_TOOL_CALLS`` uses the chat API's structured tool-call channel;
    ``EMULATED_JSON`` asks for a JSON object in plain text and extracts the
    first syntactically valid one from the reply.
    """

    NATIVE_TOOL_CALLS = "native_tool_calls"
    EMULATED_JSON = "emulated_json"


@dataclass(frozen=True)
class ProjectSpec:
    """Structured statement of what the run should accomplish.

    ``task_description`` is the only mandatory field.  ``general_instructions``
    is an ordered list of (key, value) pairs so reruns render it in a stable
    order; everything else is free text that is shown to the agents verbatim.
    """

    task_description: str
    general_instructions: tuple[tuple[str, str], ...] = ()
    data_description: str = ""
    data_location: str = ""
    metrics: str = ""
    inputs: str = ""
    outputs: str = ""
    special_instructions: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.task_description, str) or not self.task_description.strip():
            raise InvalidSpec("task_description must be a non-empty string")
        object.__setattr__(
            self,
            "general_instructions",
            tuple((str(k), str(v)) for k, v in self.general_instructions),
        )
        for name in (
            "data_description",
            "data_location",
            "metrics",
            "inputs",
            "outputs",
            "special_instructions",
        ):
            if not isinstance(getattr(self, name), str):
                raise InvalidSpec(f"{name} must be a string")
        # Syntactic check only: a path or URI never embeds NUL or newlines.
        # Existence is checked at sandbox-open time, not here.
        location = self.data_location
        if "\x00" in location or "\n" in location or "\r" in location:
            raise InvalidSpec("data_location is not a valid path or URI")


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of one attempt at running a code cell."""

    attempt: int
    status: ExecStatus
    stdout: str
    stderr: str
    duration_ms: int
    artifacts_written: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.attempt < 1:
            raise DomainError("attempt numbering starts at 1")
        if self.duration_ms < 0:
            raise DomainError("duration_ms must be non-negative")
        if self.status is ExecStatus.ERROR and not self.stderr:
            raise DomainError("an error result must carry non-empty stderr")
        object.__setattr__(self, "artifacts_written", tuple(self.artifacts_written))

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.SUCCESS


@dataclass
class Cell:
    """One notebook-style block: prose, code, or the closing summary.

    ``ordinal`` counts 1-based within the cell's own kind, so transcripts can
    say "Text #2" and "Code #5" independently.  A code cell keeps every
    execution attempt in ``results``; its ``source`` is the latest rewrite
    (earlier sources survive in the session trace).
    """

    id: int
    kind: CellKind
    ordinal: int
    source: str
    purpose_or_spec: str
    created_at: datetime
    results: list[ExecutionResult] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.id < 1:
            raise DomainError("cell ids start at 1")
        if self.ordinal < 1:
            raise DomainError("cell ordinals start at 1")
        if self.kind is not CellKind.CODE and self.results:
            raise DomainError("only code cells carry execution results")

    @property
    def final_result(self) -> Optional[ExecutionResult]:
        return self.results[-1] if self.results else None

    def add_result(self, result: ExecutionResult) -> None:
        if self.kind is not CellKind.CODE:
            raise DomainError("only code cells carry execution results")
        expected = len(self.results) + 1
        if result.attempt != expected:
            raise DomainError(f"expected attempt {expected}, got {result.attempt}")
        self.results.append(result)


@dataclass(frozen=True)
class RequestText:
    """Ask the text agent to write prose; ``spec`` says what to cover."""

    spec: str


@dataclass(frozen=True)
class RequestCode:
    """Ask the code agent for a cell; ``purpose`` says what it must achieve."""

    purpose: str


@dataclass(frozen=True)
class Finish:
    """Declare the task done; ``summary_hint`` seeds the closing summary."""

    summary_hint: str = ""


OrchestratorAction = Union[RequestText, RequestCode, Finish]


@dataclass(frozen=True)
class AgentSettings:
    """Per-agent model binding.  Empty model id defers to the backend default."""

    model: str = ""
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidConfig("temperature must be within [0, 2]")


@dataclass(frozen=True)
class RunConfig:
    """Knobs governing one session.

    Defaults follow the reference operating point: 30 steps, 3 code retries,
    a 10k-character history budget, and 20-line output heads and error tails.
    Temperatures: the router decides best near-deterministically (0.2), prose
    benefits from some variety (0.4), and code is most reliable greedy (0.0).
    """

    max_steps: int = 30
    max_code_retries: int = 3
    history_char_limit: int = 10_000
    head_tail_lines: int = 20
    orchestrator: AgentSettings = field(default_factory=lambda: AgentSettings(temperature=0.2))
    text_agent: AgentSettings = field(default_factory=lambda: AgentSettings(temperature=0.4))
    code_agent: AgentSettings = field(default_factory=lambda: AgentSettings(temperature=0.0))
    tool_mode: ToolMode = ToolMode.NATIVE_TOOL_CALLS
    cell_timeout_ms: int = 120_000
    network_enabled: bool = False

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise InvalidConfig("max_steps must be at least 1")
        if self.max_code_retries < 0:
            raise InvalidConfig("max_code_retries must be non-negative")
        if self.history_char_limit < 1:
            raise InvalidConfig("history_char_limit must be positive")
        if self.head_tail_lines < 0:
            raise InvalidConfig("head_tail_lines must be non-negative")
        if self.cell_timeout_ms < 1:
            raise InvalidConfig("cell_timeout_ms must be positive")
        if not isinstance(self.tool_mode, ToolMode):
            raise InvalidConfig("tool_mode must be a ToolMode")


@dataclass(frozen=True)
class TraceRecord:
    """One append-only audit entry: decisions, renders, executions, halts."""

    seq: int
    timestamp: datetime
    kind: str
    data: Mapping[str, object]

    def __post_init__(self) -> None:
        if self.seq < 1:
            raise DomainError("trace sequence numbers start at 1")
        object.__setattr__(self, "data", dict(self.data))


@dataclass
class Session:
    """A full run: brief, settings, transcript, and state machine position."""

    session_id: str
    spec: ProjectSpec
    config: RunConfig
    cells: list[Cell] = field(default_factory=list)
    status: SessionStatus = SessionStatus.IDLE
    step_count: int = 0
    trace: list[TraceRecord] = field(default_factory=list)
    clock: Clock = field(default=system_clock, repr=False, compare=False)

    @property
    def last_cell(self) -> Optional[Cell]:
        return self.cells[-1] if self.cells else None

    def cells_of_kind(self, kind: CellKind) -> list[Cell]:
        return [cell for cell in self.cells if cell.kind is kind]


def new_session(
    spec: ProjectSpec,
    config: Optional[RunConfig] = None,
    *,
    session_id: Optional[str] = None,
    clock: Clock = system_clock,
) -> Session:
    """Create an Idle session with no cells.

    ``session_id`` and ``clock`` are injectable so a rerun of the same inputs
    can reproduce a prior run byte for byte; by default ids are random UUIDs
    and timestamps come from the wall clock.
    """
    return Session(
        session_id=session_id if session_id is not None else str(uuid.uuid4()),
        spec=spec,
        config=config if config is not None else RunConfig(),
        clock=clock,
    )


def append_cell(
    session: Session,
    kind: CellKind,
    source: str,
    purpose_or_spec: str = "",
) -> Cell:
    """Add a cell, assigning the next id and the next per-kind ordinal."""
    if session.status in CLOSED_STATUSES:
        raise SessionStateError(f"cannot append to a {session.status.value} session")
    last = session.last_cell
    cell = Cell(
        id=(last.id + 1) if last is not None else 1,
        kind=kind,
        ordinal=len(session.cells_of_kind(kind)) + 1,
        source=source,
        purpose_or_spec=purpose_or_spec,
        created_at=session.clock(),
    )
    session.cells.append(cell)
    return cell


def reset_session(session: Session) -> Session:
    """Drop the transcript and counters; keep the brief, settings, and id.

    A reset session is observably identical to a freshly created one with the
    same id, spec, and config.
    """
    session.cells.clear()
    session.trace.clear()
    session.step_count = 0
    session.status = SessionStatus.IDLE
    return session


def update_config(session: Session, config: RunConfig) -> Session:
    """Swap run settings; allowed only before the first step."""
    if session.status is not SessionStatus.IDLE:
        raise SessionStateError("config can only change while the session is idle")
    session.config = config
    return session


def add_trace(session: Session, kind: str, data: Mapping[str, object]) -> TraceRecord:
    record = TraceRecord(
        seq=len(session.trace) + 1,
        timestamp=session.clock(),
        kind=kind,
        data=data,
    )
    session.trace.append(record)
    return record


def renumber_attempt(result: ExecutionResult, attempt: int) -> ExecutionResult:
    """Copy a result under a new attempt number (used by the retry loop)."""
    return replace(result, attempt=attempt)


def fixed_clock(start: datetime, step_ms: int = 1000) -> Clock:
    """A deterministic clock: starts at ``start``, advances ``step_ms`` per call.

    >>> from datetime import datetime, timezone
    >>> tick = fixed_clock(datetime(2024, 1, 1, tzinfo=timezone.utc))
    >>> tick().isoformat()
    '2024-01-01T00:00:00+00:00'
    >>> tick().isoformat()
    '2024-01-01T00:00:01+00:00'
    """
    from datetime import timedelta

    state = {"now": start}

    def tick() -> datetime:
        now = state["now"]
        state["now"] = now + timedelta(milliseconds=step_ms)
        return now

    return tick
