"""Durable forms of a session: run files, exports, and the assets directory.

The run file is the single source of truth for persistence and transfer.
It is canonical JSON (sorted keys, two-space indent, UTF-8, trailing
newline), so saving, loading, and saving again reproduces the same bytes
and run files diff cleanly under version control.

The assets directory is the only place sessions write to disk:

    assets/
      spec.json        project brief, canonical JSON (overwrite)
      metrics.ndjson   one JSON object per recorded metric (append-only)
      model_card.md    most recent model summary (overwrite)
      debug.log        timestamped engine log (append-only)
      plots/           figures saved by code cells
      runs/            run file + Markdown/notebook exports
"""

from __future__ import annotations

import json
import numbers
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Union

from .domain import (
    AgentSettings,
    Cell,
    CellKind,
    Clock,
    DomainError,
    ExecStatus,
    ExecutionResult,
    ProjectSpec,
    RunConfig,
    Session,
    SessionStatus,
    ToolMode,
    TraceRecord,
    system_clock,
)

RUN_FILE_VERSION = 1


class SchemaViolation(ValueError):
    """A run file failed validation; the message pinpoints the field."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class VersionUnknown(ValueError):
    pass


# -- timestamps -------------------------------------------------------------

_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{6}Z$")


def format_timestamp(dt: datetime) -> str:
    """UTC, microsecond precision, Z suffix: the one timestamp form on disk."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"


def parse_timestamp(text: str, path: str) -> datetime:
    if not isinstance(text, str) or not _TIMESTAMP_RE.match(text):
        raise SchemaViolation(path, f"not a UTC timestamp of the expected form: {text!r}")
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


# -- canonical JSON ---------------------------------------------------------


def canonical_json_bytes(doc: object) -> bytes:
    return (json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n").encode("utf-8")


# -- session <-> dict -------------------------------------------------------


def _spec_to_dict(spec: ProjectSpec) -> dict:
    return {
        "task_description": spec.task_description,
        "general_instructions": [[k, v] for k, v in spec.general_instructions],
        "data_description": spec.data_description,
        "data_location": spec.data_location,
        "metrics": spec.metrics,
        "inputs": spec.inputs,
        "outputs": spec.outputs,
        "special_instructions": spec.special_instructions,
    }


def _agent_to_dict(settings: AgentSettings) -> dict:
    return {"model": settings.model, "temperature": settings.temperature}


def _config_to_dict(config: RunConfig) -> dict:
    return {
        "max_steps": config.max_steps,
        "max_code_retries": config.max_code_retries,
        "history_char_limit": config.history_char_limit,
        "head_tail_lines": config.head_tail_lines,
        "orchestrator": _agent_to_dict(config.orchestrator),
        "text_agent": _agent_to_dict(config.text_agent),
        "code_agent": _agent_to_dict(config.code_agent),
        "tool_mode": config.tool_mode.value,
        "cell_timeout_ms": config.cell_timeout_ms,
        "network_enabled": config.network_enabled,
    }


def _result_to_dict(result: ExecutionResult) -> dict:
    return {
        "attempt": result.attempt,
        "status": result.status.value,
        "stdout": result.stdout,
        "stderr": result.stderr,
        "duration_ms": result.duration_ms,
        "artifacts_written": list(result.artifacts_written),
    }


def _cell_to_dict(cell: Cell) -> dict:
    return {
        "id": cell.id,
        "kind": cell.kind.value,
        "ordinal": cell.ordinal,
        "source": cell.source,
        "purpose_or_spec": cell.purpose_or_spec,
        "created_at": format_timestamp(cell.created_at),
        "results": [_result_to_dict(r) for r in cell.results],
    }


def _trace_to_dict(record: TraceRecord) -> dict:
    return {
        "seq": record.seq,
        "timestamp": format_timestamp(record.timestamp),
        "kind": record.kind,
        "data": dict(record.data),
    }


def session_to_dict(session: Session) -> dict:
    """The run-file document.  A mid-step session is stored as resumable:
    Running demotes to AwaitingNextStep, because a run file never resumes
    into the middle of a step."""
    status = session.status
    if status is SessionStatus.RUNNING:
        status = SessionStatus.AWAITING_NEXT_STEP
    return {
        "format_version": RUN_FILE_VERSION,
        "session_id": session.session_id,
        "spec": _spec_to_dict(session.spec),
        "config": _config_to_dict(session.config),
        "status": status.value,
        "step_count": session.step_count,
        "cells": [_cell_to_dict(c) for c in session.cells],
        "trace": [_trace_to_dict(t) for t in session.trace],
    }


def _expect_mapping(value: object, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolation(path, f"expected an object, got {type(value).__name__}")
    return value


def _expect_list(value: object, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaViolation(path, f"expected an array, got {type(value).__name__}")
    return value


def _get(obj: dict, key: str, path: str) -> object:
    if key not in obj:
        raise SchemaViolation(f"{path}/{key}", "missing required field")
    return obj[key]


def _get_str(obj: dict, key: str, path: str) -> str:
    value = _get(obj, key, path)
    if not isinstance(value, str):
        raise SchemaViolation(f"{path}/{key}", f"expected a string, got {type(value).__name__}")
    return value


def _get_int(obj: dict, key: str, path: str) -> int:
    value = _get(obj, key, path)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"{path}/{key}", f"expected an integer, got {type(value).__name__}")
    return value


def _get_number(obj: dict, key: str, path: str) -> float:
    value = _get(obj, key, path)
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise SchemaViolation(f"{path}/{key}", f"expected a number, got {type(value).__name__}")
    return float(value)


def _get_bool(obj: dict, key: str, path: str) -> bool:
    value = _get(obj, key, path)
    if not isinstance(value, bool):
        raise SchemaViolation(f"{path}/{key}", f"expected a boolean, got {type(value).__name__}")
    return value


def _reject_unknown(obj: dict, allowed: set, path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise SchemaViolation(path, f"unknown field(s): {', '.join(unknown)}")


def _spec_from_dict(doc: object, path: str) -> ProjectSpec:
    obj = _expect_mapping(doc, path)
    _reject_unknown(
        obj,
        {
            "task_description",
            "general_instructions",
            "data_description",
            "data_location",
            "metrics",
            "inputs",
            "outputs",
            "special_instructions",
        },
        path,
    )
    pairs = []
    for i, item in enumerate(_expect_list(_get(obj, "general_instructions", path), f"{path}/general_instructions")):
        pair = _expect_list(item, f"{path}/general_instructions/{i}")
        if len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise SchemaViolation(
                f"{path}/general_instructions/{i}", "expected a [key, value] pair of strings"
            )
        pairs.append((pair[0], pair[1]))
    try:
        return ProjectSpec(
            task_description=_get_str(obj, "task_description", path),
            general_instructions=tuple(pairs),
            data_description=_get_str(obj, "data_description", path),
            data_location=_get_str(obj, "data_location", path),
            metrics=_get_str(obj, "metrics", path),
            inputs=_get_str(obj, "inputs", path),
            outputs=_get_str(obj, "outputs", path),
            special_instructions=_get_str(obj, "special_instructions", path),
        )
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def _agent_from_dict(doc: object, path: str) -> AgentSettings:
    obj = _expect_mapping(doc, path)
    _reject_unknown(obj, {"model", "temperature"}, path)
    try:
        return AgentSettings(
            model=_get_str(obj, "model", path),
            temperature=_get_number(obj, "temperature", path),
        )
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def _config_from_dict(doc: object, path: str) -> RunConfig:
    obj = _expect_mapping(doc, path)
    _reject_unknown(
        obj,
        {
            "max_steps",
            "max_code_retries",
            "history_char_limit",
            "head_tail_lines",
            "orchestrator",
            "text_agent",
            "code_agent",
            "tool_mode",
            "cell_timeout_ms",
            "network_enabled",
        },
        path,
    )
    mode_text = _get_str(obj, "tool_mode", path)
    try:
        mode = ToolMode(mode_text)
    except ValueError:
        raise SchemaViolation(f"{path}/tool_mode", f"unknown tool mode {mode_text!r}") from None
    try:
        return RunConfig(
            max_steps=_get_int(obj, "max_steps", path),
            max_code_retries=_get_int(obj, "max_code_retries", path),
            history_char_limit=_get_int(obj, "history_char_limit", path),
            head_tail_lines=_get_int(obj, "head_tail_lines", path),
            orchestrator=_agent_from_dict(_get(obj, "orchestrator", path), f"{path}/orchestrator"),
            text_agent=_agent_from_dict(_get(obj, "text_agent", path), f"{path}/text_agent"),
            code_agent=_agent_from_dict(_get(obj, "code_agent", path), f"{path}/code_agent"),
            tool_mode=mode,
            cell_timeout_ms=_get_int(obj, "cell_timeout_ms", path),
            network_enabled=_get_bool(obj, "network_enabled", path),
        )
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def _result_from_dict(doc: object, path: str) -> ExecutionResult:
    obj = _expect_mapping(doc, path)
    _reject_unknown(
        obj, {"attempt", "status", "stdout", "stderr", "duration_ms", "artifacts_written"}, path
    )
    status_text = _get_str(obj, "status", path)
    try:
        status = ExecStatus(status_text)
    except ValueError:
        raise SchemaViolation(f"{path}/status", f"unknown status {status_text!r}") from None
    artifacts = []
    for i, item in enumerate(_expect_list(_get(obj, "artifacts_written", path), f"{path}/artifacts_written")):
        if not isinstance(item, str):
            raise SchemaViolation(f"{path}/artifacts_written/{i}", "expected a string")
        artifacts.append(item)
    try:
        return ExecutionResult(
            attempt=_get_int(obj, "attempt", path),
            status=status,
            stdout=_get_str(obj, "stdout", path),
            stderr=_get_str(obj, "stderr", path),
            duration_ms=_get_int(obj, "duration_ms", path),
            artifacts_written=tuple(artifacts),
        )
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def _cell_from_dict(doc: object, path: str) -> Cell:
    obj = _expect_mapping(doc, path)
    _reject_unknown(
        obj, {"id", "kind", "ordinal", "source", "purpose_or_spec", "created_at", "results"}, path
    )
    kind_text = _get_str(obj, "kind", path)
    try:
        kind = CellKind(kind_text)
    except ValueError:
        raise SchemaViolation(f"{path}/kind", f"unknown cell kind {kind_text!r}") from None
    results = [
        _result_from_dict(item, f"{path}/results/{i}")
        for i, item in enumerate(_expect_list(_get(obj, "results", path), f"{path}/results"))
    ]
    try:
        cell = Cell(
            id=_get_int(obj, "id", path),
            kind=kind,
            ordinal=_get_int(obj, "ordinal", path),
            source=_get_str(obj, "source", path),
            purpose_or_spec=_get_str(obj, "purpose_or_spec", path),
            created_at=parse_timestamp(_get(obj, "created_at", path), f"{path}/created_at"),
        )
        for i, result in enumerate(results):
            if result.attempt != i + 1:
                raise SchemaViolation(
                    f"{path}/results/{i}/attempt", f"expected consecutive attempt {i + 1}"
                )
            cell.add_result(result)
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc
    return cell


def _trace_from_dict(doc: object, path: str) -> TraceRecord:
    obj = _expect_mapping(doc, path)
    _reject_unknown(obj, {"seq", "timestamp", "kind", "data"}, path)
    try:
        return TraceRecord(
            seq=_get_int(obj, "seq", path),
            timestamp=parse_timestamp(_get(obj, "timestamp", path), f"{path}/timestamp"),
            kind=_get_str(obj, "kind", path),
            data=_expect_mapping(_get(obj, "data", path), f"{path}/data"),
        )
    except DomainError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def session_from_dict(doc: object, *, clock: Clock = system_clock) -> Session:
    """Validate a run-file document fully and rebuild the session.

    Every violation names the offending field with a JSON-pointer-like path,
    e.g. ``/cells/3/kind``.
    """
    obj = _expect_mapping(doc, "")
    if "format_version" not in obj:
        raise SchemaViolation("/format_version", "missing required field")
    version = obj["format_version"]
    if version != RUN_FILE_VERSION:
        raise VersionUnknown(f"unsupported run-file format_version: {version!r}")
    _reject_unknown(
        obj,
        {"format_version", "session_id", "spec", "config", "status", "step_count", "cells", "trace"},
        "",
    )
    status_text = _get_str(obj, "status", "")
    try:
        status = SessionStatus(status_text)
    except ValueError:
        raise SchemaViolation("/status", f"unknown status {status_text!r}") from None
    if status is SessionStatus.RUNNING:
        # No mid-step resume: a file captured during a step loads as resumable.
        status = SessionStatus.AWAITING_NEXT_STEP
    session_id = _get_str(obj, "session_id", "")
    if not session_id:
        raise SchemaViolation("/session_id", "must be non-empty")
    config = _config_from_dict(_get(obj, "config", ""), "/config")
    cells = [
        _cell_from_dict(item, f"/cells/{i}")
        for i, item in enumerate(_expect_list(_get(obj, "cells", ""), "/cells"))
    ]
    previous_id = 0
    kind_counts = {kind: 0 for kind in CellKind}
    for i, cell in enumerate(cells):
        if cell.id <= previous_id:
            raise SchemaViolation(f"/cells/{i}/id", "cell ids must be strictly increasing")
        previous_id = cell.id
        kind_counts[cell.kind] += 1
        if cell.ordinal != kind_counts[cell.kind]:
            raise SchemaViolation(
                f"/cells/{i}/ordinal",
                f"expected per-kind ordinal {kind_counts[cell.kind]}, got {cell.ordinal}",
            )
    step_count = _get_int(obj, "step_count", "")
    if step_count < 0:
        raise SchemaViolation("/step_count", "must be non-negative")
    if step_count > config.max_steps:
        raise SchemaViolation("/step_count", "exceeds config.max_steps")
    if status is SessionStatus.FINISHED:
        if not cells or cells[-1].kind is not CellKind.FINISH:
            raise SchemaViolation("/status", "finished sessions must end with a finish cell")
    trace = [
        _trace_from_dict(item, f"/trace/{i}")
        for i, item in enumerate(_expect_list(_get(obj, "trace", ""), "/trace"))
    ]
    for i, record in enumerate(trace):
        if record.seq != i + 1:
            raise SchemaViolation(f"/trace/{i}/seq", f"expected consecutive seq {i + 1}")
    session = Session(
        session_id=session_id,
        spec=_spec_from_dict(_get(obj, "spec", ""), "/spec"),
        config=config,
        cells=cells,
        status=status,
        step_count=step_count,
        trace=trace,
        clock=clock,
    )
    return session


def save_run(session: Session) -> bytes:
    """Canonical run-file bytes for the session."""
    doc = session_to_dict(session)
    try:
        return canonical_json_bytes(doc)
    except TypeError as exc:
        raise SchemaViolation("/trace", f"not JSON-serializable: {exc}") from exc


def load_run(data: Union[bytes, str], *, clock: Clock = system_clock) -> Session:
    """Parse and validate run-file bytes back into a session."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise SchemaViolation("", f"not valid JSON: {exc}") from exc
    return session_from_dict(doc, clock=clock)


# -- Markdown export --------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".svg", ".gif")


def _fence_for(content: str) -> str:
    """A backtick fence strictly longer than any run inside the content."""
    longest = 0
    for match in re.finditer(r"`+", content):
        longest = max(longest, len(match.group()))
    return "`" * max(3, longest + 1)


def _fenced(content: str, language: str) -> str:
    fence = _fence_for(content)
    body = content if content.endswith("\n") or not content else content + "\n"
    return f"{fence}{language}\n{body}{fence}"


def export_markdown(session: Session) -> str:
    """A single readable Markdown document for the whole run.

    Each code cell contributes exactly one fenced code block (its latest
    source); outputs are fenced as plain text; image artifacts turn into
    image links relative to the assets directory (the export itself lives
    in ``runs/``, hence the ``../`` prefix).
    """
    spec = session.spec
    parts = ["# Project summary", ""]
    if spec.general_instructions:
        parts.append("**General instructions:**")
        parts.extend(f"- {key}: {value}" for key, value in spec.general_instructions)
        parts.append("")
    for label, value in (
        ("Task description", spec.task_description),
        ("Data description", spec.data_description),
        ("Data location", spec.data_location),
        ("Metrics", spec.metrics),
        ("Inputs", spec.inputs),
        ("Outputs", spec.outputs),
        ("Special instructions", spec.special_instructions),
    ):
        if value:
            parts.append(f"**{label}:** {value}")
            parts.append("")
    for cell in session.cells:
        if cell.kind is CellKind.TEXT:
            parts.append(f"## Text #{cell.ordinal}")
            parts.append("")
            parts.append(cell.source)
            parts.append("")
        elif cell.kind is CellKind.CODE:
            parts.append(f"## Code #{cell.ordinal}")
            parts.append("")
            parts.append(_fenced(cell.source, "python"))
            parts.append("")
            result = cell.final_result
            if result is not None:
                if result.stdout:
                    parts.append("Output:")
                    parts.append("")
                    parts.append(_fenced(result.stdout, "text"))
                    parts.append("")
                if result.status is not ExecStatus.SUCCESS and result.stderr:
                    parts.append("Error:")
                    parts.append("")
                    parts.append(_fenced(result.stderr, "text"))
                    parts.append("")
                for artifact in result.artifacts_written:
                    if artifact.lower().endswith(_IMAGE_SUFFIXES):
                        parts.append(f"![{artifact}](../{artifact})")
                        parts.append("")
        else:
            parts.append("---")
            parts.append("")
            parts.append(cell.source)
            parts.append("")
    # Exactly one trailing newline, whatever the last cell's source ends with.
    return "\n".join(parts).rstrip("\n") + "\n"


# -- notebook export --------------------------------------------------------


def notebook_dict(session: Session) -> dict:
    """The session as a Jupyter notebook (format 4.5) document.

    Text and finish cells become markdown cells; code cells carry their
    latest source, stream outputs from the latest attempt, and their code
    ordinal as the execution count.
    """
    cells = []
    for cell in session.cells:
        if cell.kind is CellKind.CODE:
            outputs = []
            result = cell.final_result
            if result is not None:
                if result.stdout:
                    outputs.append(
                        {"output_type": "stream", "name": "stdout", "text": result.stdout}
                    )
                if result.stderr:
                    outputs.append(
                        {"output_type": "stream", "name": "stderr", "text": result.stderr}
                    )
            cells.append(
                {
                    "id": f"cell-{cell.id}",
                    "cell_type": "code",
                    "metadata": {},
                    "execution_count": cell.ordinal,
                    "source": cell.source,
                    "outputs": outputs,
                }
            )
        else:
            cells.append(
                {
                    "id": f"cell-{cell.id}",
                    "cell_type": "markdown",
                    "metadata": {},
                    "source": cell.source,
                }
            )
    return {
        "nbformat": 4,
        "nbformat_minor": 5,
        "metadata": {
            "kernelspec": {"name": "python3", "display_name": "Python 3", "language": "python"},
            "language_info": {"name": "python"},
        },
        "cells": cells,
    }


def export_notebook(session: Session) -> bytes:
    return canonical_json_bytes(notebook_dict(session))


# -- assets directory -------------------------------------------------------


class AssetKind(str, Enum):
    SPEC = "spec"
    METRICS = "metrics"
    MODEL_CARD = "model_card"
    DEBUG_LOG = "debug_log"


ASSET_FILENAMES = {
    AssetKind.SPEC: "spec.json",
    AssetKind.METRICS: "metrics.ndjson",
    AssetKind.MODEL_CARD: "model_card.md",
    AssetKind.DEBUG_LOG: "debug.log",
}

#: Append-only files are never overwritten, only extended.
_APPEND_KINDS = frozenset({AssetKind.METRICS, AssetKind.DEBUG_LOG})


@dataclass
class AssetsDir:
    """One session's output directory, with the fixed layout pre-created."""

    root: Path
    clock: Clock = system_clock

    @classmethod
    def create(cls, root: Path, *, clock: Clock = system_clock) -> "AssetsDir":
        root = Path(root)
        (root / "plots").mkdir(parents=True, exist_ok=True)
        (root / "runs").mkdir(parents=True, exist_ok=True)
        return cls(root=root, clock=clock)

    def path_of(self, kind: AssetKind) -> Path:
        return self.root / ASSET_FILENAMES[kind]

    def log(self, line: str) -> None:
        """Append one timestamped line to the debug log."""
        stamp = format_timestamp(self.clock())
        with open(self.path_of(AssetKind.DEBUG_LOG), "a", encoding="utf-8") as f:
            f.write(f"{stamp} {line}\n")

    def record_metric(self, name: str, value: float, step: int) -> None:
        """Append one metric record to metrics.ndjson."""
        if not isinstance(name, str) or not name:
            raise ValueError("metric name must be a non-empty string")
        if isinstance(value, bool) or not isinstance(value, numbers.Real):
            raise ValueError("metric value must be a number")
        record = {
            "name": name,
            "value": float(value),
            "step": int(step),
            "timestamp": format_timestamp(self.clock()),
        }
        with open(self.path_of(AssetKind.METRICS), "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def write_asset(assets: AssetsDir, kind: AssetKind, content: Union[str, Mapping]) -> Path:
    """Write one managed file; append-only kinds append, the rest overwrite.

    Only the fixed layout is writable through this interface; arbitrary
    paths go through the sandbox mounts instead.
    """
    path = assets.path_of(kind)
    if kind is AssetKind.SPEC:
        if isinstance(content, Mapping):
            data = canonical_json_bytes(dict(content))
        else:
            data = content.encode("utf-8")
        path.write_bytes(data)
    elif kind is AssetKind.MODEL_CARD:
        if not isinstance(content, str):
            raise ValueError("model card content must be a string")
        path.write_text(content, encoding="utf-8")
    elif kind is AssetKind.METRICS:
        if not isinstance(content, Mapping):
            raise ValueError("metric content must be a mapping with name/value/step")
        record = dict(content)
        assets.record_metric(
            record.get("name", ""), record.get("value"), int(record.get("step", 0))
        )
    else:
        if not isinstance(content, str):
            raise ValueError("log content must be a string")
        assets.log(content)
    return path


def resolve_asset_path(root: Path, relative: str) -> Path:
    """Safe join for asset downloads; rejects traversal out of the root."""
    root = Path(root).resolve()
    candidate = (root / relative).resolve()
    if candidate != root and root not in candidate.parents:
        raise ValueError(f"path escapes the assets directory: {relative!r}")
    return candidate


def write_run_bundle(session: Session, assets: AssetsDir) -> dict:
    """Write run.json, solution.md, and solution.ipynb under runs/."""
    runs = assets.root / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": runs / "run.json",
        "md": runs / "solution.md",
        "ipynb": runs / "solution.ipynb",
    }
    paths["json"].write_bytes(save_run(session))
    paths["md"].write_text(export_markdown(session), encoding="utf-8")
    paths["ipynb"].write_bytes(export_notebook(session))
    return {key: str(path) for key, path in paths.items()}


def load_notebook_schema() -> dict:
    """The vendored Jupyter v4 interchange schema (for validation in tests)."""
    from importlib import resources

    ref = resources.files("datasmith.schemas").joinpath("nbformat.v4.schema.json")
    return json.loads(ref.read_text(encoding="utf-8"))
