"""HTTP service: session lifecycle, exports, assets, and live events.

Concurrency model: one lock per session.  Mutating calls (step, reset,
import) queue on the lock with a bounded wait and answer 409 when the
session stays busy; autorun answers 409 immediately if anything else holds
the lock, otherwise it runs in a background thread.  Reset cancels a
running autorun cooperatively at the next step boundary.

Events: every session keeps an append-only journal of numbered events
(``trace``, ``cell``, ``status``, ``error``, ``end``).  The SSE endpoint
replays the journal from any point (Last-Event-ID) and then follows live,
so a reconnecting client never misses or duplicates an event.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response, StreamingResponse

from .assets import (
    SchemaViolation,
    VersionUnknown,
    _cell_to_dict,
    _trace_to_dict,
    export_markdown,
    export_notebook,
    load_run,
    resolve_asset_path,
    save_run,
    session_to_dict,
)
from .config import ServiceConfig, run_config_from_mapping, project_spec_from_mapping
from .domain import (
    DomainError,
    InvalidConfig,
    InvalidSpec,
    Session,
    SessionStateError,
    SessionStatus,
    TraceRecord,
)
from .orchestrator import ActionParseFailure, LimitReached
from .runtime import SessionRuntime, build_runtime, run_diagnostics
from .sandbox import DataPathMissing, RuntimeUnavailable, SandboxError

_LOCK_WAIT_S = 30.0
_TERMINAL = (SessionStatus.FINISHED, SessionStatus.STOPPED_MAX_STEPS, SessionStatus.FAILED)


class EventJournal:
    """Numbered, append-only event log with blocking reads for SSE."""

    def __init__(self) -> None:
        self._events: list[tuple[int, str, str]] = []
        self._cond = threading.Condition()

    def append(self, event: str, data: dict) -> int:
        payload = json.dumps(data, ensure_ascii=False, sort_keys=True)
        with self._cond:
            event_id = len(self._events) + 1
            self._events.append((event_id, event, payload))
            self._cond.notify_all()
            return event_id

    def since(self, last_id: int) -> list[tuple[int, str, str]]:
        with self._cond:
            return list(self._events[last_id:])

    def wait_since(self, last_id: int, timeout: float) -> list[tuple[int, str, str]]:
        with self._cond:
            if len(self._events) > last_id:
                return list(self._events[last_id:])
            self._cond.wait(timeout)
            return list(self._events[last_id:])


class SessionEntry:
    def __init__(self, runtime: SessionRuntime) -> None:
        self.runtime = runtime
        self.lock = threading.Lock()
        self.journal = EventJournal()
        self.cancel = threading.Event()
        self.worker: Optional[threading.Thread] = None

    @property
    def session(self) -> Session:
        return self.runtime.session

    def emit_status(self) -> None:
        self.journal.append(
            "status",
            {
                "status": self.session.status.value,
                "step_count": self.session.step_count,
                "cell_count": len(self.session.cells),
            },
        )

    def observer(self, session: Session, record: TraceRecord) -> None:
        self.journal.append(
            "trace",
            {
                "record": _trace_to_dict(record),
                "status": session.status.value,
                "step_count": session.step_count,
            },
        )
        cell_id = record.data.get("cell_id")
        if cell_id is not None:
            cell = next((c for c in session.cells if c.id == cell_id), None)
            if cell is not None:
                self.journal.append("cell", {"cell": _cell_to_dict(cell)})


def _error(status_code: int, detail: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"detail": detail, **extra})


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="datasmith", version="1")
    # The operator console is served from another origin during development.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["*"],
    )
    sessions: dict = {}
    sessions_guard = threading.Lock()
    app.state.sessions = sessions
    app.state.config = config

    def _entry(session_id: str) -> Optional[SessionEntry]:
        with sessions_guard:
            return sessions.get(session_id)

    # -- lifecycle ----------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(...)):
        if not isinstance(payload, dict) or "spec" not in payload:
            return _error(400, "body must be an object with a 'spec' field")
        try:
            spec = project_spec_from_mapping(payload["spec"])
            run_config = run_config_from_mapping(
                payload.get("config") or {}, config.run_defaults
            )
        except (InvalidSpec, InvalidConfig, DomainError) as exc:
            return _error(400, str(exc))
        except (TypeError, ValueError) as exc:
            return _error(400, f"malformed request: {exc}")
        session_id = payload.get("session_id")
        if session_id is not None and not isinstance(session_id, str):
            return _error(400, "session_id must be a string")
        try:
            entry_holder: list = []

            def observer(session, record):
                if entry_holder:
                    entry_holder[0].observer(session, record)

            runtime = build_runtime(
                spec,
                run_config,
                config,
                session_id=session_id,
                observer=observer,
            )
        except DataPathMissing as exc:
            return _error(400, str(exc))
        except RuntimeUnavailable as exc:
            return _error(503, str(exc))
        except SandboxError as exc:
            return _error(500, str(exc))
        entry = SessionEntry(runtime)
        entry_holder.append(entry)
        with sessions_guard:
            if runtime.session.session_id in sessions:
                runtime.close()
                return _error(409, "a session with this id already exists")
            sessions[runtime.session.session_id] = entry
        entry.emit_status()
        return {
            "session_id": runtime.session.session_id,
            "status": runtime.session.status.value,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        return {"session": session_to_dict(entry.session)}

    # -- driving ------------------------------------------------------------

    @app.post("/sessions/{session_id}/step")
    def step_session(session_id: str):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        if not entry.lock.acquire(timeout=_LOCK_WAIT_S):
            return _error(409, "session is busy")
        try:
            outcome = entry.runtime.step()
        except LimitReached as exc:
            entry.emit_status()
            return _error(409, str(exc), status=entry.session.status.value)
        except ActionParseFailure as exc:
            entry.emit_status()
            return _error(502, str(exc), status=entry.session.status.value)
        except SessionStateError as exc:
            return _error(409, str(exc), status=entry.session.status.value)
        except SandboxError as exc:
            return _error(500, str(exc), status=entry.session.status.value)
        except Exception as exc:
            entry.journal.append("error", {"detail": str(exc)})
            return _error(502, f"step failed: {exc}", status=entry.session.status.value)
        finally:
            entry.lock.release()
        entry.emit_status()
        return {
            "status": entry.session.status.value,
            "step_count": entry.session.step_count,
            "halted": outcome.halted,
            "cell": _cell_to_dict(outcome.cell) if outcome.cell is not None else None,
        }

    @app.post("/sessions/{session_id}/autorun", status_code=202)
    def autorun_session(session_id: str):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        if entry.session.status in _TERMINAL:
            return _error(409, f"session is {entry.session.status.value}")
        if not entry.lock.acquire(blocking=False):
            return _error(409, "session is busy")
        entry.cancel.clear()

        def worker():
            try:
                entry.runtime.autorun(should_continue=lambda: not entry.cancel.is_set())
            except Exception as exc:  # infra failure: report, stay resumable
                entry.journal.append("error", {"detail": str(exc)})
            finally:
                entry.emit_status()
                entry.lock.release()

        entry.worker = threading.Thread(target=worker, daemon=True)
        entry.worker.start()
        return {"status": "accepted"}

    @app.post("/sessions/{session_id}/reset")
    def reset_session_endpoint(session_id: str):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        # Cancel first so a running autorun yields at its next boundary.
        entry.cancel.set()
        if not entry.lock.acquire(timeout=_LOCK_WAIT_S):
            return _error(409, "session is busy")
        try:
            entry.cancel.clear()
            try:
                entry.runtime.reset()
            except SandboxError as exc:
                return _error(500, str(exc))
        finally:
            entry.lock.release()
        entry.emit_status()
        return {"status": entry.session.status.value}

    @app.post("/sessions/{session_id}/import")
    def import_session(session_id: str, payload: dict = Body(...)):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        if not entry.lock.acquire(timeout=_LOCK_WAIT_S):
            return _error(409, "session is busy")
        try:
            try:
                loaded = load_run(json.dumps(payload))
            except SchemaViolation as exc:
                return _error(422, str(exc), path=exc.path)
            except VersionUnknown as exc:
                return _error(422, str(exc))
            try:
                entry.runtime.replace_session(loaded)
            except SandboxError as exc:
                return _error(500, str(exc))
        finally:
            entry.lock.release()
        entry.emit_status()
        return {
            "status": entry.session.status.value,
            "step_count": entry.session.step_count,
            "cell_count": len(entry.session.cells),
        }

    # -- exports and assets ---------------------------------------------------

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str, format: str = "json"):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        if format == "json":
            return Response(content=save_run(entry.session), media_type="application/json")
        if format == "md":
            return Response(content=export_markdown(entry.session), media_type="text/markdown")
        if format == "ipynb":
            return Response(
                content=export_notebook(entry.session), media_type="application/x-ipynb+json"
            )
        return _error(400, f"unknown export format {format!r}")

    @app.get("/sessions/{session_id}/assets/{asset_path:path}")
    def get_asset(session_id: str, asset_path: str):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        root = entry.runtime.assets.root
        try:
            target = resolve_asset_path(root, asset_path)
        except ValueError as exc:
            return _error(400, str(exc))
        if target.is_dir():
            entries = sorted(target.iterdir(), key=lambda p: (p.is_file(), p.name))
            return {
                "path": asset_path,
                "entries": [
                    {
                        "name": item.name,
                        "is_dir": item.is_dir(),
                        "size": item.stat().st_size if item.is_file() else None,
                    }
                    for item in entries
                ],
            }
        if not target.is_file():
            return _error(404, f"no such asset: {asset_path}")
        return FileResponse(target)

    # -- events ----------------------------------------------------------------

    @app.get("/sessions/{session_id}/events")
    def session_events(session_id: str, request: Request, last_event_id: int = 0):
        entry = _entry(session_id)
        if entry is None:
            return _error(404, "unknown session")
        header_id = request.headers.get("last-event-id")
        cursor = last_event_id
        if header_id is not None:
            try:
                cursor = int(header_id)
            except ValueError:
                pass

        def stream(cursor: int):
            idle_polls = 0
            while True:
                events = entry.journal.wait_since(cursor, timeout=0.5)
                if events:
                    idle_polls = 0
                    for event_id, event, payload in events:
                        cursor = event_id
                        yield f"id: {event_id}\nevent: {event}\ndata: {payload}\n\n"
                    continue
                worker = entry.worker
                busy = worker is not None and worker.is_alive()
                if entry.session.status in _TERMINAL and not busy:
                    yield f"id: {cursor}\nevent: end\ndata: {{}}\n\n"
                    return
                idle_polls += 1
                if idle_polls % 20 == 0:
                    yield ": keep-alive\n\n"

        return StreamingResponse(stream(cursor), media_type="text/event-stream")

    # -- diagnostics -------------------------------------------------------------

    @app.get("/diagnostics")
    def diagnostics():
        return run_diagnostics(config)

    return app


def serve(config: ServiceConfig, *, host: Optional[str] = None, port: Optional[int] = None) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(
        create_app(config),
        host=host if host is not None else config.listen_host,
        port=port if port is not None else config.listen_port,
        log_level="info",
    )
