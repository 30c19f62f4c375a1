import json
import time

import pytest
from fastapi.testclient import TestClient

import datasmith.service as service_module
from datasmith.config import BackendDef, ServiceConfig
from datasmith.domain import RunConfig
from datasmith.gateway import ToolCall
from datasmith.service import create_app


def tool(name, **fields):
    return ToolCall(name=name, arguments_json=json.dumps(fields))

TEXT = tool("request_text", spec="Explain the approach.")
CODE = tool("request_code", purpose="Print a greeting.")
FINISH = tool("finish", summary_hint="All done.")

SPEC = {"task_description": "Greet the world.", "metrics": "none"}


def make_client(tmp_path, *, orchestrator, text=("unused",), code=("unused",), **run_kwargs):
    config = ServiceConfig(
        state_root=tmp_path / "state",
        sandbox_runtime="local",
        backends={
            "orchestrator": BackendDef(kind="scripted", responses=tuple(orchestrator)),
            "text": BackendDef(kind="scripted", responses=tuple(text)),
            "code": BackendDef(kind="scripted", responses=tuple(code)),
        },
        run_defaults=RunConfig(**run_kwargs),
    )
    return TestClient(create_app(config))


def create_session(client, *, spec=None, session_id=None, config=None):
    payload = {"spec": spec or dict(SPEC)}
    if session_id is not None:
        payload["session_id"] = session_id
    if config is not None:
        payload["config"] = config
    response = client.post("/sessions", json=payload)
    assert response.status_code == 201, response.text
    return response.json()["session_id"]


def parse_sse(text):
    events = []
    for block in text.strip().split("\n\n"):
        if block.startswith(":"):
            continue
        event = {"id": None, "event": "message", "data": None}
        for line in block.splitlines():
            if line.startswith("id: "):
                event["id"] = int(line[len("id: "):])
            elif line.startswith("event: "):
                event["event"] = line[len("event: "):]
            elif line.startswith("data: "):
                event["data"] = json.loads(line[len("data: "):])
        events.append(event)
    return events


def wait_for_terminal(client, session_id, deadline_s=15.0):
    deadline = time.monotonic() + deadline_s
    while time.monotonic() < deadline:
        status = client.get(f"/sessions/{session_id}").json()["session"]["status"]
        if status in ("finished", "stopped_max_steps", "failed"):
            return status
        time.sleep(0.05)
    raise AssertionError("session never reached a terminal status")


class TestSessionLifecycle:
    def test_create_returns_idle_session(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client, session_id="s-1")
        assert session_id == "s-1"
        doc = client.get("/sessions/s-1").json()["session"]
        assert doc["status"] == "idle"
        assert doc["cells"] == []
        assert doc["spec"]["task_description"] == "Greet the world."

    def test_create_rejects_missing_spec(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        response = client.post("/sessions", json={"config": {}})
        assert response.status_code == 400

    def test_create_rejects_bad_config(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        response = client.post(
            "/sessions", json={"spec": SPEC, "config": {"max_stepz": 5}}
        )
        assert response.status_code == 400

    def test_create_rejects_missing_data_path(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        spec = dict(SPEC, data_location=str(tmp_path / "no-such-dir"))
        response = client.post("/sessions", json={"spec": spec})
        assert response.status_code == 400
        assert "data location" in response.json()["detail"]

    def test_duplicate_session_id_conflicts(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH, FINISH])
        create_session(client, session_id="dup")
        response = client.post("/sessions", json={"spec": SPEC, "session_id": "dup"})
        assert response.status_code == 409

    def test_per_session_config_overrides_defaults(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH], max_steps=9)
        session_id = create_session(client, config={"max_steps": 2})
        doc = client.get(f"/sessions/{session_id}").json()["session"]
        assert doc["config"]["max_steps"] == 2

    def test_unknown_session_is_404_everywhere(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        assert client.get("/sessions/ghost").status_code == 404
        assert client.post("/sessions/ghost/step").status_code == 404
        assert client.post("/sessions/ghost/autorun").status_code == 404
        assert client.post("/sessions/ghost/reset").status_code == 404
        assert client.post("/sessions/ghost/import", json={}).status_code == 404
        assert client.get("/sessions/ghost/export").status_code == 404
        assert client.get("/sessions/ghost/assets/x").status_code == 404
        assert client.get("/sessions/ghost/events").status_code == 404


class TestStepping:
    def test_single_step_returns_the_new_cell(self, tmp_path):
        client = make_client(
            tmp_path, orchestrator=[TEXT, FINISH], text=["A plan in prose."]
        )
        session_id = create_session(client)
        response = client.post(f"/sessions/{session_id}/step")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "awaiting_next_step"
        assert body["step_count"] == 1
        assert body["halted"] is False
        assert body["cell"]["kind"] == "text"
        assert body["cell"]["source"] == "A plan in prose."

    def test_code_step_executes_for_real(self, tmp_path):
        client = make_client(
            tmp_path, orchestrator=[CODE, FINISH], code=["print('hello service')"]
        )
        session_id = create_session(client)
        body = client.post(f"/sessions/{session_id}/step").json()
        assert body["cell"]["kind"] == "code"
        assert body["cell"]["results"][0]["status"] == "success"
        assert body["cell"]["results"][0]["stdout"] == "hello service\n"

    def test_finish_step_halts(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        body = client.post(f"/sessions/{session_id}/step").json()
        assert body["halted"] is True
        assert body["status"] == "finished"
        assert body["cell"]["source"] == "Finished: All done."
        response = client.post(f"/sessions/{session_id}/step")
        assert response.status_code == 409
        assert response.json()["status"] == "finished"

    def test_budget_exhaustion_is_409_with_status(self, tmp_path):
        client = make_client(
            tmp_path, orchestrator=[TEXT, TEXT], text=["one", "two"], max_steps=1
        )
        session_id = create_session(client)
        first = client.post(f"/sessions/{session_id}/step").json()
        assert first["status"] == "stopped_max_steps" and first["halted"] is True
        response = client.post(f"/sessions/{session_id}/step")
        assert response.status_code == 409
        assert response.json()["status"] == "stopped_max_steps"

    def test_unreadable_routing_is_502_failed(self, tmp_path):
        client = make_client(tmp_path, orchestrator=["junk one", "junk two"])
        session_id = create_session(client)
        response = client.post(f"/sessions/{session_id}/step")
        assert response.status_code == 502
        assert response.json()["status"] == "failed"
        doc = client.get(f"/sessions/{session_id}").json()["session"]
        assert doc["status"] == "failed"

    def test_busy_session_answers_409(self, tmp_path, monkeypatch):
        monkeypatch.setattr(service_module, "_LOCK_WAIT_S", 0.05)
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        entry = client.app.state.sessions[session_id]
        assert entry.lock.acquire(blocking=False)
        try:
            assert client.post(f"/sessions/{session_id}/step").status_code == 409
            assert client.post(f"/sessions/{session_id}/import", json={}).status_code == 409
        finally:
            entry.lock.release()


class TestAutorun:
    def test_runs_to_finish_in_background(self, tmp_path):
        client = make_client(
            tmp_path,
            orchestrator=[TEXT, CODE, FINISH],
            text=["The plan."],
            code=["print('hi')"],
        )
        session_id = create_session(client)
        response = client.post(f"/sessions/{session_id}/autorun")
        assert response.status_code == 202
        assert wait_for_terminal(client, session_id) == "finished"
        doc = client.get(f"/sessions/{session_id}").json()["session"]
        assert [c["kind"] for c in doc["cells"]] == ["text", "code", "finish"]

    def test_terminal_session_rejects_autorun(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/step")
        response = client.post(f"/sessions/{session_id}/autorun")
        assert response.status_code == 409

    def test_autorun_while_locked_is_immediate_409(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        entry = client.app.state.sessions[session_id]
        assert entry.lock.acquire(blocking=False)
        try:
            assert client.post(f"/sessions/{session_id}/autorun").status_code == 409
        finally:
            entry.lock.release()

    def test_failed_script_surfaces_in_status_not_exception(self, tmp_path):
        client = make_client(tmp_path, orchestrator=["junk", "junk"])
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/autorun")
        assert wait_for_terminal(client, session_id) == "failed"


class TestReset:
    def test_reset_clears_cells_and_returns_idle(self, tmp_path):
        client = make_client(
            tmp_path, orchestrator=[TEXT, FINISH], text=["prose"]
        )
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/step")
        response = client.post(f"/sessions/{session_id}/reset")
        assert response.status_code == 200
        assert response.json() == {"status": "idle"}
        doc = client.get(f"/sessions/{session_id}").json()["session"]
        assert doc["cells"] == [] and doc["step_count"] == 0

    def test_reset_gives_a_fresh_interpreter(self, tmp_path):
        client = make_client(
            tmp_path,
            orchestrator=[CODE, CODE],
            code=["leak = 'v'", "print('leak' in dir())"],
            max_code_retries=0,
        )
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/step")
        client.post(f"/sessions/{session_id}/reset")
        body = client.post(f"/sessions/{session_id}/step").json()
        assert body["cell"]["results"][0]["stdout"] == "False\n"

    def test_reset_cancels_a_running_autorun(self, tmp_path):
        slow_cells = ["import time\ntime.sleep(0.2)"] * 10
        client = make_client(
            tmp_path,
            orchestrator=[CODE] * 10,
            code=slow_cells,
            max_code_retries=0,
        )
        session_id = create_session(client)
        assert client.post(f"/sessions/{session_id}/autorun").status_code == 202
        time.sleep(0.15)  # let the worker get into its first step
        response = client.post(f"/sessions/{session_id}/reset")
        assert response.status_code == 200
        assert response.json() == {"status": "idle"}
        doc = client.get(f"/sessions/{session_id}").json()["session"]
        assert doc["cells"] == []


class TestImportExport:
    def run_to_finish(self, client):
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/autorun")
        wait_for_terminal(client, session_id)
        return session_id

    def make_finished_client(self, tmp_path):
        return make_client(
            tmp_path,
            orchestrator=[TEXT, CODE, FINISH, FINISH],
            text=["The plan."],
            code=["print('hi')"],
        )

    def test_export_json_round_trips_through_import(self, tmp_path):
        client = self.make_finished_client(tmp_path)
        source_id = self.run_to_finish(client)
        exported = client.get(f"/sessions/{source_id}/export", params={"format": "json"})
        assert exported.status_code == 200
        assert exported.headers["content-type"].startswith("application/json")
        doc = exported.json()

        target_id = create_session(client, session_id="import-target")
        response = client.post(f"/sessions/{target_id}/import", json=doc)
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "finished"
        assert body["cell_count"] == 3
        loaded = client.get(f"/sessions/{target_id}").json()["session"]
        original = client.get(f"/sessions/{source_id}").json()["session"]
        assert loaded["cells"] == original["cells"]

    def test_import_rejects_schema_violations_with_path(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        response = client.post(
            f"/sessions/{session_id}/import",
            json={"format_version": 1, "session_id": ""},
        )
        assert response.status_code == 422
        assert "path" in response.json()

    def test_import_rejects_unknown_version(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        response = client.post(
            f"/sessions/{session_id}/import", json={"format_version": 99}
        )
        assert response.status_code == 422
        assert "format_version" in response.json()["detail"]

    def test_markdown_and_notebook_exports(self, tmp_path):
        client = self.make_finished_client(tmp_path)
        session_id = self.run_to_finish(client)
        md = client.get(f"/sessions/{session_id}/export", params={"format": "md"})
        assert md.headers["content-type"].startswith("text/markdown")
        assert md.text.startswith("# Project summary")
        assert "```python\nprint('hi')\n```" in md.text
        nb = client.get(f"/sessions/{session_id}/export", params={"format": "ipynb"})
        assert nb.headers["content-type"].startswith("application/x-ipynb+json")
        assert nb.json()["nbformat"] == 4

    def test_unknown_format_is_400(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        response = client.get(f"/sessions/{session_id}/export", params={"format": "pdf"})
        assert response.status_code == 400


class TestAssets:
    def test_directory_listing(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        listing = client.get(f"/sessions/{session_id}/assets/").json()
        names = [item["name"] for item in listing["entries"]]
        assert names == ["plots", "runs", "debug.log", "spec.json"]
        dirs = [item["name"] for item in listing["entries"] if item["is_dir"]]
        assert dirs == ["plots", "runs"]

    def test_file_download(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        response = client.get(f"/sessions/{session_id}/assets/spec.json")
        assert response.status_code == 200
        assert response.json()["task_description"] == "Greet the world."

    def test_cell_written_artifact_is_downloadable(self, tmp_path):
        client = make_client(
            tmp_path,
            orchestrator=[CODE, FINISH],
            code=["open('assets/plots/fig.svg', 'w').write('<svg/>')"],
        )
        session_id = create_session(client)
        body = client.post(f"/sessions/{session_id}/step").json()
        assert body["cell"]["results"][0]["artifacts_written"] == ["plots/fig.svg"]
        response = client.get(f"/sessions/{session_id}/assets/plots/fig.svg")
        assert response.status_code == 200
        assert response.text == "<svg/>"

    def test_traversal_is_rejected(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        response = client.get(
            f"/sessions/{session_id}/assets/%2e%2e/%2e%2e/etc/passwd"
        )
        assert response.status_code == 400

    def test_missing_asset_is_404(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        session_id = create_session(client)
        assert client.get(f"/sessions/{session_id}/assets/nope.csv").status_code == 404


class TestEvents:
    def finished_session(self, tmp_path):
        client = make_client(
            tmp_path,
            orchestrator=[TEXT, CODE, FINISH],
            text=["The plan."],
            code=["print('hi')"],
        )
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/autorun")
        wait_for_terminal(client, session_id)
        return client, session_id

    def test_full_replay_ends_with_end(self, tmp_path):
        client, session_id = self.finished_session(tmp_path)
        events = parse_sse(client.get(f"/sessions/{session_id}/events").text)
        assert events[0]["event"] == "status"
        assert events[0]["data"]["status"] == "idle"
        assert events[-1]["event"] == "end"
        kinds = {e["event"] for e in events}
        assert kinds <= {"status", "trace", "cell", "error", "end"}
        assert "cell" in kinds and "trace" in kinds
        ids = [e["id"] for e in events[:-1]]
        assert ids == list(range(1, len(ids) + 1))
        assert events[-1]["id"] == ids[-1]

    def test_cell_events_carry_full_cells_in_order(self, tmp_path):
        client, session_id = self.finished_session(tmp_path)
        events = parse_sse(client.get(f"/sessions/{session_id}/events").text)
        cells = [e["data"]["cell"] for e in events if e["event"] == "cell"]
        kinds = [c["kind"] for c in cells]
        # cell events fire per execution too, so kinds appear in step order
        assert kinds[0] == "text" and kinds[-1] == "finish"
        code_cells = [c for c in cells if c["kind"] == "code"]
        assert code_cells[-1]["results"][0]["stdout"] == "hi\n"

    def test_resume_from_query_parameter(self, tmp_path):
        client, session_id = self.finished_session(tmp_path)
        full = parse_sse(client.get(f"/sessions/{session_id}/events").text)
        partial = parse_sse(
            client.get(f"/sessions/{session_id}/events", params={"last_event_id": 2}).text
        )
        assert partial[0]["id"] == 3
        assert partial[0]["event"] == full[2]["event"]
        assert len(partial) == len(full) - 2

    def test_resume_from_header(self, tmp_path):
        client, session_id = self.finished_session(tmp_path)
        partial = parse_sse(
            client.get(
                f"/sessions/{session_id}/events", headers={"Last-Event-ID": "4"}
            ).text
        )
        assert partial[0]["id"] == 5

    def test_live_stream_sees_step_events(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[TEXT, FINISH], text=["prose"])
        session_id = create_session(client)
        client.post(f"/sessions/{session_id}/step")
        client.post(f"/sessions/{session_id}/step")
        events = parse_sse(client.get(f"/sessions/{session_id}/events").text)
        actions = [
            e["data"]["record"]["data"]["action"]
            for e in events
            if e["event"] == "trace" and e["data"]["record"]["kind"] == "action"
        ]
        assert actions == ["request_text", "finish"]


class TestDiagnostics:
    def test_healthy_scripted_setup(self, tmp_path):
        client = make_client(tmp_path, orchestrator=[FINISH])
        report = client.get("/diagnostics").json()
        assert report["ok"] is True
        assert [b["role"] for b in report["backends"]] == ["orchestrator", "text", "code"]
        assert all(b["reachable"] for b in report["backends"])
        assert report["sandbox"]["runtime"] == "local"
        assert report["sandbox"]["available"] is True
        assert report["state_root"]["writable"] is True
