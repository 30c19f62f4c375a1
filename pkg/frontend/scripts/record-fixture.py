#!/usr/bin/env python3
"""Record tests/fixtures/recorded.json from a real engine service.

Runs a scripted three-step session (plan, code, finish) against the
in-process HTTP app and captures, verbatim, everything the console tests
replay: the SSE event list, the run document, both text exports, and the
asset listing.  Rerun after any wire-format change:

    python3 scripts/record-fixture.py
"""

import json
import pathlib

from starlette.testclient import TestClient

from datasmith.config import BackendDef, ServiceConfig
from datasmith.domain import RunConfig
from datasmith.gateway import ToolCall
from datasmith.service import create_app

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "recorded.json"


def tool(name, **fields):
    return ToolCall(name=name, arguments_json=json.dumps(fields))


def parse_sse(text):
    events = []
    for block in text.split("\n\n"):
        if not block.strip():
            continue
        event = {}
        for line in block.splitlines():
            key, _, value = line.partition(": ")
            event[key] = value
        events.append(
            {"id": int(event["id"]), "event": event["event"], "data": event["data"]}
        )
    return events


def main():
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        config = ServiceConfig(
            state_root=pathlib.Path(tmp),
            sandbox_runtime="local",
            backends={
                "orchestrator": BackendDef(
                    kind="scripted",
                    responses=(
                        tool("request_text", spec="Lay out the plan."),
                        tool("request_code", purpose="Print a greeting."),
                        tool("finish", summary_hint="Greeted the world."),
                    ),
                ),
                "text": BackendDef(
                    kind="scripted", responses=("The plan: print a greeting.",)
                ),
                "code": BackendDef(kind="scripted", responses=("print('hello')",)),
            },
            run_defaults=RunConfig(),
        )
        client = TestClient(create_app(config))

        created = client.post(
            "/sessions",
            json={
                "spec": {
                    "task_description": "Greet the world.",
                    "metrics": "one friendly line on stdout",
                },
                "session_id": "recorded-fixture",
            },
        )
        assert created.status_code == 201, created.text
        sid = created.json()["session_id"]

        for _ in range(3):
            reply = client.post(f"/sessions/{sid}/step")
            assert reply.status_code == 200, reply.text

        doc = client.get(f"/sessions/{sid}").json()["session"]
        assert doc["status"] == "finished", doc["status"]

        events = parse_sse(client.get(f"/sessions/{sid}/events").text)
        assert events[-1]["event"] == "end"

        fixture = {
            "recorded_with": "scripts/record-fixture.py against the real service",
            "session_id": sid,
            "run_document": doc,
            "events": events,
            "export_markdown": client.get(
                f"/sessions/{sid}/export", params={"format": "md"}
            ).text,
            "export_notebook": client.get(
                f"/sessions/{sid}/export", params={"format": "ipynb"}
            ).json(),
            "asset_listing": client.get(f"/sessions/{sid}/assets/").json(),
        }
        OUT.write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n")
        print(f"wrote {OUT} ({len(events)} events, {len(doc['cells'])} cells)")


if __name__ == "__main__":
    main()
