"""Command line: run a project to completion, serve the API, or diagnose.

Exit codes for ``run``: 0 the session Finished, 1 it stopped at the step
budget, 2 it failed, 3 configuration or environment problems.  ``diagnose``
exits 0 when every check passes, 3 otherwise.
"""

from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import click

from . import service as service_module
from .config import (
    ServiceConfig,
    load_project_spec,
    load_service_config,
    run_config_from_mapping,
)
from .domain import (
    InvalidConfig,
    InvalidSpec,
    SessionStatus,
    ToolMode,
    fixed_clock,
    system_clock,
)
from .gateway import GatewayError
from .runtime import build_runtime, run_diagnostics
from .sandbox import SandboxError

_STATUS_EXIT_CODES = {
    SessionStatus.FINISHED: 0,
    SessionStatus.STOPPED_MAX_STEPS: 1,
    SessionStatus.FAILED: 2,
}


def _load_config(path: Optional[str]) -> ServiceConfig:
    if path is None:
        return ServiceConfig()
    return load_service_config(path)


def _progress_printer(session, record) -> None:
    data = record.data
    if record.kind == "action":
        click.echo(f"step {data['step']}: {data['action']} - {_shorten(data['argument'])}")
    elif record.kind == "execution":
        click.echo(
            f"  attempt {data['attempt']}: {data['status']} ({data['duration_ms']} ms)"
        )
    elif record.kind == "parse_retry":
        click.echo(f"  router reply unusable, asking again: {_shorten(data['error'])}")
    elif record.kind == "halt":
        click.echo(f"halt: {data['reason']} (status: {data['status']})")


def _shorten(value: object, width: int = 100) -> str:
    text = str(value).replace("\n", " ")
    return text if len(text) <= width else text[: width - 3] + "..."


@click.group()
def main() -> None:
    """Orchestrated, sandboxed analysis sessions."""


@main.command()
@click.argument("spec_file", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Service config YAML.")
@click.option("--state-root", type=click.Path(file_okay=False), default=None, help="Directory for session state (overrides config).")
@click.option("--sandbox", "sandbox_runtime", type=click.Choice(["local", "docker"]), default=None, help="Sandbox runtime (overrides config).")
@click.option("--image", default=None, help="Container image for the docker runtime.")
@click.option("--max-steps", type=int, default=None)
@click.option("--max-code-retries", type=int, default=None)
@click.option("--history-char-limit", type=int, default=None)
@click.option("--head-tail-lines", type=int, default=None)
@click.option("--tool-mode", type=click.Choice([m.value for m in ToolMode]), default=None)
@click.option("--cell-timeout-ms", type=int, default=None)
@click.option("--network-enabled", is_flag=True, default=False, help="Allow network access inside the sandbox.")
@click.option("--session-id", default=None, help="Fix the session id (reproducible reruns).")
@click.option("--clock-start", default=None, help="ISO timestamp; fixes the clock for reproducible reruns.")
@click.option("--quiet", is_flag=True, default=False, help="No per-step progress output.")
def run(
    spec_file: str,
    config_path: Optional[str],
    state_root: Optional[str],
    sandbox_runtime: Optional[str],
    image: Optional[str],
    max_steps: Optional[int],
    max_code_retries: Optional[int],
    history_char_limit: Optional[int],
    head_tail_lines: Optional[int],
    tool_mode: Optional[str],
    cell_timeout_ms: Optional[int],
    network_enabled: bool,
    session_id: Optional[str],
    clock_start: Optional[str],
    quiet: bool,
) -> None:
    """Run one project brief to completion and export the results."""
    try:
        service_config = _load_config(config_path)
        if state_root is not None:
            service_config.state_root = Path(state_root)
        if sandbox_runtime is not None:
            service_config.sandbox_runtime = sandbox_runtime
        if image is not None:
            service_config.container_image = image
        overrides = {
            key: value
            for key, value in {
                "max_steps": max_steps,
                "max_code_retries": max_code_retries,
                "history_char_limit": history_char_limit,
                "head_tail_lines": head_tail_lines,
                "tool_mode": tool_mode,
                "cell_timeout_ms": cell_timeout_ms,
            }.items()
            if value is not None
        }
        if network_enabled:
            overrides["network_enabled"] = True
        run_config = run_config_from_mapping(overrides, service_config.run_defaults)
        spec = load_project_spec(spec_file)
        clock = system_clock
        if clock_start is not None:
            start = datetime.fromisoformat(clock_start)
            if start.tzinfo is None:
                start = start.replace(tzinfo=timezone.utc)
            clock = fixed_clock(start)
    except (InvalidSpec, InvalidConfig, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)

    try:
        runtime = build_runtime(
            spec,
            run_config,
            service_config,
            session_id=session_id,
            clock=clock,
            observer=None if quiet else _progress_printer,
        )
    except (SandboxError, InvalidConfig, GatewayError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)

    try:
        runtime.autorun()
        exports = runtime.write_exports()
    except Exception as exc:
        click.echo(f"run failed: {exc}", err=True)
        runtime.close()
        sys.exit(2)
    finally:
        runtime.close()

    session = runtime.session
    click.echo(
        f"session {session.session_id}: {session.status.value} "
        f"after {session.step_count} step(s), {len(session.cells)} cell(s)"
    )
    for key, path in exports.items():
        click.echo(f"  {key}: {path}")
    sys.exit(_STATUS_EXIT_CODES.get(session.status, 2))


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Service config YAML.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path: Optional[str], host: Optional[str], port: Optional[int]) -> None:
    """Serve the HTTP API (sessions, exports, assets, event streams)."""
    try:
        service_config = _load_config(config_path)
    except (InvalidSpec, InvalidConfig, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    service_module.serve(service_config, host=host, port=port)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Service config YAML.")
@click.option("--json", "as_json", is_flag=True, default=False, help="Machine-readable output.")
def diagnose(config_path: Optional[str], as_json: bool) -> None:
    """Probe backends, sandbox runtime, and state directory."""
    try:
        service_config = _load_config(config_path)
    except (InvalidSpec, InvalidConfig, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    report = run_diagnostics(service_config)
    if as_json:
        click.echo(json.dumps(report, indent=2, sort_keys=True))
    else:
        for backend in report["backends"]:
            if "error" in backend:
                click.echo(f"backend error: {backend['error']}")
                continue
            auth = {True: "auth ok", False: "auth FAILED", None: "auth unknown"}[backend["auth_ok"]]
            state = "reachable" if backend["reachable"] else "UNREACHABLE"
            click.echo(
                f"backend[{backend['role']}] {backend['backend_id']}: {state}, {auth}"
                + (f", {backend['latency_ms']} ms" if backend["latency_ms"] is not None else "")
                + (f" ({backend['detail']})" if backend["detail"] else "")
            )
        sandbox = report["sandbox"]
        click.echo(
            f"sandbox[{sandbox['runtime']}]: "
            + ("available" if sandbox["available"] else "UNAVAILABLE")
            + (f" ({sandbox['detail']})" if sandbox["detail"] else "")
        )
        state_root = report["state_root"]
        click.echo(
            f"state root {state_root['path']}: "
            + ("writable" if state_root.get("writable") else "NOT WRITABLE")
        )
        click.echo("all checks passed" if report["ok"] else "problems found")
    sys.exit(0 if report["ok"] else 3)


if __name__ == "__main__":
    main()
