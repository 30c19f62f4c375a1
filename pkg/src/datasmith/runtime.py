"""Wires one session to its gateway, sandbox, and assets directory.

The runtime is what the CLI and the HTTP service actually drive: it owns
lifecycle (open/reset/close), mirrors every trace record into the debug
log, and forwards records to an optional observer (console printer, event
stream).
"""

from __future__ import annotations

import shutil
from pathlib import Path
from typing import Callable, Optional

from . import orchestrator
from .assets import AssetKind, AssetsDir, _spec_to_dict, write_asset, write_run_bundle
from .config import ServiceConfig, build_gateway
from .domain import (
    Clock,
    ProjectSpec,
    RunConfig,
    Session,
    SessionStatus,
    TraceRecord,
    new_session,
    reset_session,
    system_clock,
)
from .gateway import LLMGateway
from .orchestrator import StepOutcome
from .sandbox import RUNTIME_DOCKER, Sandbox, _docker_available, open_sandbox

TraceObserver = Callable[[Session, TraceRecord], None]


class SessionRuntime:
    """One live session plus everything it runs on."""

    def __init__(
        self,
        session: Session,
        gateway: LLMGateway,
        sandbox: Sandbox,
        assets: AssetsDir,
        *,
        observer: Optional[TraceObserver] = None,
    ) -> None:
        self.session = session
        self.gateway = gateway
        self.sandbox = sandbox
        self.assets = assets
        self._observer = observer

    # -- trace fan-out -------------------------------------------------------

    def _on_trace(self, session: Session, record: TraceRecord) -> None:
        summary = ", ".join(f"{k}={_brief(v)}" for k, v in sorted(record.data.items()))
        self.assets.log(f"[{record.kind}] {summary}")
        if self._observer is not None:
            self._observer(session, record)

    # -- driving -------------------------------------------------------------

    def step(self) -> StepOutcome:
        return orchestrator.step(
            self.session, self.gateway, self.sandbox, observer=self._on_trace
        )

    def autorun(self, should_continue: Optional[Callable[[], bool]] = None) -> Session:
        return orchestrator.autorun(
            self.session,
            self.gateway,
            self.sandbox,
            observer=self._on_trace,
            should_continue=should_continue,
        )

    def reset(self) -> Session:
        """Fresh transcript, fresh interpreter; brief and settings stay."""
        reset_session(self.session)
        self.sandbox.close()
        self.sandbox = open_sandbox(
            self.session.session_id,
            workspace_root=self.sandbox.handle.workspace_mount.parent.parent,
            assets_mount=self.assets.root,
            config=self.session.config,
            data_location=self.session.spec.data_location,
            runtime=self.sandbox.runtime,
            image=self.sandbox.image,
            clock=self.session.clock,
        )
        self.assets.log("session reset")
        return self.session

    def replace_session(self, session: Session) -> None:
        """Swap in an imported session (same id) and recycle the interpreter."""
        session.clock = self.session.clock
        self.session = session
        self.sandbox.close()
        self.sandbox = open_sandbox(
            session.session_id,
            workspace_root=self.sandbox.handle.workspace_mount.parent.parent,
            assets_mount=self.assets.root,
            config=session.config,
            data_location=session.spec.data_location,
            runtime=self.sandbox.runtime,
            image=self.sandbox.image,
            clock=session.clock,
        )
        self.assets.log("session imported")

    def write_exports(self) -> dict:
        return write_run_bundle(self.session, self.assets)

    def close(self) -> None:
        self.sandbox.close()


def _brief(value: object) -> str:
    text = str(value)
    return text if len(text) <= 80 else text[:77] + "..."


def build_runtime(
    spec: ProjectSpec,
    run_config: RunConfig,
    service_config: ServiceConfig,
    *,
    session_id: Optional[str] = None,
    clock: Clock = system_clock,
    gateway: Optional[LLMGateway] = None,
    observer: Optional[TraceObserver] = None,
) -> SessionRuntime:
    """Create the session, its assets directory, and its sandbox, eagerly.

    Eager sandbox startup means a misconfigured runtime or missing data path
    fails at creation time, not in the middle of a run.
    """
    session = new_session(spec, run_config, session_id=session_id, clock=clock)
    state_root = Path(service_config.state_root)
    assets = AssetsDir.create(state_root / session.session_id / "assets", clock=clock)
    write_asset(assets, AssetKind.SPEC, _spec_to_dict(spec))
    sandbox = open_sandbox(
        session.session_id,
        workspace_root=state_root,
        assets_mount=assets.root,
        config=run_config,
        data_location=spec.data_location,
        runtime=service_config.sandbox_runtime,
        image=service_config.container_image,
        clock=clock,
    )
    assets.log(f"session created (sandbox={service_config.sandbox_runtime})")
    return SessionRuntime(
        session,
        gateway if gateway is not None else build_gateway(service_config),
        sandbox,
        assets,
        observer=observer,
    )


def run_diagnostics(service_config: ServiceConfig) -> dict:
    """Check backends, sandbox runtime, and state root; report, never raise."""
    report: dict = {"ok": True, "backends": [], "sandbox": {}, "state_root": {}}
    try:
        gateway = build_gateway(service_config)
        for item in gateway.diagnose():
            entry = {
                "role": item.role,
                "backend_id": item.backend_id,
                "reachable": item.reachable,
                "auth_ok": item.auth_ok,
                "latency_ms": item.latency_ms,
                "detail": item.detail,
            }
            report["backends"].append(entry)
            if not item.reachable or item.auth_ok is False:
                report["ok"] = False
    except Exception as exc:
        report["backends"].append({"error": str(exc)})
        report["ok"] = False

    runtime_kind = service_config.sandbox_runtime
    sandbox_report = {"runtime": runtime_kind, "available": True, "detail": ""}
    if runtime_kind == RUNTIME_DOCKER:
        if shutil.which("docker") is None:
            sandbox_report.update(available=False, detail="docker binary not found")
        elif not _docker_available():
            sandbox_report.update(available=False, detail="docker daemon not reachable")
        else:
            sandbox_report["detail"] = f"image: {service_config.container_image}"
    else:
        sandbox_report["detail"] = "local subprocess runtime (no isolation guarantees)"
    if not sandbox_report["available"]:
        report["ok"] = False
    report["sandbox"] = sandbox_report

    state_root = Path(service_config.state_root)
    try:
        state_root.mkdir(parents=True, exist_ok=True)
        probe = state_root / ".diagnostics-probe"
        probe.write_text("ok", encoding="utf-8")
        probe.unlink()
        report["state_root"] = {"path": str(state_root), "writable": True}
    except OSError as exc:
        report["state_root"] = {"path": str(state_root), "writable": False, "detail": str(exc)}
        report["ok"] = False
    return report
