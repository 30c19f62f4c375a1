"""Host-side control of the persistent cell interpreter.

Two runtimes share one protocol (see ``cellrunner``):

- ``docker``: the interpreter runs in a container with three bind mounts
  (workspace read-write at /workspace, data read-only at /workspace/data,
  assets read-write at /workspace/assets) and, by default, no network.
- ``local``: the interpreter is a plain subprocess with the same directory
  layout built from symlinks.  Execution semantics (persistence, capture,
  timeouts, artifact tracking) are identical, but *isolation* guarantees
  (read-only data, no network, no host paths) need the container runtime.

A cell timeout kills and relaunches the interpreter: the session loses its
in-memory state but the sandbox stays usable, and the result says so.
"""

from __future__ import annotations

import os
import select
import shutil
import struct
import subprocess
import sys
import time
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import cellrunner
from .domain import Clock, ExecStatus, ExecutionResult, RunConfig, system_clock

DEFAULT_IMAGE = "python:3.12-slim"
RUNTIME_LOCAL = "local"
RUNTIME_DOCKER = "docker"
_STARTUP_TIMEOUT_S = {RUNTIME_LOCAL: 30.0, RUNTIME_DOCKER: 120.0}
_RUNNER_DIRNAME = ".datasmith"

# Engine-owned assets never count as cell artifacts.
_ARTIFACT_EXCLUDES = ("debug.log", "runs")


class SandboxError(Exception):
    pass


class RuntimeUnavailable(SandboxError):
    pass


class ImageMissing(SandboxError):
    pass


class DataPathMissing(SandboxError):
    pass


class SandboxDead(SandboxError):
    pass


@dataclass
class SandboxHandle:
    session_id: str
    container_id: str
    workspace_mount: Path
    data_mount: Optional[Path]
    assets_mount: Path
    alive: bool = True


def _write_frame(stream, obj: dict) -> None:
    body = json.dumps(obj, ensure_ascii=False).encode("utf-8")
    stream.write(struct.pack(">I", len(body)))
    stream.write(body)
    stream.flush()


class _FrameReader:
    """Reads length-prefixed frames from a pipe fd under a deadline."""

    def __init__(self, fd: int) -> None:
        self._fd = fd
        self._buffer = bytearray()
        self.eof = False

    def _fill(self, deadline: float) -> bool:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return False
        ready, _, _ = select.select([self._fd], [], [], remaining)
        if not ready:
            return False
        chunk = os.read(self._fd, 1 << 16)
        if not chunk:
            self.eof = True
            return False
        self._buffer.extend(chunk)
        return True

    def read_frame(self, timeout_s: float) -> Optional[dict]:
        """A parsed frame, or None on timeout.  Raises SandboxDead on EOF."""
        deadline = time.monotonic() + timeout_s
        while True:
            if len(self._buffer) >= 4:
                (length,) = struct.unpack(">I", bytes(self._buffer[:4]))
                if length > cellrunner.MAX_FRAME_BYTES:
                    raise SandboxDead("oversized frame from interpreter")
                if len(self._buffer) >= 4 + length:
                    body = bytes(self._buffer[4 : 4 + length])
                    del self._buffer[: 4 + length]
                    return json.loads(body.decode("utf-8"))
            if self.eof:
                raise SandboxDead("interpreter closed its output stream")
            if not self._fill(deadline):
                if self.eof:
                    raise SandboxDead("interpreter closed its output stream")
                return None


class Sandbox:
    """One session's interpreter plus its mounted directories."""

    def __init__(
        self,
        handle: SandboxHandle,
        *,
        runtime: str,
        image: str,
        network_enabled: bool,
        default_timeout_ms: int,
        clock: Clock = system_clock,
    ) -> None:
        self.handle = handle
        self.runtime = runtime
        self.image = image
        self.network_enabled = network_enabled
        self.default_timeout_ms = default_timeout_ms
        self.clock = clock
        self._proc: Optional[subprocess.Popen] = None
        self._reader: Optional[_FrameReader] = None
        self._next_frame_id = 1
        self._launch_seq = 0
        self._log_path = handle.workspace_mount / _RUNNER_DIRNAME / "sandbox.log"

    # -- lifecycle ---------------------------------------------------------

    def _container_name(self) -> str:
        return f"ds-{self.handle.session_id[:12]}-{os.getpid()}-{self._launch_seq}"

    def _launch_command(self) -> list[str]:
        if self.runtime == RUNTIME_LOCAL:
            runner = self.handle.workspace_mount / _RUNNER_DIRNAME / "cellrunner.py"
            return [sys.executable, "-u", str(runner)]
        name = self._container_name()
        self.handle.container_id = name
        cmd = ["docker", "run", "--rm", "-i", "--name", name]
        if not self.network_enabled:
            cmd += ["--network", "none"]
        cmd += ["-v", f"{self.handle.workspace_mount}:/workspace"]
        if self.handle.data_mount is not None:
            cmd += ["-v", f"{self.handle.data_mount}:/workspace/data:ro"]
        cmd += ["-v", f"{self.handle.assets_mount}:/workspace/assets"]
        cmd += ["-w", "/workspace"]
        cmd += ["-e", "MPLBACKEND=Agg", "-e", "PYTHONUNBUFFERED=1"]
        cmd += [self.image, "python", f"/workspace/{_RUNNER_DIRNAME}/cellrunner.py"]
        return cmd

    def _launch(self) -> None:
        self._launch_seq += 1
        env = None
        cwd = None
        if self.runtime == RUNTIME_LOCAL:
            env = dict(os.environ)
            env.update({"MPLBACKEND": "Agg", "PYTHONUNBUFFERED": "1"})
            cwd = str(self.handle.workspace_mount)
        log = open(self._log_path, "ab")
        try:
            self._proc = subprocess.Popen(
                self._launch_command(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=log,
                cwd=cwd,
                env=env,
            )
        finally:
            log.close()
        self._reader = _FrameReader(self._proc.stdout.fileno())
        # Readiness ping: an empty cell must round-trip before we accept work.
        ping_id = 0
        _write_frame(self._proc.stdin, {"id": ping_id, "source": ""})
        try:
            reply = self._reader.read_frame(_STARTUP_TIMEOUT_S[self.runtime])
        except SandboxDead as exc:
            detail = self._log_tail()
            self._kill_process()
            raise RuntimeUnavailable(f"interpreter failed to start: {exc}. {detail}") from exc
        if reply is None or reply.get("id") != ping_id:
            self._kill_process()
            raise RuntimeUnavailable(f"interpreter did not answer readiness ping. {self._log_tail()}")

    def _log_tail(self) -> str:
        try:
            text = self._log_path.read_text(encoding="utf-8", errors="replace")
        except OSError:
            return ""
        lines = text.splitlines()[-5:]
        return ("last log lines: " + " | ".join(lines)) if lines else ""

    def _kill_process(self) -> None:
        proc = self._proc
        self._proc = None
        self._reader = None
        if proc is None:
            return
        if self.runtime == RUNTIME_DOCKER:
            subprocess.run(
                ["docker", "kill", self.handle.container_id],
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                check=False,
            )
        try:
            proc.kill()
        except OSError:
            pass
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            pass

    def _restart(self) -> None:
        self._kill_process()
        self._launch()

    def close(self) -> None:
        """Stop the interpreter and mark the sandbox dead.  Idempotent."""
        self._kill_process()
        self.handle.alive = False

    # -- execution ---------------------------------------------------------

    def _scan_artifacts(self) -> dict:
        state = {}
        root = self.handle.assets_mount
        if not root.is_dir():
            return state
        for path in root.rglob("*"):
            if not path.is_file():
                continue
            rel = path.relative_to(root).as_posix()
            if rel in _ARTIFACT_EXCLUDES or rel.split("/", 1)[0] in _ARTIFACT_EXCLUDES:
                continue
            try:
                stat = path.stat()
            except OSError:
                continue
            state[rel] = (stat.st_size, stat.st_mtime_ns)
        return state

    def execute_cell(self, source: str, timeout_ms: Optional[int] = None) -> ExecutionResult:
        """Run one cell to completion and capture everything it produced.

        stdout/stderr are captured in full; truncation for prompts happens in
        the history renderer, never here.  ``artifacts_written`` lists paths
        (relative to the assets mount) created or modified by the cell.
        """
        if not self.handle.alive:
            raise SandboxDead("sandbox is closed")
        if self._proc is None:
            self._launch()
        budget_ms = self.default_timeout_ms if timeout_ms is None else timeout_ms
        before = self._scan_artifacts()
        frame_id = self._next_frame_id
        self._next_frame_id += 1
        started = self.clock()
        try:
            _write_frame(self._proc.stdin, {"id": frame_id, "source": source})
            reply = self._reader.read_frame(budget_ms / 1000.0)
        except (SandboxDead, OSError, BrokenPipeError):
            # The interpreter died mid-cell (e.g. os._exit or a crash): the
            # cell failed, but the sandbox stays usable on a fresh interpreter.
            self._restart()
            return self._finish_result(
                started,
                before,
                status=ExecStatus.ERROR,
                stdout="",
                stderr=(
                    "The interpreter exited while running this cell; it was "
                    "restarted and session variables were lost."
                ),
            )
        if reply is None:
            self._restart()
            return self._finish_result(
                started,
                before,
                status=ExecStatus.TIMEOUT,
                stdout="",
                stderr=(
                    f"Cell execution exceeded {budget_ms} ms and was killed; the "
                    "interpreter was restarted and session variables were lost."
                ),
            )
        if reply.get("id") != frame_id:
            self._restart()
            return self._finish_result(
                started,
                before,
                status=ExecStatus.ERROR,
                stdout="",
                stderr=(
                    "Protocol desync with the interpreter; it was restarted "
                    "and session variables were lost."
                ),
            )
        status = ExecStatus.SUCCESS if reply.get("status") == "success" else ExecStatus.ERROR
        stderr = str(reply.get("stderr", ""))
        if status is ExecStatus.ERROR and not stderr:
            stderr = "cell failed without diagnostics"
        return self._finish_result(
            started,
            before,
            status=status,
            stdout=str(reply.get("stdout", "")),
            stderr=stderr,
        )

    def _finish_result(
        self,
        started,
        artifacts_before: dict,
        *,
        status: ExecStatus,
        stdout: str,
        stderr: str,
    ) -> ExecutionResult:
        duration_ms = max(0, int((self.clock() - started).total_seconds() * 1000))
        after = self._scan_artifacts()
        written = sorted(
            rel for rel, sig in after.items() if artifacts_before.get(rel) != sig
        )
        return ExecutionResult(
            attempt=1,
            status=status,
            stdout=stdout,
            stderr=stderr,
            duration_ms=duration_ms,
            artifacts_written=tuple(written),
        )

    # -- inspection --------------------------------------------------------

    def snapshot_state_digest(self) -> str:
        """Sorted ``path size`` lines for workspace and assets files.

        Lists names and byte sizes only, never contents; used for audit and
        cheap change detection.
        """
        lines = []
        workspace = self.handle.workspace_mount
        for path in workspace.rglob("*"):
            rel = path.relative_to(workspace).as_posix()
            top = rel.split("/", 1)[0]
            if top in (_RUNNER_DIRNAME, "data", "assets"):
                continue
            if path.is_file() and not path.is_symlink():
                lines.append(f"workspace/{rel} {path.stat().st_size}")
        assets = self.handle.assets_mount
        if assets.is_dir():
            for path in assets.rglob("*"):
                if path.is_file():
                    rel = path.relative_to(assets).as_posix()
                    lines.append(f"assets/{rel} {path.stat().st_size}")
        return "\n".join(sorted(lines))


def _docker_available() -> bool:
    if shutil.which("docker") is None:
        return False
    probe = subprocess.run(
        ["docker", "info"],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        check=False,
    )
    return probe.returncode == 0


def _ensure_image(image: str) -> None:
    inspect = subprocess.run(
        ["docker", "image", "inspect", image],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        check=False,
    )
    if inspect.returncode == 0:
        return
    pull = subprocess.run(
        ["docker", "pull", image],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        check=False,
    )
    if pull.returncode != 0:
        raise ImageMissing(f"image '{image}' is neither present nor pullable")


def _materialize_link(link: Path, target: Path) -> None:
    if link.is_symlink() or link.exists():
        return
    link.symlink_to(target, target_is_directory=True)


def open_sandbox(
    session_id: str,
    *,
    workspace_root: Path,
    assets_mount: Path,
    config: RunConfig,
    data_location: str = "",
    runtime: str = RUNTIME_LOCAL,
    image: str = DEFAULT_IMAGE,
    clock: Clock = system_clock,
) -> Sandbox:
    """Provision directories, start the interpreter, and verify readiness.

    Layout seen by cell code, identical in both runtimes: the working
    directory is the workspace; input data (if any) appears under ``data/``;
    artifacts belong under ``assets/``.  Remote data locations (scheme URIs)
    are not mounted; code is expected to fetch them itself, network policy
    permitting.
    """
    if runtime not in (RUNTIME_LOCAL, RUNTIME_DOCKER):
        raise RuntimeUnavailable(f"unknown sandbox runtime '{runtime}'")
    if runtime == RUNTIME_DOCKER:
        if not _docker_available():
            raise RuntimeUnavailable("docker is not installed or the daemon is not running")
        _ensure_image(image)

    data_mount: Optional[Path] = None
    if data_location and "://" not in data_location:
        data_path = Path(data_location).expanduser()
        if not data_path.exists():
            raise DataPathMissing(f"data location does not exist: {data_location}")
        data_mount = data_path.resolve()

    workspace = workspace_root / session_id / "workspace"
    workspace.mkdir(parents=True, exist_ok=True)
    internal = workspace / _RUNNER_DIRNAME
    internal.mkdir(exist_ok=True)
    shutil.copyfile(cellrunner.__file__, internal / "cellrunner.py")
    assets_mount.mkdir(parents=True, exist_ok=True)

    if runtime == RUNTIME_LOCAL:
        _materialize_link(workspace / "assets", assets_mount.resolve())
        if data_mount is not None:
            _materialize_link(workspace / "data", data_mount)

    handle = SandboxHandle(
        session_id=session_id,
        container_id="",
        workspace_mount=workspace,
        data_mount=data_mount,
        assets_mount=assets_mount,
    )
    sandbox = Sandbox(
        handle,
        runtime=runtime,
        image=image,
        network_enabled=config.network_enabled,
        default_timeout_ms=config.cell_timeout_ms,
        clock=clock,
    )
    sandbox._launch()
    return sandbox
