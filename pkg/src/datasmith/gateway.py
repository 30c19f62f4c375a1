"""Uniform chat access for the three agent roles.

One gateway fronts per-role backends: a real OpenAI-compatible HTTP backend
for deployment and a scripted backend that replays a fixed list of replies
for deterministic tests.  Requests carry the full rendered context plus a
role-specific system prompt; responses surface both the reply text and the
first native tool call, whichever the caller needs.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Protocol, Sequence, Union

import httpx


class AgentRole(str, Enum):
    ORCHESTRATOR = "orchestrator"
    TEXT = "text"
    CODE = "code"


class GatewayError(Exception):
    """Base class for chat transport and protocol failures."""


class AuthError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class BackendError(GatewayError):
    """The backend answered but not with a usable completion."""


class EmptyScript(GatewayError):
    pass


class ScriptExhausted(BackendError):
    pass


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments_json: str


@dataclass(frozen=True)
class ChatRequest:
    """One agent call: role, prompts, sampling, and optional tool schema."""

    role: AgentRole
    system_prompt: str
    rendered_context: str
    temperature: float
    model: str = ""
    tools: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.tools is not None:
            object.__setattr__(self, "tools", tuple(self.tools))


@dataclass(frozen=True)
class ChatResponse:
    raw_text: str
    native_tool_call: Optional[ToolCall]
    model_id: str
    latency_ms: int


@dataclass(frozen=True)
class DiagnosticReport:
    """Outcome of probing one backend; ``auth_ok`` is None when unknowable."""

    role: str
    backend_id: str
    reachable: bool
    auth_ok: Optional[bool]
    latency_ms: Optional[int]
    detail: str = ""


class Backend(Protocol):
    backend_id: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...

    def probe(self) -> DiagnosticReport: ...


class ScriptedBackend:
    """Replays a fixed list of replies, one per ``complete`` call.

    Plain strings become text replies; ``ToolCall`` items become native
    tool-call replies.  Replay order is the only state, so identical call
    sequences against identically scripted backends give identical responses.
    """

    def __init__(
        self,
        responses: Sequence[Union[str, ToolCall]],
        *,
        backend_id: str = "scripted",
        model_id: str = "scripted",
    ) -> None:
        if not responses:
            raise EmptyScript("a scripted backend needs at least one response")
        self.backend_id = backend_id
        self._model_id = model_id
        self._queue = list(responses)
        self._lock = threading.Lock()

    def remaining(self) -> int:
        with self._lock:
            return len(self._queue)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if not self._queue:
                raise ScriptExhausted(f"scripted backend '{self.backend_id}' ran dry")
            item = self._queue.pop(0)
        if isinstance(item, ToolCall):
            return ChatResponse(
                raw_text="", native_tool_call=item, model_id=self._model_id, latency_ms=0
            )
        return ChatResponse(
            raw_text=item, native_tool_call=None, model_id=self._model_id, latency_ms=0
        )

    def probe(self) -> DiagnosticReport:
        return DiagnosticReport(
            role="",
            backend_id=self.backend_id,
            reachable=True,
            auth_ok=True,
            latency_ms=0,
            detail=f"{self.remaining()} scripted response(s) remaining",
        )


def script_backend(responses: Sequence[Union[str, ToolCall]], **kwargs) -> ScriptedBackend:
    """Convenience constructor; raises ``EmptyScript`` on an empty list."""
    return ScriptedBackend(responses, **kwargs)


class OpenAIChatBackend:
    """Chat-completions client for any OpenAI-compatible server.

    The API key is read from the environment variable named in
    ``api_key_env`` at call time and sent as a bearer token; it is never
    stored in config files or logs.  One reconnect is attempted on transport
    errors before giving up.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: Optional[str] = None,
        timeout_s: float = 120.0,
        backend_id: Optional[str] = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.backend_id = backend_id or f"openai:{self.base_url}"
        self._client = httpx.Client(timeout=timeout_s)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if not key:
                raise AuthError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> httpx.Response:
        url = f"{self.base_url}/chat/completions"
        headers = self._headers()
        try:
            return self._client.post(url, json=payload, headers=headers)
        except httpx.TransportError:
            # One reconnect; a second failure is the caller's problem.
            try:
                return self._client.post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                raise TransportError(f"cannot reach {url}: {exc}") from exc

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload: dict = {
            "model": request.model or self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.rendered_context},
            ],
            "temperature": request.temperature,
        }
        if request.tools:
            payload["tools"] = list(request.tools)
            payload["tool_choice"] = "required"
        started = time.monotonic()
        response = self._post(payload)
        latency_ms = int((time.monotonic() - started) * 1000)
        if response.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {response.status_code})")
        if response.status_code >= 400:
            raise BackendError(
                f"HTTP {response.status_code} from {self.backend_id}: {response.text[:500]}"
            )
        try:
            data = response.json()
            message = data["choices"][0]["message"]
        except (ValueError, KeyError, IndexError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc
        tool_call = None
        calls = message.get("tool_calls") or []
        if calls:
            fn = calls[0].get("function", {})
            tool_call = ToolCall(
                name=str(fn.get("name", "")),
                arguments_json=str(fn.get("arguments", "")),
            )
        return ChatResponse(
            raw_text=message.get("content") or "",
            native_tool_call=tool_call,
            model_id=str(data.get("model", request.model or self.model)),
            latency_ms=latency_ms,
        )

    def probe(self) -> DiagnosticReport:
        url = f"{self.base_url}/models"
        try:
            headers = self._headers()
        except AuthError as exc:
            return DiagnosticReport(
                role="",
                backend_id=self.backend_id,
                reachable=False,
                auth_ok=False,
                latency_ms=None,
                detail=str(exc),
            )
        started = time.monotonic()
        try:
            response = self._client.get(url, headers=headers)
        except httpx.TransportError as exc:
            return DiagnosticReport(
                role="",
                backend_id=self.backend_id,
                reachable=False,
                auth_ok=None,
                latency_ms=None,
                detail=f"unreachable: {exc}",
            )
        latency_ms = int((time.monotonic() - started) * 1000)
        if response.status_code in (401, 403):
            return DiagnosticReport(
                role="",
                backend_id=self.backend_id,
                reachable=True,
                auth_ok=False,
                latency_ms=latency_ms,
                detail=f"HTTP {response.status_code}",
            )
        return DiagnosticReport(
            role="",
            backend_id=self.backend_id,
            reachable=True,
            auth_ok=response.status_code < 400,
            latency_ms=latency_ms,
            detail=f"HTTP {response.status_code}",
        )


class LLMGateway:
    """Routes each request to the backend bound to its role."""

    def __init__(self, backends: Mapping[AgentRole, Backend]) -> None:
        missing = [role.value for role in AgentRole if role not in backends]
        if missing:
            raise GatewayError(f"no backend bound for role(s): {', '.join(missing)}")
        self._backends = dict(backends)

    def backend_for(self, role: AgentRole) -> Backend:
        return self._backends[role]

    def complete(self, request: ChatRequest) -> ChatResponse:
        return self._backends[request.role].complete(request)

    def diagnose(self) -> list[DiagnosticReport]:
        """Probe every bound backend; reports problems, never raises."""
        reports = []
        for role in AgentRole:
            backend = self._backends[role]
            try:
                report = backend.probe()
            except Exception as exc:  # a probe must never take the service down
                report = DiagnosticReport(
                    role=role.value,
                    backend_id=getattr(backend, "backend_id", "?"),
                    reachable=False,
                    auth_ok=None,
                    latency_ms=None,
                    detail=f"probe failed: {exc}",
                )
            else:
                report = DiagnosticReport(
                    role=role.value,
                    backend_id=report.backend_id,
                    reachable=report.reachable,
                    auth_ok=report.auth_ok,
                    latency_ms=report.latency_ms,
                    detail=report.detail,
                )
            reports.append(report)
        return reports


def scripted_gateway(
    responses: Sequence[Union[str, ToolCall]] = (),
    *,
    per_role: Optional[Mapping[AgentRole, Sequence[Union[str, ToolCall]]]] = None,
) -> LLMGateway:
    """Gateway over scripted backends.

    With ``responses``, all three roles share one reply queue (handy when a
    fixture interleaves router and sub-agent replies in call order).  With
    ``per_role``, each role gets its own queue.
    """
    if per_role is not None:
        return LLMGateway(
            {
                role: ScriptedBackend(list(items), backend_id=f"scripted-{role.value}")
                for role, items in per_role.items()
            }
        )
    shared = ScriptedBackend(list(responses))
    return LLMGateway({role: shared for role in AgentRole})
