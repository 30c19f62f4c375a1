"""File-backed configuration: service settings, backends, project briefs.

Config files are YAML.  API keys never appear in them; a backend entry
names the environment variable that holds its key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import yaml

from .domain import AgentSettings, InvalidConfig, InvalidSpec, ProjectSpec, RunConfig, ToolMode
from .gateway import (
    AgentRole,
    Backend,
    LLMGateway,
    OpenAIChatBackend,
    ScriptedBackend,
    ToolCall,
)
from .sandbox import DEFAULT_IMAGE, RUNTIME_DOCKER, RUNTIME_LOCAL


@dataclass(frozen=True)
class BackendDef:
    """One backend entry: a real chat endpoint or a scripted reply list."""

    kind: str
    base_url: str = ""
    model: str = ""
    api_key_env: Optional[str] = None
    timeout_s: float = 120.0
    responses: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in ("openai", "scripted"):
            raise InvalidConfig(f"unknown backend kind {self.kind!r}")
        if self.kind == "openai" and not self.base_url:
            raise InvalidConfig("an openai backend needs a base_url")
        if self.kind == "scripted" and not self.responses:
            raise InvalidConfig("a scripted backend needs at least one response")


@dataclass
class ServiceConfig:
    """Everything the CLI and HTTP service need beyond the per-run knobs."""

    listen_host: str = "127.0.0.1"
    listen_port: int = 8000
    state_root: Path = Path("datasmith-state")
    sandbox_runtime: str = RUNTIME_DOCKER
    container_image: str = DEFAULT_IMAGE
    backends: dict = field(default_factory=dict)
    run_defaults: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self) -> None:
        self.state_root = Path(self.state_root)
        if self.sandbox_runtime not in (RUNTIME_LOCAL, RUNTIME_DOCKER):
            raise InvalidConfig(f"unknown sandbox runtime {self.sandbox_runtime!r}")

    def backend_def(self, role: AgentRole) -> BackendDef:
        entry = self.backends.get(role.value) or self.backends.get("default")
        if entry is None:
            raise InvalidConfig(f"no backend configured for role '{role.value}' and no default")
        return entry


def _scripted_item(item: object) -> Union[str, ToolCall]:
    if isinstance(item, str):
        return item
    if isinstance(item, Mapping) and "tool" in item:
        import json

        arguments = item.get("arguments", {})
        return ToolCall(
            name=str(item["tool"]),
            arguments_json=json.dumps(arguments) if not isinstance(arguments, str) else arguments,
        )
    raise InvalidConfig(f"unusable scripted response entry: {item!r}")


def backend_def_from_mapping(doc: Mapping) -> BackendDef:
    allowed = {"kind", "base_url", "model", "api_key_env", "timeout_s", "responses"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown backend field(s): {', '.join(unknown)}")
    kind = str(doc.get("kind", "openai"))
    responses = tuple(_scripted_item(item) for item in doc.get("responses", []))
    return BackendDef(
        kind=kind,
        base_url=str(doc.get("base_url", "")),
        model=str(doc.get("model", "")),
        api_key_env=doc.get("api_key_env"),
        timeout_s=float(doc.get("timeout_s", 120.0)),
        responses=responses,
    )


def _agent_settings_from_mapping(doc: Mapping, base: AgentSettings) -> AgentSettings:
    allowed = {"model", "temperature"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown agent setting(s): {', '.join(unknown)}")
    return AgentSettings(
        model=str(doc.get("model", base.model)),
        temperature=float(doc.get("temperature", base.temperature)),
    )


def run_config_from_mapping(doc: Mapping, base: Optional[RunConfig] = None) -> RunConfig:
    """A RunConfig built from a partial mapping over a base (defaults)."""
    base = base if base is not None else RunConfig()
    allowed = {
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
    }
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown run setting(s): {', '.join(unknown)}")

    def _agent(key: str, fallback: AgentSettings) -> AgentSettings:
        sub = doc.get(key)
        if sub is None:
            return fallback
        if not isinstance(sub, Mapping):
            raise InvalidConfig(f"{key} must be a mapping")
        return _agent_settings_from_mapping(sub, fallback)

    mode = doc.get("tool_mode", base.tool_mode)
    if not isinstance(mode, ToolMode):
        try:
            mode = ToolMode(str(mode))
        except ValueError:
            raise InvalidConfig(f"unknown tool_mode {mode!r}") from None
    return RunConfig(
        max_steps=int(doc.get("max_steps", base.max_steps)),
        max_code_retries=int(doc.get("max_code_retries", base.max_code_retries)),
        history_char_limit=int(doc.get("history_char_limit", base.history_char_limit)),
        head_tail_lines=int(doc.get("head_tail_lines", base.head_tail_lines)),
        orchestrator=_agent("orchestrator", base.orchestrator),
        text_agent=_agent("text_agent", base.text_agent),
        code_agent=_agent("code_agent", base.code_agent),
        tool_mode=mode,
        cell_timeout_ms=int(doc.get("cell_timeout_ms", base.cell_timeout_ms)),
        network_enabled=bool(doc.get("network_enabled", base.network_enabled)),
    )


def service_config_from_mapping(doc: Mapping) -> ServiceConfig:
    allowed = {
        "listen_host",
        "listen_port",
        "state_root",
        "sandbox_runtime",
        "container_image",
        "backends",
        "run_defaults",
    }
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown service setting(s): {', '.join(unknown)}")
    backends = {}
    raw_backends = doc.get("backends", {})
    if not isinstance(raw_backends, Mapping):
        raise InvalidConfig("backends must be a mapping")
    for name, entry in raw_backends.items():
        if name != "default" and name not in {role.value for role in AgentRole}:
            raise InvalidConfig(f"unknown backend role {name!r}")
        if not isinstance(entry, Mapping):
            raise InvalidConfig(f"backend entry {name!r} must be a mapping")
        backends[str(name)] = backend_def_from_mapping(entry)
    run_defaults_doc = doc.get("run_defaults", {})
    if not isinstance(run_defaults_doc, Mapping):
        raise InvalidConfig("run_defaults must be a mapping")
    return ServiceConfig(
        listen_host=str(doc.get("listen_host", "127.0.0.1")),
        listen_port=int(doc.get("listen_port", 8000)),
        state_root=Path(doc.get("state_root", "datasmith-state")),
        sandbox_runtime=str(doc.get("sandbox_runtime", RUNTIME_DOCKER)),
        container_image=str(doc.get("container_image", DEFAULT_IMAGE)),
        backends=backends,
        run_defaults=run_config_from_mapping(run_defaults_doc),
    )


def load_service_config(path: Union[str, Path]) -> ServiceConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"config file is not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, Mapping):
        raise InvalidConfig("config file must hold a mapping")
    return service_config_from_mapping(doc)


def build_gateway(config: ServiceConfig) -> LLMGateway:
    """Instantiate per-role backends from config (shared when identical)."""
    built: dict = {}
    backends: dict = {}
    for role in AgentRole:
        definition = config.backend_def(role)
        key = id(definition)
        if key not in built:
            built[key] = _instantiate_backend(definition, role)
        backends[role] = built[key]
    return LLMGateway(backends)


def _instantiate_backend(definition: BackendDef, role: AgentRole) -> Backend:
    if definition.kind == "scripted":
        return ScriptedBackend(list(definition.responses), backend_id=f"scripted-{role.value}")
    return OpenAIChatBackend(
        definition.base_url,
        definition.model,
        api_key_env=definition.api_key_env,
        timeout_s=definition.timeout_s,
    )


def project_spec_from_mapping(doc: Mapping) -> ProjectSpec:
    allowed = {
        "task_description",
        "general_instructions",
        "data_description",
        "data_location",
        "metrics",
        "inputs",
        "outputs",
        "special_instructions",
    }
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InvalidSpec(f"unknown project field(s): {', '.join(unknown)}")
    raw_pairs = doc.get("general_instructions", [])
    if not isinstance(raw_pairs, Sequence) or isinstance(raw_pairs, str):
        raise InvalidSpec("general_instructions must be a list")
    pairs = []
    for item in raw_pairs:
        # Accept both `- key: value` entries and `- [key, value]` pairs.
        if isinstance(item, Mapping) and len(item) == 1:
            ((key, value),) = item.items()
            pairs.append((str(key), str(value)))
        elif isinstance(item, Sequence) and not isinstance(item, str) and len(item) == 2:
            pairs.append((str(item[0]), str(item[1])))
        else:
            raise InvalidSpec(f"general_instructions entry is not a key/value pair: {item!r}")
    task = doc.get("task_description")
    if not isinstance(task, str):
        raise InvalidSpec("task_description is required")
    return ProjectSpec(
        task_description=task,
        general_instructions=tuple(pairs),
        data_description=str(doc.get("data_description", "")),
        data_location=str(doc.get("data_location", "")),
        metrics=str(doc.get("metrics", "")),
        inputs=str(doc.get("inputs", "")),
        outputs=str(doc.get("outputs", "")),
        special_instructions=str(doc.get("special_instructions", "")),
    )


def load_project_spec(path: Union[str, Path]) -> ProjectSpec:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"project file is not valid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise InvalidSpec("project file must hold a mapping")
    return project_spec_from_mapping(doc)


def dump_example_service_config() -> str:
    """A commented starter config (printed by ``datasmith diagnose --example``)."""
    return """\
listen_host: 127.0.0.1
listen_port: 8000
state_root: ./datasmith-state
sandbox_runtime: docker        # or local: same semantics, no isolation
container_image: python:3.12-slim
backends:
  default:
    kind: openai
    base_url: http://localhost:8000/v1
    model: my-model
    api_key_env: DATASMITH_API_KEY
run_defaults:
  max_steps: 30
  max_code_retries: 3
  history_char_limit: 10000
  head_tail_lines: 20
  tool_mode: native_tool_calls
  cell_timeout_ms: 120000
  network_enabled: false
"""
