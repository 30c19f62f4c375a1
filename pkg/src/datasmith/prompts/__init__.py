"""Loads the versioned system prompts shipped as package data.

Prompts are files, not string literals, so a prompt revision is a reviewable
diff and the active version is explicit.  ``PROMPT_VERSION`` names the file
suffix currently in use.
"""

from __future__ import annotations

from importlib import resources

from ..domain import ToolMode
from ..gateway import AgentRole

PROMPT_VERSION = "v1"

_FILES = {
    AgentRole.ORCHESTRATOR: "orchestrator",
    AgentRole.TEXT: "text_agent",
    AgentRole.CODE: "code_agent",
}


def _read(name: str) -> str:
    ref = resources.files("datasmith.prompts").joinpath(f"{name}.{PROMPT_VERSION}.md")
    return ref.read_text(encoding="utf-8")


def system_prompt(role: AgentRole, tool_mode: ToolMode = ToolMode.NATIVE_TOOL_CALLS) -> str:
    """The system prompt for a role; the router prompt adapts to the wire mode."""
    text = _read(_FILES[role]).strip()
    if role is AgentRole.ORCHESTRATOR and tool_mode is ToolMode.EMULATED_JSON:
        text = text + "\n\n" + _read("orchestrator_emulated").strip()
    return text
