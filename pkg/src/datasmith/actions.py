"""Decision schema for the router and parsing of model replies into actions.

A decision is exactly one of ``request_text``, ``request_code``, ``finish``.
On the wire it is either a native tool call (name = action, JSON arguments)
or, in emulated mode, the first syntactically valid JSON object found in the
reply text, shaped like ``{"action": "...", ...}``.

One legacy spelling is accepted: ``finish`` may carry its summary under the
key ``purpose`` instead of ``summary_hint``; it is mapped on parse.  Every
other unknown action name or stray top-level field is rejected.
"""

from __future__ import annotations

import json
from typing import Mapping, Optional

from .domain import Finish, OrchestratorAction, RequestCode, RequestText, ToolMode
from .gateway import ChatResponse

ACTION_REQUEST_TEXT = "request_text"
ACTION_REQUEST_CODE = "request_code"
ACTION_FINISH = "finish"
ACTION_NAMES = (ACTION_REQUEST_TEXT, ACTION_REQUEST_CODE, ACTION_FINISH)

#: JSON Schema for the emulated object form (also embedded in prompts).
ACTION_SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "orchestrator_action",
    "type": "object",
    "properties": {
        "action": {"enum": list(ACTION_NAMES)},
        "spec": {"type": "string"},
        "purpose": {"type": "string"},
        "summary_hint": {"type": "string"},
    },
    "required": ["action"],
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"action": {"const": ACTION_REQUEST_TEXT}}},
            "then": {"required": ["spec"]},
        },
        {
            "if": {"properties": {"action": {"const": ACTION_REQUEST_CODE}}},
            "then": {"required": ["purpose"]},
        },
    ],
}

#: Tool definitions for the native tool-call channel (chat-completions shape).
TOOL_DEFINITIONS: list = [
    {
        "type": "function",
        "function": {
            "name": ACTION_REQUEST_TEXT,
            "description": "Add a prose block to the analysis transcript.",
            "parameters": {
                "type": "object",
                "properties": {
                    "spec": {
                        "type": "string",
                        "description": "What the text should talk about.",
                    }
                },
                "required": ["spec"],
                "additionalProperties": False,
            },
        },
    },
    {
        "type": "function",
        "function": {
            "name": ACTION_REQUEST_CODE,
            "description": "Add an executable code block to the transcript.",
            "parameters": {
                "type": "object",
                "properties": {
                    "purpose": {
                        "type": "string",
                        "description": "What the code should achieve.",
                    }
                },
                "required": ["purpose"],
                "additionalProperties": False,
            },
        },
    },
    {
        "type": "function",
        "function": {
            "name": ACTION_FINISH,
            "description": "Declare the task complete.",
            "parameters": {
                "type": "object",
                "properties": {
                    "summary_hint": {
                        "type": "string",
                        "description": "Optional seed for the closing summary.",
                    }
                },
                "required": [],
                "additionalProperties": False,
            },
        },
    },
]


class ActionParseError(Exception):
    """A model reply could not be read as exactly one valid action."""


class UnknownAction(ActionParseError):
    pass


class MissingField(ActionParseError):
    pass


class UnexpectedField(ActionParseError):
    pass


class NoJsonFound(ActionParseError):
    pass


class NoToolCall(ActionParseError):
    pass


def extract_first_json_object(text: str) -> Optional[dict]:
    """Return the first syntactically valid JSON object embedded in ``text``.

    Scans left to right; fenced blocks need no special casing because the
    decoder is simply retried at every ``{``.  Non-object JSON (arrays,
    strings) is skipped.
    """
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text, start)
        except ValueError:
            pass
        else:
            if isinstance(value, dict):
                return value
        start = text.find("{", start + 1)
    return None


def _require_str(obj: Mapping[str, object], key: str, action: str) -> str:
    if key not in obj:
        raise MissingField(f"{action} requires field '{key}'")
    value = obj[key]
    if not isinstance(value, str):
        raise UnexpectedField(f"field '{key}' of {action} must be a string")
    return value


def _reject_extras(obj: Mapping[str, object], action: str, allowed: set) -> None:
    extras = sorted(set(obj) - allowed)
    if extras:
        raise UnexpectedField(f"unexpected field(s) for {action}: {', '.join(extras)}")


def action_from_fields(action: str, fields: Mapping[str, object]) -> OrchestratorAction:
    """Build an action from its name and argument mapping, strictly.

    ``fields`` must contain exactly the arguments of the named action; the
    single tolerated deviation is ``finish`` arriving with the legacy key
    ``purpose``, which becomes ``summary_hint``.
    """
    if action == ACTION_REQUEST_TEXT:
        _reject_extras(fields, action, {"spec"})
        return RequestText(spec=_require_str(fields, "spec", action))
    if action == ACTION_REQUEST_CODE:
        _reject_extras(fields, action, {"purpose"})
        return RequestCode(purpose=_require_str(fields, "purpose", action))
    if action == ACTION_FINISH:
        _reject_extras(fields, action, {"summary_hint", "purpose"})
        if "summary_hint" in fields and "purpose" in fields:
            raise UnexpectedField("finish carries both summary_hint and purpose")
        if "purpose" in fields:
            return Finish(summary_hint=_require_str(fields, "purpose", action))
        if "summary_hint" in fields:
            return Finish(summary_hint=_require_str(fields, "summary_hint", action))
        return Finish()
    raise UnknownAction(f"unknown action '{action}'")


def action_from_object(obj: Mapping[str, object]) -> OrchestratorAction:
    """Validate the emulated object form ``{"action": ..., ...}``."""
    if "action" not in obj:
        raise MissingField("object lacks the 'action' field")
    action = obj["action"]
    if not isinstance(action, str) or action not in ACTION_NAMES:
        raise UnknownAction(f"unknown action {action!r}")
    fields = {key: value for key, value in obj.items() if key != "action"}
    allowed = {"spec", "purpose", "summary_hint"}
    _reject_extras(fields, action, allowed)
    return action_from_fields(action, fields)


def parse_action(response: ChatResponse, mode: ToolMode) -> OrchestratorAction:
    """Read one action out of a chat reply, per the configured wire mode."""
    if mode is ToolMode.NATIVE_TOOL_CALLS:
        call = response.native_tool_call
        if call is None:
            raise NoToolCall("reply carried no native tool call")
        try:
            arguments = json.loads(call.arguments_json) if call.arguments_json.strip() else {}
        except ValueError as exc:
            raise ActionParseError(f"tool arguments are not valid JSON: {exc}") from exc
        if not isinstance(arguments, dict):
            raise ActionParseError("tool arguments must be a JSON object")
        if call.name not in ACTION_NAMES:
            raise UnknownAction(f"unknown action '{call.name}'")
        return action_from_fields(call.name, arguments)
    obj = extract_first_json_object(response.raw_text)
    if obj is None:
        raise NoJsonFound("no JSON object found in reply text")
    return action_from_object(obj)
