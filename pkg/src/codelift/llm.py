"""Chat-completion access for the agents.

Two backends share one ``complete(messages, tools)`` method: an HTTP client
for any OpenAI-compatible endpoint, and :class:`ScriptedBackend`, which
replays canned responses so the whole pipeline runs offline and
deterministically. :func:`run_tool_loop` is the tool-calling loop every
agent stage is built on.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Union

import httpx

from .errors import (
    AuthError,
    LLMError,
    ProtocolError,
    RateLimited,
    RoundLimitExceeded,
    ScriptExhausted,
    Timeout,
    UnknownTool,
)

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: str = "{}"

    def to_wire(self) -> dict:
        return {"id": self.id, "type": "function", "function": {"name": self.name, "arguments": self.arguments}}

    @classmethod
    def from_wire(cls, data: dict) -> "ToolCall":
        fn = data.get("function") or {}
        args = fn.get("arguments", "{}")
        if not isinstance(args, str):
            args = json.dumps(args, sort_keys=True)
        return cls(id=str(data.get("id", "")), name=str(fn.get("name", "")), arguments=args)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("only assistant messages carry tool calls")
        if (self.tool_call_id is not None) != (self.role == "tool"):
            raise ValueError("tool_call_id is required on, and only on, tool messages")

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"role": self.role, "content": self.content}
        if self.tool_calls:
            out["tool_calls"] = [tc.to_wire() for tc in self.tool_calls]
        if self.tool_call_id is not None:
            out["tool_call_id"] = self.tool_call_id
        return out

    @classmethod
    def from_wire(cls, data: dict) -> "ChatMessage":
        return cls(
            role=data.get("role") or "assistant",
            content=data.get("content") or "",
            tool_calls=tuple(ToolCall.from_wire(tc) for tc in data.get("tool_calls") or ()),
            tool_call_id=data.get("tool_call_id"),
        )


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


_FENCE = re.compile(r"^```([\w+-]*)[ \t]*\r?\n(.*?)\r?\n```[ \t]*$", re.MULTILINE | re.DOTALL)


def fenced_blocks(text: str) -> list[tuple[str, str]]:
    """All ``(tag, body)`` pairs of fenced blocks in ``text``, in order."""
    return [(m.group(1).lower(), m.group(2)) for m in _FENCE.finditer(text or "")]


def transcript_to_json(messages) -> str:
    return json.dumps([m.to_wire() for m in messages], indent=2, sort_keys=True) + "\n"


class ChatBackend(Protocol):
    def complete(self, messages: list[ChatMessage], tools: list[dict]) -> ChatMessage: ...


# --------------------------------------------------------------------------
# HTTP backend


@dataclass
class EndpointConfig:
    """Where and how to reach a live model.

    The API key is never stored here, only the name of the environment
    variable that holds it.
    """

    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout_seconds: float = 120.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key


def chat(
    endpoint: EndpointConfig,
    messages: list[ChatMessage],
    tools: Optional[list[dict]] = None,
    *,
    client: Optional[httpx.Client] = None,
    sleep: Callable[[float], None] = time.sleep,
    trace: Optional[list] = None,
) -> ChatMessage:
    """POST one chat-completion request and return the first choice.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff; 401/403 fail immediately with :class:`AuthError`.
    """
    key = endpoint.api_key()
    body: dict[str, Any] = {
        "model": endpoint.model,
        "messages": [m.to_wire() for m in messages],
        "temperature": endpoint.temperature,
    }
    if tools:
        body["tools"] = tools
        body["tool_choice"] = "auto"
    url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    own_client = client is None
    client = client or httpx.Client(timeout=endpoint.timeout_seconds)
    try:
        last: Optional[LLMError] = None
        for attempt in range(endpoint.max_attempts):
            if attempt:
                delay = endpoint.backoff_base * endpoint.backoff_factor ** (attempt - 1)
                logger.warning("retrying chat request in %.1fs (%s)", delay, last)
                sleep(delay)
            try:
                resp = client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = Timeout(str(exc) or "request timed out")
                continue
            except httpx.TransportError as exc:
                last = LLMError(f"transport error: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429:
                last = RateLimited("HTTP 429")
                continue
            if resp.status_code >= 500:
                last = LLMError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                message = data["choices"][0]["message"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProtocolError(f"response has no choices: {exc}") from exc
            reply = ChatMessage.from_wire({**message, "role": "assistant", "tool_call_id": None})
            if trace is not None:
                trace.append({"request": body, "response": data})
            return reply
        assert last is not None
        raise last
    finally:
        if own_client:
            client.close()


class OpenAIBackend:
    """Backend for a live OpenAI-compatible service.

    The credential is checked at construction so a missing key fails
    before any stage does work.
    """

    def __init__(self, endpoint: EndpointConfig, *, client=None, sleep=time.sleep, trace: Optional[list] = None):
        endpoint.api_key()
        self.endpoint = endpoint
        self.client = client
        self.sleep = sleep
        self.trace = trace

    def complete(self, messages, tools):
        return chat(self.endpoint, messages, tools, client=self.client, sleep=self.sleep, trace=self.trace)


# --------------------------------------------------------------------------
# scripted backend


@dataclass
class BackendScript:
    """Canned assistant turns, consumed in order.

    Each step is a dict with optional ``content`` and ``tool_calls``
    (``[{"name": ..., "arguments": {...}}]``).
    """

    steps: list[dict] = field(default_factory=list)
    strict: bool = True

    @classmethod
    def from_json(cls, data: Union[list, dict]) -> "BackendScript":
        if isinstance(data, list):
            return cls(steps=list(data))
        if isinstance(data, dict) and isinstance(data.get("steps"), list):
            return cls(steps=list(data["steps"]), strict=bool(data.get("strict", True)))
        raise ValueError("a backend script is a JSON list of steps or {'steps': [...]}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BackendScript":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> str:
        return json.dumps({"steps": self.steps, "strict": self.strict}, indent=2, sort_keys=True) + "\n"


def _step_message(step: dict, position: int) -> ChatMessage:
    calls = []
    for k, tc in enumerate(step.get("tool_calls") or ()):
        args = tc.get("arguments", {})
        if not isinstance(args, str):
            args = json.dumps(args, sort_keys=True)
        calls.append(ToolCall(id=tc.get("id") or f"call_{position}_{k}", name=tc["name"], arguments=args))
    return ChatMessage("assistant", step.get("content") or "", tuple(calls))


class ScriptedBackend:
    """Replays a :class:`BackendScript`; never touches the network.

    A non-strict script keeps repeating its last step once exhausted.
    """

    def __init__(self, script: BackendScript):
        self.script = script
        self.position = 0
        self.requests: list[list[ChatMessage]] = []

    @property
    def remaining(self) -> int:
        return max(0, len(self.script.steps) - self.position)

    def complete(self, messages, tools):
        self.requests.append(list(messages))
        steps = self.script.steps
        if self.position >= len(steps):
            if self.script.strict or not steps:
                raise ScriptExhausted(f"script has only {len(steps)} step(s)")
            return _step_message(steps[-1], self.position)
        msg = _step_message(steps[self.position], self.position)
        self.position += 1
        return msg


# --------------------------------------------------------------------------
# tools


@dataclass
class Tool:
    name: str
    fn: Callable[..., Any]
    description: str = ""
    parameters: dict = field(default_factory=lambda: {"type": "object", "properties": {}})

    def schema(self) -> dict:
        return {
            "type": "function",
            "function": {"name": self.name, "description": self.description, "parameters": self.parameters},
        }

    def __call__(self, **kwargs):
        return self.fn(**kwargs)


def _as_tool(name: str, entry) -> Tool:
    return entry if isinstance(entry, Tool) else Tool(name=name, fn=entry)


def _render_result(result: Any) -> str:
    if isinstance(result, str):
        return result
    return json.dumps(result, sort_keys=True)


def execute_tool_call(call: ToolCall, registry: dict) -> str:
    """Run one call and return the tool-message content.

    Bad arguments and executor exceptions come back as ``{"error": ...}``
    so the model can react to them.
    """
    if call.name not in registry:
        raise UnknownTool(f"model called unregistered tool {call.name!r}")
    try:
        args = json.loads(call.arguments or "{}")
    except json.JSONDecodeError as exc:
        return _render_result({"error": f"invalid JSON arguments: {exc}"})
    if not isinstance(args, dict):
        return _render_result({"error": "tool arguments must be a JSON object"})
    try:
        return _render_result(registry[call.name](**args))
    except Exception as exc:  # fed back to the model
        return _render_result({"error": f"{type(exc).__name__}: {exc}"})


def run_tool_loop(
    backend: ChatBackend,
    base_messages: list[ChatMessage],
    registry: dict,
    max_rounds: int = 6,
) -> tuple[ChatMessage, list[ChatMessage]]:
    """Drive the model until it answers without requesting tools.

    Returns the final assistant message and the full transcript, which
    starts with ``base_messages``. Raises :class:`RoundLimitExceeded` if
    the model still wants tools after ``max_rounds`` rounds of execution.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    tools = {name: _as_tool(name, entry) for name, entry in registry.items()}
    schemas = [t.schema() for t in tools.values()]
    transcript = list(base_messages)
    rounds = 0
    while True:
        reply = backend.complete(list(transcript), schemas)
        transcript.append(reply)
        if not reply.tool_calls:
            return reply, transcript
        if rounds >= max_rounds:
            raise RoundLimitExceeded(max_rounds, transcript)
        for call in reply.tool_calls:
            content = execute_tool_call(call, tools)
            transcript.append(ChatMessage("tool", content, tool_call_id=call.id))
        rounds += 1
