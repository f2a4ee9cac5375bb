"""Agent sessions over a pluggable backend.

A session is a prompt-seeded transcript plus a tool loop. The backend only
ever sees (transcript, tool specs) and answers with one tool call or final
text, so scripted, HTTP and future backends are interchangeable. Token
accounting uses a byte-length proxy: input counts the whole transcript on
every backend call (context is re-sent each turn), output counts the action.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Union, runtime_checkable

from .adapter import AdapterBundle, ContextDoc, assemble_context
from .board import canonical_json
from .clock import wall_clock
from .errors import BackendError, SpawnDepthExceeded
from .tools import Toolbelt, ToolCall, ToolSpec

log = logging.getLogger(__name__)

BACKEND_RETRIES = 3


@dataclass
class FinalText:
    """Bare text from a backend instead of a tool call; tolerated but logged."""

    text: str


@dataclass
class TranscriptRecord:
    kind: str  # prompt | tool_call | tool_result | image_attachment
    payload: dict

    def byte_length(self) -> int:
        return len(canonical_json(self.payload).encode("utf-8"))


@dataclass
class SessionLimits:
    max_tool_calls: int = 500
    wall_clock_s: float = 3600.0


@dataclass
class AgentSession:
    id: str
    role: str
    phase: str
    parent: Optional[str] = None
    depth: int = 0
    transcript: list = field(default_factory=list)
    tokens_in: int = 0
    tokens_out: int = 0
    backend_calls: int = 0
    tool_calls: int = 0
    outcome: Optional[str] = None  # reported | limit_exceeded | backend_error
    report: Optional[str] = None
    protocol_deviation: bool = False
    started_at: float = 0.0
    ended_at: float = 0.0


@runtime_checkable
class AgentBackend(Protocol):
    identity: str

    def next_action(self, transcript: list, tool_specs: list) -> Union[ToolCall, FinalText]:
        ...


class SessionRunner:
    """Runs sessions, persists transcripts, owns token accounting."""

    def __init__(
        self,
        workspace: Path,
        toolbelt: Toolbelt,
        backend: AgentBackend,
        config=None,
        clock: Callable[[], float] = wall_clock,
        backoff_base: float = 0.05,
    ):
        from .board import CampaignConfig

        self.workspace = Path(workspace)
        self.toolbelt = toolbelt
        self.backend = backend
        self.config = config or CampaignConfig()
        self.clock = clock
        self.backoff_base = backoff_base
        self.bundle: Optional[AdapterBundle] = None
        self.sessions: list[AgentSession] = []
        self._counter = 0
        self._listeners: list[Callable[[str, dict], None]] = []
        self.log_dir = self.workspace / "logs" / "sessions"
        toolbelt.runner = self

    def subscribe(self, listener: Callable[[str, dict], None]) -> None:
        self._listeners.append(listener)

    def _emit(self, session: AgentSession, record: TranscriptRecord) -> None:
        for listener in list(self._listeners):
            listener(session.id, {"kind": record.kind, "payload": record.payload})

    def default_limits(self) -> SessionLimits:
        return SessionLimits(
            max_tool_calls=self.config.max_tool_calls,
            wall_clock_s=self.config.session_wall_clock_s,
        )

    # -- session loop -------------------------------------------------------

    def run_session(
        self,
        role: str,
        context_docs: list,
        phase: str,
        limits: Optional[SessionLimits] = None,
        parent: Optional[str] = None,
        depth: int = 0,
    ) -> AgentSession:
        limits = limits or self.default_limits()
        self._counter += 1
        session = AgentSession(
            id=f"s{self._counter:04d}",
            role=role,
            phase=phase,
            parent=parent,
            depth=depth,
            started_at=self.clock(),
        )
        self.sessions.append(session)
        for doc in context_docs:
            rec = TranscriptRecord("prompt", {"doc_id": doc.doc_id, "title": doc.title, "text": doc.text})
            session.transcript.append(rec)
            self._emit(session, rec)

        t0 = time.monotonic()
        specs = self.toolbelt.specs()
        while True:
            if session.tool_calls >= limits.max_tool_calls:
                session.outcome = "limit_exceeded"
                log.warning("session %s hit the tool-call ceiling (%d)", session.id, limits.max_tool_calls)
                break
            if time.monotonic() - t0 > limits.wall_clock_s:
                session.outcome = "limit_exceeded"
                log.warning("session %s hit the wall-clock limit", session.id)
                break
            action = self._next_action_with_retry(session, specs)
            if action is None:
                session.outcome = "backend_error"
                break
            session.backend_calls += 1
            session.tokens_in += sum(rec.byte_length() for rec in session.transcript)
            session.tokens_out += _action_bytes(action)
            if isinstance(action, FinalText):
                # protocol says finish via report_to_user; accept the text but flag it
                session.report = action.text
                session.protocol_deviation = True
                session.outcome = "reported"
                log.warning("session %s ended with bare final text", session.id)
                break
            session.tool_calls += 1
            call_rec = TranscriptRecord("tool_call", {"name": action.name, "arguments": action.arguments})
            session.transcript.append(call_rec)
            self._emit(session, call_rec)
            result = self.toolbelt.dispatch(session, action)
            result_rec = TranscriptRecord(
                "tool_result", {"name": action.name, "ok": result.ok, "payload": result.payload, "error": result.error}
            )
            session.transcript.append(result_rec)
            self._emit(session, result_rec)
            attachment = result.payload.get("attachment") if result.ok else None
            if attachment:
                img_rec = TranscriptRecord("image_attachment", dict(attachment))
                session.transcript.append(img_rec)
                self._emit(session, img_rec)
            if action.name == "report_to_user" and result.ok:
                session.report = action.arguments.get("message", "")
                session.outcome = "reported"
                break

        session.ended_at = self.clock()
        self._persist(session)
        return session

    def _next_action_with_retry(self, session: AgentSession, specs: list):
        delay = self.backoff_base
        for attempt in range(1, BACKEND_RETRIES + 1):
            try:
                return self.backend.next_action(session.transcript, specs)
            except BackendError as exc:
                log.warning("backend error on session %s attempt %d: %s", session.id, attempt, exc)
                if attempt == BACKEND_RETRIES:
                    return None
                time.sleep(delay)
                delay *= 2
        return None

    def run_role_session(
        self,
        role: str,
        bundle: Optional[AdapterBundle],
        extras: list,
        phase: str,
        limits: Optional[SessionLimits] = None,
    ) -> AgentSession:
        bundle = bundle if bundle is not None else self.bundle
        docs = assemble_context(bundle, role, extras) if bundle is not None else list(extras)
        return self.run_session(role=role, context_docs=docs, phase=phase, limits=limits)

    def spawn_child(self, parent: AgentSession, role: str, prompt: str) -> AgentSession:
        """Child sessions start from a fresh context: no parent transcript leaks in."""
        if parent.depth + 1 > self.config.spawn_depth_max:
            raise SpawnDepthExceeded(
                f"spawn depth {parent.depth + 1} exceeds the limit {self.config.spawn_depth_max}"
            )
        task_doc = ContextDoc(f"spawn:{parent.id}", "Spawned task", prompt)
        if self.bundle is not None and role in ("worker", "explorer", "builder", "critic", "tester"):
            docs = assemble_context(self.bundle, role, [task_doc])
        else:
            docs = [task_doc]
        return self.run_session(
            role=role,
            context_docs=docs,
            phase=parent.phase,
            parent=parent.id,
            depth=parent.depth + 1,
        )

    # -- persistence & accounting -------------------------------------------

    def _persist(self, session: AgentSession) -> None:
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            path = self.log_dir / f"{session.id}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "session": session.id,
                            "role": session.role,
                            "phase": session.phase,
                            "parent": session.parent,
                            "outcome": session.outcome,
                            "tokens_in": session.tokens_in,
                            "tokens_out": session.tokens_out,
                            "backend_calls": session.backend_calls,
                            "report": session.report,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                for rec in session.transcript:
                    fh.write(json.dumps({"kind": rec.kind, "payload": rec.payload}, sort_keys=True) + "\n")
        except OSError as exc:
            log.warning("could not persist transcript for %s: %s", session.id, exc)

    def account(self) -> dict:
        """Per-phase token/call tallies; the totals are the exact sums."""
        per_phase: dict[str, dict] = {}
        for session in self.sessions:
            bucket = per_phase.setdefault(
                session.phase, {"tokens_in": 0, "tokens_out": 0, "backend_calls": 0, "tool_calls": 0, "sessions": 0}
            )
            bucket["tokens_in"] += session.tokens_in
            bucket["tokens_out"] += session.tokens_out
            bucket["backend_calls"] += session.backend_calls
            bucket["tool_calls"] += session.tool_calls
            bucket["sessions"] += 1
        totals = {"tokens_in": 0, "tokens_out": 0, "backend_calls": 0, "tool_calls": 0, "sessions": 0}
        for bucket in per_phase.values():
            for key in totals:
                totals[key] += bucket[key]
        return {"per_phase": per_phase, "totals": totals}


def _action_bytes(action) -> int:
    if isinstance(action, FinalText):
        return len(action.text.encode("utf-8"))
    return len(canonical_json({"name": action.name, "arguments": action.arguments}).encode("utf-8"))


class HttpChatBackend:
    """Chat-completions style backend over HTTP.

    Expects the endpoint to accept {"model", "messages", "tools"} and answer
    {"tool_call": {"name", "arguments"}} or {"text": "..."}. Transport errors
    surface as BackendError; the runner retries with backoff.
    """

    def __init__(self, url: Optional[str] = None, model: Optional[str] = None, api_key: Optional[str] = None, client=None):
        import httpx

        self.url = url or os.environ.get("LABLOOP_CHAT_URL", "")
        self.model = model or os.environ.get("LABLOOP_CHAT_MODEL", "default")
        self.api_key = api_key or os.environ.get("LABLOOP_CHAT_API_KEY", "")
        self.identity = f"http:{self.model}"
        self._client = client or httpx.Client(timeout=120.0)
        if not self.url:
            raise ValueError("HttpChatBackend needs a url (or LABLOOP_CHAT_URL)")

    def next_action(self, transcript: list, tool_specs: list):
        import httpx

        messages = []
        for rec in transcript:
            if rec.kind == "prompt":
                messages.append({"role": "system", "content": f"{rec.payload['title']}\n\n{rec.payload['text']}"})
            elif rec.kind == "tool_call":
                messages.append({"role": "assistant", "content": canonical_json(rec.payload)})
            elif rec.kind == "tool_result":
                messages.append({"role": "tool", "content": canonical_json(rec.payload)})
            elif rec.kind == "image_attachment":
                messages.append({"role": "tool", "content": f"[image {rec.payload.get('path')} sha256={rec.payload.get('sha256')}]"})
        body = {
            "model": self.model,
            "messages": messages,
            "tools": [spec.to_dict() for spec in tool_specs],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"request rejected with {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        if "tool_call" in data and data["tool_call"]:
            tc = data["tool_call"]
            return ToolCall(name=tc.get("name", ""), arguments=dict(tc.get("arguments", {})))
        return FinalText(text=str(data.get("text", "")))
