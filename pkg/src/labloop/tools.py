"""The fixed tool surface agents act through.

dispatch() never raises: unknown tools, forbidden roles, schema violations,
timeouts and path escapes all come back as failed ToolResults so a session
survives any call it can invent. A nonzero shell exit is data, not an error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import SpawnDepthExceeded

log = logging.getLogger(__name__)

TRUNCATION_MARKER = "[truncated {dropped} bytes]"


@dataclass
class ToolCall:
    name: str
    arguments: dict


@dataclass
class ToolResult:
    ok: bool
    payload: dict = field(default_factory=dict)
    error: Optional[dict] = None  # {"type", "message"}

    @classmethod
    def fail(cls, error_type: str, message: str, **payload) -> "ToolResult":
        return cls(ok=False, payload=payload, error={"type": error_type, "message": message})


@dataclass
class ToolSpec:
    name: str
    description: str
    args: dict  # arg name -> {"type": ..., "required": bool}
    side_effect: str

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description, "args": self.args, "side_effect": self.side_effect}


_TYPES = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
}

TOOL_SPECS = [
    ToolSpec(
        "shell_exec",
        "Run a shell command inside the campaign workspace; returns exit code and capped output.",
        {
            "cmd": {"type": "string", "required": True},
            "cwd": {"type": "string", "required": False},
            "timeout_s": {"type": "number", "required": False},
        },
        "process execution in the workspace",
    ),
    ToolSpec(
        "read_file",
        "Read a workspace file (UTF-8, size-capped).",
        {
            "path": {"type": "string", "required": True},
            "max_bytes": {"type": "integer", "required": False},
        },
        "filesystem read",
    ),
    ToolSpec(
        "grep_file",
        "Regex-search a workspace file line by line.",
        {
            "pattern": {"type": "string", "required": True},
            "path": {"type": "string", "required": True},
            "max_matches": {"type": "integer", "required": False},
        },
        "filesystem read",
    ),
    ToolSpec(
        "web_search",
        "Query the configured search provider.",
        {"query": {"type": "string", "required": True}},
        "network read (provider-dependent)",
    ),
    ToolSpec(
        "view_image",
        "Attach a workspace image to the transcript; returns a digest reference.",
        {"path": {"type": "string", "required": True}},
        "filesystem read",
    ),
    ToolSpec(
        "spawn_agent",
        "Run a sub-agent with a fresh context; returns its report.",
        {
            "prompt": {"type": "string", "required": True},
            "role": {"type": "string", "required": False},
        },
        "agent session",
    ),
    ToolSpec(
        "read_board",
        "Snapshot digest of the experiment board and leaderboard.",
        {"top_k": {"type": "integer", "required": False}},
        "board read",
    ),
    ToolSpec(
        "update_playbook",
        "Append a new playbook version.",
        {"content": {"type": "string", "required": True}},
        "board write",
    ),
    ToolSpec(
        "propose_experiment",
        "Propose a new experiment (strategist only); budget is charged at acceptance.",
        {
            "name": {"type": "string", "required": True},
            "hypothesis": {"type": "string", "required": True},
            "priority_hint": {"type": "string", "required": False},
        },
        "board write",
    ),
    ToolSpec(
        "report_to_user",
        "Deliver the final report and end the session. The only graceful exit.",
        {"message": {"type": "string", "required": True}},
        "session control",
    ),
]

TOOL_NAMES = tuple(spec.name for spec in TOOL_SPECS)

ALL_ROLES = frozenset(
    {"explorer", "builder", "critic", "tester", "strategist", "worker", "supervisor", "customizer", "generator"}
)

# (role, tool) pairs outside this table are forbidden
ALLOW_TABLE = {name: ALL_ROLES for name in TOOL_NAMES}
ALLOW_TABLE["propose_experiment"] = frozenset({"strategist"})
ALLOW_TABLE["update_playbook"] = frozenset({"strategist", "supervisor"})


def export_schemas() -> dict:
    """Machine-readable tool schema list, consumed by agent backends."""
    return {"version": 1, "tools": [spec.to_dict() for spec in TOOL_SPECS]}


def write_schemas(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(export_schemas(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def truncate_tail(data: bytes, cap: int) -> tuple[str, bool, int]:
    """Cap output bytes, keeping the tail (the end of a log is the informative part)."""
    if len(data) <= cap:
        return data.decode("utf-8", errors="replace"), False, 0
    dropped = len(data) - cap
    kept = data[-cap:].decode("utf-8", errors="replace")
    return TRUNCATION_MARKER.format(dropped=dropped) + "\n" + kept, True, dropped


class OfflineSearchProvider:
    """Deterministic search provider backed by a fixed corpus; the default (no network)."""

    name = "offline"

    def __init__(self, corpus: Optional[dict] = None):
        self.corpus = corpus or {}

    def __call__(self, query: str) -> list:
        hits = []
        for key, results in self.corpus.items():
            if key.lower() in query.lower():
                hits.extend(results)
        return hits


class Toolbelt:
    """Executes tool calls for sessions; holds the workspace boundary."""

    def __init__(self, workspace: Path, config=None, board=None, search_provider=None):
        from .board import CampaignConfig

        self.workspace = Path(workspace).resolve()
        self.config = config or CampaignConfig()
        self.board = board
        self.runner = None  # back-wired by the session runner
        self.search_provider = search_provider or OfflineSearchProvider()
        self.reports: list[dict] = []

    # -- dispatch -----------------------------------------------------------

    def specs(self) -> list[ToolSpec]:
        return list(TOOL_SPECS)

    def dispatch(self, session, call: ToolCall) -> ToolResult:
        spec = next((s for s in TOOL_SPECS if s.name == call.name), None)
        if spec is None:
            return ToolResult.fail("UnknownTool", f"no tool named {call.name!r}")
        allowed = ALLOW_TABLE.get(call.name, frozenset())
        if session.role not in allowed:
            return ToolResult.fail("RoleForbidden", f"role {session.role!r} may not call {call.name}")
        violation = self._check_args(spec, call.arguments)
        if violation is not None:
            return ToolResult.fail("ArgumentSchemaViolation", violation)
        handler = getattr(self, f"_tool_{call.name}")
        try:
            return handler(session, **call.arguments)
        except Exception as exc:  # a tool bug must not kill the session
            log.exception("tool %s crashed", call.name)
            return ToolResult.fail("ToolError", f"{type(exc).__name__}: {exc}")

    def _check_args(self, spec: ToolSpec, arguments: Any) -> Optional[str]:
        if not isinstance(arguments, dict):
            return f"arguments must be an object, got {type(arguments).__name__}"
        for name in arguments:
            if name not in spec.args:
                return f"unknown argument {name!r} for {spec.name}"
        for name, meta in spec.args.items():
            if meta.get("required") and name not in arguments:
                return f"missing required argument {name!r} for {spec.name}"
            if name in arguments and not _TYPES[meta["type"]](arguments[name]):
                return f"argument {name!r} must be {meta['type']}"
        return None

    # -- path confinement ---------------------------------------------------

    def _resolve(self, path: str) -> Path:
        candidate = (self.workspace / path).resolve() if not Path(path).is_absolute() else Path(path).resolve()
        if candidate != self.workspace and self.workspace not in candidate.parents:
            raise PermissionError(f"path {path!r} escapes the workspace")
        return candidate

    # -- tools --------------------------------------------------------------

    def _tool_shell_exec(self, session, cmd: str, cwd: Optional[str] = None, timeout_s: Optional[float] = None) -> ToolResult:
        if not self.config.shell_enabled:
            return ToolResult.fail("ShellDisabled", "shell access is disabled by campaign config")
        try:
            workdir = self._resolve(cwd) if cwd else self.workspace
        except PermissionError as exc:
            return ToolResult.fail("PathEscape", str(exc))
        if not workdir.is_dir():
            return ToolResult.fail("BadCwd", f"cwd {cwd!r} is not a directory")
        timeout = min(float(timeout_s), self.config.shell_timeout_max_s) if timeout_s else self.config.shell_timeout_max_s
        try:
            proc = subprocess.run(
                cmd, shell=True, cwd=workdir, capture_output=True, timeout=timeout
            )
        except subprocess.TimeoutExpired as exc:
            out = exc.stdout or b""
            err = exc.stderr or b""
            stdout, t_out, d_out = truncate_tail(out, self.config.shell_output_cap)
            stderr, t_err, d_err = truncate_tail(err, self.config.shell_output_cap)
            return ToolResult.fail(
                "Timeout",
                f"command exceeded {timeout:.0f}s and was killed",
                stdout=stdout,
                stderr=stderr,
                truncated=t_out or t_err,
            )
        stdout, t_out, d_out = truncate_tail(proc.stdout, self.config.shell_output_cap)
        stderr, t_err, d_err = truncate_tail(proc.stderr, self.config.shell_output_cap)
        return ToolResult(
            ok=True,
            payload={
                "exit_code": proc.returncode,
                "stdout": stdout,
                "stderr": stderr,
                "truncated": t_out or t_err,
                "dropped_bytes": d_out + d_err,
            },
        )

    def _tool_read_file(self, session, path: str, max_bytes: Optional[int] = None) -> ToolResult:
        try:
            target = self._resolve(path)
        except PermissionError as exc:
            return ToolResult.fail("PathEscape", str(exc))
        if not target.is_file():
            return ToolResult.fail("FileNotFound", f"no file at {path!r}")
        cap = min(max_bytes, self.config.shell_output_cap) if max_bytes else self.config.shell_output_cap
        data = target.read_bytes()
        truncated = len(data) > cap
        text = data[:cap].decode("utf-8", errors="replace")
        return ToolResult(ok=True, payload={"path": path, "content": text, "truncated": truncated, "size": len(data)})

    def _tool_grep_file(self, session, pattern: str, path: str, max_matches: int = 100) -> ToolResult:
        try:
            target = self._resolve(path)
        except PermissionError as exc:
            return ToolResult.fail("PathEscape", str(exc))
        if not target.is_file():
            return ToolResult.fail("FileNotFound", f"no file at {path!r}")
        try:
            rx = re.compile(pattern)
        except re.error as exc:
            return ToolResult.fail("BadPattern", f"invalid regex: {exc}")
        matches = []
        for lineno, line in enumerate(target.read_text(encoding="utf-8", errors="replace").splitlines(), start=1):
            if rx.search(line):
                matches.append({"line": lineno, "text": line[:500]})
                if len(matches) >= max_matches:
                    break
        return ToolResult(ok=True, payload={"path": path, "pattern": pattern, "matches": matches})

    def _tool_web_search(self, session, query: str) -> ToolResult:
        results = self.search_provider(query)
        return ToolResult(ok=True, payload={"query": query, "provider": self.search_provider.name, "results": results})

    def _tool_view_image(self, session, path: str) -> ToolResult:
        try:
            target = self._resolve(path)
        except PermissionError as exc:
            return ToolResult.fail("PathEscape", str(exc))
        if not target.is_file():
            return ToolResult.fail("FileNotFound", f"no file at {path!r}")
        data = target.read_bytes()
        return ToolResult(
            ok=True,
            payload={"attachment": {"path": path, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}},
        )

    def _tool_spawn_agent(self, session, prompt: str, role: str = "worker") -> ToolResult:
        if self.runner is None:
            return ToolResult.fail("SpawnUnavailable", "no session runner is wired to the toolbelt")
        if role not in ALL_ROLES:
            return ToolResult.fail("ArgumentSchemaViolation", f"unknown role {role!r}")
        try:
            child = self.runner.spawn_child(session, role=role, prompt=prompt)
        except SpawnDepthExceeded as exc:
            return ToolResult.fail("SpawnDepthExceeded", str(exc))
        return ToolResult(
            ok=True,
            payload={"session_id": child.id, "outcome": child.outcome, "report": child.report or ""},
        )

    def _tool_read_board(self, session, top_k: int = 5) -> ToolResult:
        if self.board is None:
            return ToolResult.fail("BoardUnavailable", "no board is wired to the toolbelt")
        board = self.board
        columns = {name: len(exps) for name, exps in board.columns().items()}
        top = [
            {"name": exp.name, "value": value}
            for exp, value in board.leaderboard(top_k=top_k)
        ]
        camp = board.campaign
        return ToolResult(
            ok=True,
            payload={
                "phase": camp.phase,
                "budget_remaining": camp.budget_remaining,
                "budget_initial": camp.budget_initial,
                "analyzed_count": camp.analyzed_count,
                "stall_count": camp.stall_count,
                "proposed_total": len(board.experiments),
                "columns": columns,
                "top": top,
                "playbook_seq": len(board.playbook),
            },
        )

    def _tool_update_playbook(self, session, content: str) -> ToolResult:
        if self.board is None:
            return ToolResult.fail("BoardUnavailable", "no board is wired to the toolbelt")
        from .errors import EmptyContent

        author = session.role if session.role in ("strategist", "supervisor") else "strategist"
        try:
            version = self.board.append_playbook(content, author=author)
        except EmptyContent as exc:
            return ToolResult.fail("EmptyContent", str(exc))
        return ToolResult(ok=True, payload={"seq": version.seq, "author": version.author})

    def _tool_propose_experiment(
        self, session, name: str, hypothesis: str, priority_hint: Optional[str] = None
    ) -> ToolResult:
        if self.board is None:
            return ToolResult.fail("BoardUnavailable", "no board is wired to the toolbelt")
        outcome = self.board.propose(name, hypothesis, priority_hint)
        return ToolResult(ok=True, payload=outcome)

    def _tool_report_to_user(self, session, message: str) -> ToolResult:
        entry = {"session": session.id, "role": session.role, "message": message}
        self.reports.append(entry)
        try:
            log_dir = self.workspace / "logs"
            log_dir.mkdir(parents=True, exist_ok=True)
            with open(log_dir / "reports.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        except OSError as exc:
            log.warning("could not persist report: %s", exc)
        return ToolResult(ok=True, payload={"message": message})
