"""HTTP gateway: read-only views over a live campaign plus chat and halt.

The API is versioned under /api/v1 and documented in api_schema.json (served
at /api/v1/schema). A websocket at /api/v1/stream relays board events and
session transcript records; slow consumers get a gap marker instead of
unbounded buffering.
"""

from __future__ import annotations

import json
import re
import threading
from collections import deque
from pathlib import Path
from typing import Optional

import anyio
from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.staticfiles import StaticFiles

from .board import COLUMN_OF_STATE, DISPLAY_COLUMNS, Board, encode_value
from .dispatch import budget_band
from .errors import CampaignHalted, EmptyContent

FILE_CAP_BYTES = 1_000_000
SESSION_ID_RE = re.compile(r"^s\d{4}$")
SCHEMA_PATH = Path(__file__).parent / "api_schema.json"


class _Subscriber:
    """Bounded per-consumer queue; overflow drops the oldest and is reported as a gap."""

    def __init__(self, buffer: int):
        self.buffer = buffer
        self.items: deque = deque()
        self.dropped = 0
        self.lock = threading.Lock()

    def push(self, msg: dict) -> None:
        with self.lock:
            if len(self.items) >= self.buffer:
                self.items.popleft()
                self.dropped += 1
            self.items.append(msg)

    def drain(self) -> list:
        with self.lock:
            out: list = []
            if self.dropped:
                out.append({"type": "gap", "dropped": self.dropped})
                self.dropped = 0
            out.extend(self.items)
            self.items.clear()
            return out


class StreamHub:
    """Fans board events and session records out to websocket subscribers."""

    def __init__(self, buffer: int = 256):
        self.buffer = buffer
        self._subs: list[_Subscriber] = []
        self._lock = threading.Lock()

    def attach(self, board: Board, runner=None) -> None:
        board.subscribe(self._on_board_event)
        if runner is not None:
            runner.subscribe(self._on_session_record)

    def _on_board_event(self, ev) -> None:
        self._publish({"type": "event", "seq": ev.seq, "kind": ev.kind, "at": ev.at, "payload": ev.payload})

    def _on_session_record(self, session_id: str, record: dict) -> None:
        self._publish({"type": "session", "session": session_id, "record": record})

    def _publish(self, msg: dict) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub.push(msg)

    def subscribe(self) -> _Subscriber:
        sub = _Subscriber(self.buffer)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)


def _passes(msg: dict, kinds: set, sessions: set, columns: set) -> bool:
    """Each filter constrains only its own message class; filters AND together."""
    if msg["type"] == "gap":
        return True
    if msg["type"] == "session":
        if kinds and "session" not in kinds:
            return False
        if sessions and msg["session"] not in sessions:
            return False
        return True
    if kinds and msg["kind"] not in kinds:
        return False
    if columns and msg["kind"] == "transition":
        if COLUMN_OF_STATE.get(msg["payload"]["to"]) not in columns:
            return False
    return True


def create_app(
    board: Board,
    workspace: Path,
    runner=None,
    halt_cb=None,
    chat_cb=None,
    frontend_dir: Optional[Path] = None,
) -> FastAPI:
    """Wire a gateway over one campaign's board, workspace and session runner."""
    workspace = Path(workspace).resolve()
    app = FastAPI(title="campaign gateway", docs_url=None, redoc_url=None, openapi_url=None)
    hub = StreamHub(buffer=board.config.stream_buffer)
    hub.attach(board, runner)
    app.state.hub = hub

    def _safe_path(rel: str) -> Path:
        candidate = (workspace / rel).resolve()
        if candidate != workspace and workspace not in candidate.parents:
            raise HTTPException(status_code=403, detail="path escapes the workspace")
        return candidate

    # -- read views ---------------------------------------------------------

    @app.get("/api/v1/board")
    def get_board():
        snap = board.snapshot()
        columns = {name: [] for name in DISPLAY_COLUMNS}
        for exp in snap["experiments"]:
            columns[COLUMN_OF_STATE[exp["state"]]].append(exp)
        return {
            "campaign": snap["campaign"],
            "metric": snap["metric"],
            "columns": columns,
            "journal_seq": snap["journal_seq"],
        }

    @app.get("/api/v1/leaderboard")
    def get_leaderboard(top_k: int = 10):
        rows = [
            {
                "rank": i + 1,
                "id": exp.id,
                "name": exp.name,
                "value": encode_value(value),
                "analyzed_at": exp.analyzed_at,
            }
            for i, (exp, value) in enumerate(board.leaderboard(top_k=top_k))
        ]
        return {
            "metric": {"name": board.metric.name, "direction": board.metric.direction},
            "rows": rows,
            "flagged": [exp.name for exp in board.flagged()],
        }

    @app.get("/api/v1/status")
    def get_status():
        camp = board.campaign
        out = {
            "id": camp.id,
            "phase": camp.phase,
            "halt_reason": camp.halt_reason,
            "budget_initial": camp.budget_initial,
            "budget_remaining": camp.budget_remaining,
            "band": budget_band(camp.budget_remaining),
            "analyzed_count": camp.analyzed_count,
            "stall_count": camp.stall_count,
            "best_primary": encode_value(camp.best_primary) if camp.best_primary is not None else None,
            "best_experiment": camp.best_experiment,
            "strategist_turns": camp.strategist_turns,
            "milestones_emitted": camp.milestones_emitted,
            "supervisor_interventions": camp.supervisor_interventions,
            "journal_seq": snap_seq(),
        }
        if runner is not None:
            out["accounting"] = runner.account()
        return out

    def snap_seq() -> int:
        return board.events[-1].seq if board.events else 0

    @app.get("/api/v1/tree")
    def get_tree(path: str = "."):
        target = _safe_path(path)
        if not target.is_dir():
            raise HTTPException(status_code=404, detail="no such directory")
        entries = []
        for child in sorted(target.iterdir(), key=lambda p: (not p.is_dir(), p.name)):
            entries.append(
                {
                    "name": child.name,
                    "dir": child.is_dir(),
                    "size": child.stat().st_size if child.is_file() else None,
                }
            )
        return {"path": path, "entries": entries}

    @app.get("/api/v1/files")
    def get_file(path: str):
        target = _safe_path(path)
        if not target.is_file():
            raise HTTPException(status_code=404, detail="no such file")
        data = target.read_bytes()
        truncated = len(data) > FILE_CAP_BYTES
        if truncated:
            data = data[:FILE_CAP_BYTES]
        return {
            "path": path,
            "content": data.decode("utf-8", errors="replace"),
            "truncated": truncated,
            "bytes": target.stat().st_size,
        }

    @app.get("/api/v1/reports")
    def get_reports():
        root = workspace / "reports"
        found = []
        if root.is_dir():
            for child in sorted(root.rglob("*")):
                if child.is_file():
                    found.append(str(child.relative_to(workspace)))
        return {"reports": found}

    @app.get("/api/v1/sessions")
    def get_sessions():
        sessions = []
        if runner is not None:
            for s in runner.sessions:
                sessions.append(
                    {
                        "id": s.id,
                        "role": s.role,
                        "phase": s.phase,
                        "parent": s.parent,
                        "outcome": s.outcome,
                        "tokens_in": s.tokens_in,
                        "tokens_out": s.tokens_out,
                        "tool_calls": s.tool_calls,
                    }
                )
        else:
            log_dir = workspace / "logs" / "sessions"
            if log_dir.is_dir():
                for path in sorted(log_dir.glob("s*.jsonl")):
                    try:
                        meta = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
                    except (OSError, json.JSONDecodeError, IndexError):
                        continue
                    sessions.append(
                        {
                            "id": meta.get("session"),
                            "role": meta.get("role"),
                            "phase": meta.get("phase"),
                            "parent": meta.get("parent"),
                            "outcome": meta.get("outcome"),
                            "tokens_in": meta.get("tokens_in"),
                            "tokens_out": meta.get("tokens_out"),
                            "tool_calls": None,
                        }
                    )
        return {"sessions": sessions}

    @app.get("/api/v1/sessions/{session_id}")
    def get_session(session_id: str):
        if not SESSION_ID_RE.match(session_id):
            raise HTTPException(status_code=422, detail="malformed session id")
        path = workspace / "logs" / "sessions" / f"{session_id}.jsonl"
        if not path.is_file():
            raise HTTPException(status_code=404, detail="no such session")
        lines = path.read_text(encoding="utf-8").splitlines()
        records = []
        meta = {}
        for i, line in enumerate(lines):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue
            if i == 0:
                meta = rec
            else:
                records.append(rec)
        return {"meta": meta, "records": records}

    @app.get("/api/v1/schema")
    def get_schema():
        return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))

    # -- the two writes -----------------------------------------------------

    @app.post("/api/v1/chat")
    def post_chat(body: dict):
        message = (body or {}).get("message", "")
        if not isinstance(message, str) or not message.strip():
            raise HTTPException(status_code=422, detail="message must be a non-empty string")
        try:
            if chat_cb is not None:
                chat_cb(message)
            else:
                board.post_chat(message)
        except CampaignHalted as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except EmptyContent as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"status": "queued", "pending": len(board.campaign.chat_pending)}

    @app.post("/api/v1/halt", status_code=202)
    def post_halt(body: Optional[dict] = None):
        reason = (body or {}).get("reason") or "user_requested"
        if board.campaign.phase == "halted":
            raise HTTPException(status_code=409, detail="campaign is already halted")
        if halt_cb is not None:
            halt_cb(reason)
        return {"status": "halt_requested", "reason": reason}

    # -- stream -------------------------------------------------------------

    @app.websocket("/api/v1/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        params = ws.query_params
        kinds = set(params.getlist("kind"))
        sessions = set(params.getlist("session"))
        columns = set(params.getlist("column"))
        since = params.get("since")
        sub = hub.subscribe()
        last_seq = 0
        try:
            if since is not None:
                last_seq = int(since)
                for ev in board.events_since(last_seq):
                    msg = {"type": "event", "seq": ev.seq, "kind": ev.kind, "at": ev.at, "payload": ev.payload}
                    if _passes(msg, kinds, sessions, columns):
                        await ws.send_json(msg)
                    last_seq = max(last_seq, ev.seq)
            while True:
                for msg in sub.drain():
                    if not _passes(msg, kinds, sessions, columns):
                        continue
                    if msg["type"] == "event":
                        if msg["seq"] <= last_seq:
                            continue  # dedupe against the replay prefix
                        last_seq = msg["seq"]
                    await ws.send_json(msg)
                await anyio.sleep(0.02)
        except Exception:
            pass  # disconnects and cancellations end the stream
        finally:
            hub.unsubscribe(sub)

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")

    return app


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8000):
    """Blocking uvicorn server; returns only on shutdown."""
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


class BackgroundServer:
    """Uvicorn in a daemon thread, for serving next to a running campaign."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 8000):
        import uvicorn

        self._config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5)
