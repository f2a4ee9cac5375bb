"""Gateway: read views, the two writes, and the event stream."""

import json
import random

import pytest
from fastapi.testclient import TestClient

from labloop.board import COLUMN_OF_STATE, DISPLAY_COLUMNS
from labloop.gateway import FILE_CAP_BYTES, StreamHub, _Subscriber, _passes, create_app

from conftest import make_board

TO_FINISHED = ("assign", "code_written", "checks_passed", "enqueue", "job_launched", "job_succeeded")


def seed_board(tmp_path):
    """Three experiments: one analyzed with a metric, one running, one parked."""
    board = make_board(tmp_path, budget=20)
    board.propose("exp-001", "baseline")
    board.propose("exp-002", "wider window")
    board.propose("exp-003", "longer horizon")
    for ev in TO_FINISHED:
        board.transition("x-0001", ev, worker_id="w1")
    board.record_metric("x-0001", "val_smape", 0.42, scope="full")
    board.transition("x-0001", "debrief_written", worker_id="w1")
    for ev in ("assign", "code_written", "checks_passed", "enqueue", "job_launched"):
        board.transition("x-0002", ev, worker_id="w2")
    return board


@pytest.fixture
def world(tmp_path):
    board = seed_board(tmp_path)
    (tmp_path / "plan.md").write_text("# Plan\n", encoding="utf-8")
    reports = tmp_path / "reports" / "milestone_001"
    reports.mkdir(parents=True)
    (reports / "overview.md").write_text("# Milestone 1\n", encoding="utf-8")
    halts = []
    app = create_app(board, tmp_path, runner=None, halt_cb=halts.append)
    client = TestClient(app)
    yield board, client, halts, tmp_path
    board.close()


# -- read views -------------------------------------------------------------


def test_board_view_groups_by_display_column(world):
    board, client, _, _ = world
    data = client.get("/api/v1/board").json()
    assert tuple(data["columns"].keys()) == DISPLAY_COLUMNS
    by_column = {name: [e["name"] for e in exps] for name, exps in data["columns"].items()}
    assert by_column["analyzed"] == ["exp-001"]
    assert by_column["running"] == ["exp-002"]
    assert by_column["to_implement"] == ["exp-003"]
    assert data["campaign"]["budget_remaining"] == 17
    assert data["metric"]["name"] == "val_smape"
    assert data["journal_seq"] == board.events[-1].seq


def test_leaderboard_view(world):
    _, client, _, _ = world
    data = client.get("/api/v1/leaderboard").json()
    assert data["metric"] == {"name": "val_smape", "direction": "min"}
    assert len(data["rows"]) == 1
    row = data["rows"][0]
    assert (row["rank"], row["name"], row["value"]) == (1, "exp-001", 0.42)
    assert data["flagged"] == []


def test_status_view(world):
    board, client, _, _ = world
    data = client.get("/api/v1/status").json()
    assert data["id"] == board.campaign.id
    assert data["phase"] == "phase3"
    assert data["budget_remaining"] == 17
    assert data["band"] == "focus"
    assert data["analyzed_count"] == 1
    assert data["best_experiment"] == "x-0001"
    assert data["journal_seq"] == board.events[-1].seq
    assert "accounting" not in data  # no runner wired in this app


def test_tree_view(world):
    _, client, _, _ = world
    data = client.get("/api/v1/tree", params={"path": "."}).json()
    names = {e["name"]: e for e in data["entries"]}
    assert names["reports"]["dir"] is True
    assert names["reports"]["size"] is None
    assert names["plan.md"]["dir"] is False
    assert names["plan.md"]["size"] == len("# Plan\n")
    # directories sort ahead of files
    kinds = [e["dir"] for e in data["entries"]]
    assert kinds == sorted(kinds, reverse=True)


def test_tree_missing_and_escape(world):
    _, client, _, _ = world
    assert client.get("/api/v1/tree", params={"path": "nope"}).status_code == 404
    assert client.get("/api/v1/tree", params={"path": "../"}).status_code == 403


def test_file_view_round_trip(world):
    _, client, _, _ = world
    data = client.get("/api/v1/files", params={"path": "plan.md"}).json()
    assert data == {"path": "plan.md", "content": "# Plan\n", "truncated": False, "bytes": 7}


def test_file_view_caps_large_files(world):
    _, client, _, tmp_path = world
    size = FILE_CAP_BYTES + 50
    (tmp_path / "big.log").write_bytes(b"a" * size)
    data = client.get("/api/v1/files", params={"path": "big.log"}).json()
    assert data["truncated"] is True
    assert len(data["content"]) == FILE_CAP_BYTES
    assert data["bytes"] == size


def test_file_view_missing_and_escape(world):
    _, client, _, tmp_path = world
    (tmp_path.parent / "secret.txt").write_text("no", encoding="utf-8")
    assert client.get("/api/v1/files", params={"path": "gone.md"}).status_code == 404
    assert client.get("/api/v1/files", params={"path": "../secret.txt"}).status_code == 403


def test_reports_view_lists_workspace_relative_paths(world):
    _, client, _, _ = world
    data = client.get("/api/v1/reports").json()
    assert data["reports"] == ["reports/milestone_001/overview.md"]


def test_sessions_from_persisted_logs(world):
    _, client, _, tmp_path = world
    log_dir = tmp_path / "logs" / "sessions"
    log_dir.mkdir(parents=True)
    header = {"session": "s0001", "role": "worker", "phase": "phase3", "parent": None,
              "outcome": "reported", "tokens_in": 120, "tokens_out": 30}
    record = {"kind": "prompt", "payload": {"id": "task:x", "text": "TASK: implement"}}
    (log_dir / "s0001.jsonl").write_text(
        json.dumps(header) + "\n" + json.dumps(record) + "\n", encoding="utf-8"
    )
    listing = client.get("/api/v1/sessions").json()["sessions"]
    assert [s["id"] for s in listing] == ["s0001"]
    assert listing[0]["role"] == "worker"
    detail = client.get("/api/v1/sessions/s0001").json()
    assert detail["meta"]["session"] == "s0001"
    assert detail["records"] == [record]


def test_session_detail_rejects_bad_ids(world):
    _, client, _, _ = world
    assert client.get("/api/v1/sessions/nope").status_code == 422
    assert client.get("/api/v1/sessions/s12").status_code == 422
    assert client.get("/api/v1/sessions/s9999").status_code == 404


def test_schema_endpoint_serves_contract(world):
    _, client, _, _ = world
    data = client.get("/api/v1/schema").json()
    assert data["version"] == 1
    assert data["base_path"] == "/api/v1"
    paths = {route["path"] for route in data["http"]}
    assert "/api/v1/board" in paths
    assert "/api/v1/halt" in paths


# -- the two writes ---------------------------------------------------------


def test_chat_queues_on_board(world):
    board, client, _, _ = world
    resp = client.post("/api/v1/chat", json={"message": "try a seasonal model"})
    assert resp.status_code == 200
    assert resp.json() == {"status": "queued", "pending": 1}
    resp = client.post("/api/v1/chat", json={"message": "and log the residuals"})
    assert resp.json()["pending"] == 2
    assert board.campaign.chat_pending[0] == "try a seasonal model"


def test_chat_rejects_blank_and_non_string(world):
    _, client, _, _ = world
    assert client.post("/api/v1/chat", json={"message": "   "}).status_code == 422
    assert client.post("/api/v1/chat", json={"message": 7}).status_code == 422
    assert client.post("/api/v1/chat", json={}).status_code == 422


def test_chat_conflicts_when_halted(world):
    board, client, _, _ = world
    board.set_phase("halted", "user_requested")
    assert client.post("/api/v1/chat", json={"message": "hello?"}).status_code == 409


def test_chat_callback_overrides_board(tmp_path):
    board = seed_board(tmp_path)
    seen = []
    client = TestClient(create_app(board, tmp_path, chat_cb=seen.append))
    resp = client.post("/api/v1/chat", json={"message": "route me"})
    assert resp.json() == {"status": "queued", "pending": 0}
    assert seen == ["route me"]
    board.close()


def test_halt_accepted_and_forwarded(world):
    _, client, halts, _ = world
    resp = client.post("/api/v1/halt", json={"reason": "enough"})
    assert resp.status_code == 202
    assert resp.json() == {"status": "halt_requested", "reason": "enough"}
    resp = client.post("/api/v1/halt")
    assert resp.json()["reason"] == "user_requested"
    assert halts == ["enough", "user_requested"]


def test_halt_conflicts_when_already_halted(world):
    board, client, halts, _ = world
    board.set_phase("halted", "user_requested")
    assert client.post("/api/v1/halt", json={"reason": "again"}).status_code == 409
    assert halts == []


# -- stream machinery -------------------------------------------------------


def test_subscriber_overflow_reports_gap():
    sub = _Subscriber(buffer=3)
    for n in range(5):
        sub.push({"n": n})
    out = sub.drain()
    assert out[0] == {"type": "gap", "dropped": 2}
    assert [m["n"] for m in out[1:]] == [2, 3, 4]
    assert sub.drain() == []  # gap counter resets once reported


def test_subscriber_conservation_fuzz():
    # every pushed message is either delivered or counted in a gap marker
    rng = random.Random(0x57EA)
    sub = _Subscriber(buffer=4)
    pushed = delivered = dropped = 0
    for _ in range(600):
        if rng.random() < 0.7:
            sub.push({"n": pushed})
            pushed += 1
        else:
            for msg in sub.drain():
                if msg.get("type") == "gap":
                    dropped += msg["dropped"]
                else:
                    delivered += 1
    for msg in sub.drain():
        if msg.get("type") == "gap":
            dropped += msg["dropped"]
        else:
            delivered += 1
    assert delivered + dropped == pushed


def test_stream_hub_fanout_and_unsubscribe():
    hub = StreamHub(buffer=8)
    a, b = hub.subscribe(), hub.subscribe()
    hub._publish({"type": "event", "seq": 1})
    hub.unsubscribe(b)
    hub._publish({"type": "event", "seq": 2})
    assert [m["seq"] for m in a.drain()] == [1, 2]
    assert [m["seq"] for m in b.drain()] == [1]


def test_passes_filter_matrix():
    event = {"type": "event", "kind": "transition", "payload": {"to": "implementing"}}
    chat = {"type": "event", "kind": "chat", "payload": {}}
    session = {"type": "session", "session": "s0001", "record": {}}
    gap = {"type": "gap", "dropped": 3}
    empty = set()
    assert _passes(event, empty, empty, empty)
    assert _passes(gap, {"chat"}, {"s0002"}, {"done"})  # gaps always pass
    assert _passes(event, {"transition"}, empty, empty)
    assert not _passes(event, {"chat"}, empty, empty)
    # implementing folds into the to_implement column
    assert COLUMN_OF_STATE["implementing"] == "to_implement"
    assert _passes(event, empty, empty, {"to_implement"})
    assert not _passes(event, empty, empty, {"done"})
    assert _passes(chat, empty, empty, {"done"})  # column filter only guards transitions
    assert _passes(session, {"session"}, {"s0001"}, empty)
    assert not _passes(session, {"session"}, {"s0002"}, empty)
    assert not _passes(session, {"transition"}, empty, empty)


# -- websocket stream -------------------------------------------------------


def test_ws_replay_since_zero(world):
    board, client, _, _ = world
    expected = [(ev.seq, ev.kind) for ev in board.events]
    with client.websocket_connect("/api/v1/stream?since=0") as ws:
        got = [ws.receive_json() for _ in range(len(expected))]
    assert [(m["seq"], m["kind"]) for m in got] == expected


def test_ws_replay_from_midpoint(world):
    board, client, _, _ = world
    cut = board.events[4].seq
    expected = [ev.seq for ev in board.events if ev.seq > cut]
    with client.websocket_connect(f"/api/v1/stream?since={cut}") as ws:
        got = [ws.receive_json()["seq"] for _ in range(len(expected))]
    assert got == expected


def test_ws_live_events_arrive_once(world):
    board, client, _, _ = world
    replay_len = len(board.events)
    with client.websocket_connect("/api/v1/stream?since=0") as ws:
        seqs = [ws.receive_json()["seq"] for _ in range(replay_len)]
        board.post_chat("mid-stream note")
        board.propose("exp-004", "late idea")
        while len(seqs) < replay_len + 2:
            seqs.append(ws.receive_json()["seq"])
    assert len(seqs) == len(set(seqs))
    assert seqs == sorted(seqs)
    assert seqs[-2:] == [ev.seq for ev in board.events[-2:]]


def test_ws_kind_filter(world):
    board, client, _, _ = world
    board.post_chat("only this kind")
    expected = [ev.seq for ev in board.events if ev.kind == "chat"]
    with client.websocket_connect("/api/v1/stream?since=0&kind=chat") as ws:
        got = [ws.receive_json() for _ in range(len(expected))]
    assert [m["seq"] for m in got] == expected
    assert {m["kind"] for m in got} == {"chat"}


def test_ws_column_filter(world):
    board, client, _, _ = world
    expected = [
        ev.seq
        for ev in board.events
        if ev.kind == "transition" and COLUMN_OF_STATE[ev.payload["to"]] == "analyzed"
    ]
    assert expected  # exp-001 reached analyzed during seeding
    url = "/api/v1/stream?since=0&kind=transition&column=analyzed"
    with client.websocket_connect(url) as ws:
        got = [ws.receive_json() for _ in range(len(expected))]
    assert [m["seq"] for m in got] == expected
    assert {m["payload"]["to"] for m in got} <= {"analyzed", "done"}


def test_ws_session_records_fan_out(tmp_path):
    class FakeRunner:
        def __init__(self):
            self.subscribers = []

        def subscribe(self, cb):
            self.subscribers.append(cb)

        def account(self):
            return {}

    board = seed_board(tmp_path)
    runner = FakeRunner()
    client = TestClient(create_app(board, tmp_path, runner=runner))
    record = {"kind": "tool_call", "payload": {"name": "shell_exec"}}
    with client.websocket_connect("/api/v1/stream?since=0") as ws:
        ws.receive_json()  # replay has begun, so the hub subscription is live
        for cb in runner.subscribers:
            cb("s0007", record)
        msg = ws.receive_json()
        while msg["type"] != "session":
            msg = ws.receive_json()
    assert msg == {"type": "session", "session": "s0007", "record": record}
    board.close()
