"""Durable experiment board.

Holds campaign state, the experiment lifecycle state machine, metrics, the
versioned playbook and the append-only journal. All mutations funnel through
one lock-serialized writer; readers get snapshot copies. Every mutation is a
journaled event, and replaying the journal reconstructs identical state.
"""

from __future__ import annotations

import copy
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from .clock import wall_clock
from .errors import (
    CorruptJournal,
    DuplicateName,
    EmptyContent,
    IllegalTransition,
    NonFiniteValue,
    TerminalMutation,
    UnknownExperiment,
    UnknownMetric,
)

# ---------------------------------------------------------------------------
# Lifecycle

STATES = (
    "to_implement",
    "implementing",
    "implemented",
    "checked",
    "queued",
    "running",
    "finished",
    "failed",
    "analyzed",
    "done",
    "cancelled",
    "failed_terminal",
)

TERMINAL_STATES = frozenset({"done", "cancelled", "failed_terminal"})

EVENTS = (
    "assign",
    "code_written",
    "checks_passed",
    "enqueue",
    "job_launched",
    "job_succeeded",
    "job_failed",
    "work_failed",
    "debrief_written",
    "acknowledge",
    "fix",
    "cancel",
)

# (state, event) -> next state. "fix" from failed is guarded by fix_attempts
# and lands in implementing or failed_terminal; it is handled separately.
_BASE_TRANSITIONS = {
    ("to_implement", "assign"): "implementing",
    ("implementing", "code_written"): "implemented",
    ("implemented", "checks_passed"): "checked",
    ("checked", "enqueue"): "queued",
    ("queued", "job_launched"): "running",
    ("running", "job_succeeded"): "finished",
    ("running", "job_failed"): "failed",
    ("implementing", "work_failed"): "failed",
    ("queued", "work_failed"): "failed",
    ("finished", "work_failed"): "failed",
    ("finished", "debrief_written"): "analyzed",
    ("analyzed", "acknowledge"): "done",
}

# cancel is legal from every non-terminal state, including running
TRANSITIONS = dict(_BASE_TRANSITIONS)
for _s in STATES:
    if _s not in TERMINAL_STATES:
        TRANSITIONS[(_s, "cancel")] = "cancelled"

JOURNAL_NAME = "board.journal"
SNAPSHOT_NAME = "board_snapshot.json"

DISPLAY_COLUMNS = (
    "to_implement",
    "implemented",
    "checked",
    "queued",
    "running",
    "finished",
    "failed",
    "analyzed",
    "done",
    "cancelled",
)

# total projection of the 12 internal states onto the display columns
COLUMN_OF_STATE = {
    "to_implement": "to_implement",
    "implementing": "to_implement",
    "implemented": "implemented",
    "checked": "checked",
    "queued": "queued",
    "running": "running",
    "finished": "finished",
    "failed": "failed",
    "failed_terminal": "failed",
    "analyzed": "analyzed",
    "done": "done",
    "cancelled": "cancelled",
}


def canonical_json(obj: Any) -> str:
    """Stable serialization used for every journal line."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def encode_value(value: float) -> Any:
    """Floats go through as-is; NaN/inf become tagged strings so lines stay strict JSON."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"metric value must be a number, got {type(value).__name__}")
    v = float(value)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def decode_value(raw: Any) -> float:
    if raw == "NaN":
        return float("nan")
    if raw == "Infinity":
        return float("inf")
    if raw == "-Infinity":
        return float("-inf")
    return float(raw)


# ---------------------------------------------------------------------------
# Records

@dataclass
class MetricSpec:
    name: str
    direction: str  # "min" | "max"
    known: tuple = ()  # all metric names the adapter manifest declares
    directions: dict = field(default_factory=dict)  # per-metric direction from the manifest

    def better(self, a: float, b: float) -> bool:
        """True iff a strictly improves on b."""
        return a < b if self.direction == "min" else a > b

    def direction_of(self, name: str) -> str:
        if name == self.name:
            return self.direction
        return self.directions.get(name, "min")


@dataclass
class MetricRecord:
    name: str
    value: float
    direction: str
    scope: str  # "smoke" | "full"
    recorded_at: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass
class Experiment:
    id: str
    name: str
    hypothesis: str
    state: str = "to_implement"
    fix_attempts: int = 0
    priority_hint: Optional[str] = None
    worker_id: Optional[str] = None
    job: Optional[dict] = None  # {"id": external id, "state": last known}
    metrics: dict = field(default_factory=dict)  # name -> list[MetricRecord]
    flags: list = field(default_factory=list)
    cancel_reason: Optional[str] = None
    created_at: float = 0.0
    updated_at: float = 0.0
    analyzed_at: Optional[float] = None

    def primary_full_value(self, primary: str) -> Optional[float]:
        """Latest finite full-scope value of the primary metric, if any."""
        for rec in reversed(self.metrics.get(primary, [])):
            if rec.scope == "full" and rec.finite:
                return rec.value
        return None


@dataclass
class PlaybookVersion:
    seq: int
    content: str
    author: str  # "strategist" | "supervisor"
    created_at: float


@dataclass
class BoardEvent:
    seq: int
    kind: str
    at: float
    payload: dict

    def line(self) -> str:
        return canonical_json({"seq": self.seq, "kind": self.kind, "at": self.at, "payload": self.payload})


@dataclass
class CampaignConfig:
    k_max: int = 2
    convergence_c: int = 20
    tau: float = 0.4
    strategist_cadence: int = 5
    milestone_cadence: int = 15
    tick_seconds: float = 30.0
    i_max: int = 10
    max_tool_calls: int = 500
    session_wall_clock_s: float = 3600.0
    spawn_depth_max: int = 2
    window_size: int = 10
    window_min_fill: int = 5
    supervisor_cooldown: int = 5
    num_workers: int = 4
    fleet_size: int = 4
    gpus_per_job: int = 1
    job_time_limit_s: float = 7200.0
    shell_output_cap: int = 65536
    shell_timeout_max_s: float = 600.0
    shell_enabled: bool = True
    refund_on_cancel: bool = False
    max_idle_ticks: int = 50
    skip_phase1: bool = False
    chat_answer_sessions: bool = False
    stream_buffer: int = 256

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        cfg = cls()
        for key, value in data.items():
            if hasattr(cfg, key):
                setattr(cfg, key, value)
        return cfg


@dataclass
class CampaignState:
    id: str
    budget_initial: int
    budget_remaining: int
    phase: str = "phase0"
    halt_reason: Optional[str] = None
    analyzed_count: int = 0
    stall_count: int = 0
    best_primary: Optional[float] = None
    best_experiment: Optional[str] = None
    strategist_turns: int = 0
    milestones_emitted: int = 0
    supervisor_interventions: int = 0
    chat_pending: list = field(default_factory=list)


class Board:
    """Single-writer board actor; every mutation is journaled before listeners fire."""

    def __init__(
        self,
        campaign_id: str,
        budget: int,
        metric: MetricSpec,
        config: Optional[CampaignConfig] = None,
        clock: Callable[[], float] = wall_clock,
        journal_path: Optional[Path] = None,
    ):
        self._lock = threading.RLock()
        self.clock = clock
        self.config = config or CampaignConfig()
        self.metric = metric
        self.campaign = CampaignState(id=campaign_id, budget_initial=budget, budget_remaining=budget)
        self.experiments: dict[str, Experiment] = {}
        self._names: dict[str, str] = {}
        self.playbook: list[PlaybookVersion] = []
        self.events: list[BoardEvent] = []
        self._seq = 0
        self._exp_counter = 0
        self._listeners: list[Callable[[BoardEvent], None]] = []
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_file = None
        if self._journal_path is not None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._journal_file = open(self._journal_path, "w", encoding="utf-8")
            self._journal_file.write(self._header_line() + "\n")
            self._journal_file.flush()

    # -- journal plumbing ---------------------------------------------------

    def _header_line(self) -> str:
        return canonical_json(
            {
                "record": "campaign",
                "version": 1,
                "id": self.campaign.id,
                "workspace": ".",
                "budget": self.campaign.budget_initial,
                "metric": {
                    "name": self.metric.name,
                    "direction": self.metric.direction,
                    "known": list(self.metric.known),
                    "directions": dict(sorted(self.metric.directions.items())),
                },
                "config": self.config.to_dict(),
            }
        )

    def subscribe(self, listener: Callable[[BoardEvent], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def _emit(self, kind: str, payload: dict) -> BoardEvent:
        """Journal an event, apply it, notify listeners. Callers hold the lock."""
        self._seq += 1
        ev = BoardEvent(seq=self._seq, kind=kind, at=self.clock(), payload=payload)
        self._apply(ev)
        self.events.append(ev)
        if self._journal_file is not None:
            self._journal_file.write(ev.line() + "\n")
            self._journal_file.flush()
        for listener in list(self._listeners):
            listener(ev)
        return ev

    # -- event application (shared by live mutation and replay) -------------

    def _apply(self, ev: BoardEvent) -> None:
        payload = ev.payload
        kind = ev.kind
        if kind == "proposal":
            if payload["accepted"]:
                exp = Experiment(
                    id=payload["exp_id"],
                    name=payload["name"],
                    hypothesis=payload["hypothesis"],
                    priority_hint=payload.get("priority_hint"),
                    created_at=ev.at,
                    updated_at=ev.at,
                )
                self.experiments[exp.id] = exp
                self._names[exp.name] = exp.id
                self.campaign.budget_remaining = payload["budget_after"]
                self._exp_counter = max(self._exp_counter, int(payload["exp_id"].split("-")[-1]))
        elif kind == "transition":
            exp = self.experiments[payload["exp_id"]]
            exp.state = payload["to"]
            exp.fix_attempts = payload["fix_attempts"]
            exp.updated_at = ev.at
            if payload.get("worker_id") is not None:
                exp.worker_id = payload["worker_id"]
            if payload.get("cancel_reason") is not None:
                exp.cancel_reason = payload["cancel_reason"]
            if payload["to"] == "analyzed":
                exp.analyzed_at = ev.at
                self._note_analyzed(exp)
            if payload["to"] == "cancelled" and self.config.refund_on_cancel:
                self.campaign.budget_remaining += 1
        elif kind == "metric":
            exp = self.experiments[payload["exp_id"]]
            rec = MetricRecord(
                name=payload["name"],
                value=decode_value(payload["value"]),
                direction=payload["direction"],
                scope=payload["scope"],
                recorded_at=ev.at,
            )
            exp.metrics.setdefault(rec.name, []).append(rec)
            if not payload["finite"] and "non_finite_metric" not in exp.flags:
                exp.flags.append("non_finite_metric")
        elif kind == "playbook":
            self.playbook.append(
                PlaybookVersion(seq=payload["seq"], content=payload["content"], author=payload["author"], created_at=ev.at)
            )
        elif kind == "cancel":
            pass  # decision record; the applied state change is its own transition event
        elif kind == "strategist_turn":
            self.campaign.strategist_turns = payload["turn"]
            drained = payload.get("chat_drained", 0)
            if drained:
                self.campaign.chat_pending = self.campaign.chat_pending[drained:]
        elif kind == "milestone":
            self.campaign.milestones_emitted = payload["n"]
        elif kind == "supervisor":
            if payload.get("event") == "intervention":
                self.campaign.supervisor_interventions += 1
        elif kind == "job":
            exp = self.experiments[payload["exp_id"]]
            exp.job = {"id": payload["external_id"], "state": payload["state"]}
        elif kind == "chat":
            self.campaign.chat_pending.append(payload["message"])
        elif kind == "phase":
            self.campaign.phase = payload["phase"]
            if payload["phase"] == "halted":
                self.campaign.halt_reason = payload.get("reason")
        else:
            raise CorruptJournal(f"unknown journal event kind {kind!r}")

    def _note_analyzed(self, exp: Experiment) -> None:
        """Update best/stall counters; ties are not improvement."""
        self.campaign.analyzed_count += 1
        value = exp.primary_full_value(self.metric.name)
        best = self.campaign.best_primary
        if value is not None and (best is None or self.metric.better(value, best)):
            self.campaign.best_primary = value
            self.campaign.best_experiment = exp.id
            self.campaign.stall_count = 0
        else:
            self.campaign.stall_count += 1

    # -- mutations ----------------------------------------------------------

    def propose(self, name: str, hypothesis: str, priority_hint: Optional[str] = None) -> dict:
        """Accept or reject a proposal; budget is decremented at acceptance."""
        with self._lock:
            if self.campaign.phase == "halted":
                return self._reject_proposal(name, hypothesis, "CampaignHalted")
            if self.campaign.phase != "phase3":
                return self._reject_proposal(name, hypothesis, "NotInCampaignPhase")
            if self.campaign.budget_remaining <= 0:
                return self._reject_proposal(name, hypothesis, "BudgetExhausted")
            if name in self._names:
                return self._reject_proposal(name, hypothesis, "DuplicateName")
            exp_id = f"x-{self._exp_counter + 1:04d}"
            ev = self._emit(
                "proposal",
                {
                    "exp_id": exp_id,
                    "name": name,
                    "hypothesis": hypothesis,
                    "priority_hint": priority_hint,
                    "accepted": True,
                    "reason": None,
                    "budget_after": self.campaign.budget_remaining - 1,
                },
            )
            return {"accepted": True, "exp_id": exp_id, "budget_remaining": ev.payload["budget_after"]}

    def _reject_proposal(self, name: str, hypothesis: str, reason: str) -> dict:
        self._emit(
            "proposal",
            {
                "exp_id": None,
                "name": name,
                "hypothesis": hypothesis,
                "priority_hint": None,
                "accepted": False,
                "reason": reason,
                "budget_after": self.campaign.budget_remaining,
            },
        )
        return {"accepted": False, "reason": reason, "budget_remaining": self.campaign.budget_remaining}

    def transition(
        self,
        exp_id: str,
        event: str,
        worker_id: Optional[str] = None,
        cancel_reason: Optional[str] = None,
    ) -> Experiment:
        """Apply a lifecycle event; raises IllegalTransition/TerminalMutation and changes nothing on error."""
        with self._lock:
            exp = self._get(exp_id)
            if event not in EVENTS:
                raise IllegalTransition(exp.state, event)
            if exp.state in TERMINAL_STATES:
                raise TerminalMutation(f"experiment {exp_id} is terminal ({exp.state}), cannot apply {event!r}")
            attempts = exp.fix_attempts
            if event == "fix":
                if exp.state != "failed":
                    raise IllegalTransition(exp.state, event)
                if exp.fix_attempts < self.config.k_max:
                    target = "implementing"
                    attempts = exp.fix_attempts + 1  # increments at fix-task assignment
                else:
                    target = "failed_terminal"
            else:
                target = TRANSITIONS.get((exp.state, event))
                if target is None:
                    raise IllegalTransition(exp.state, event)
            payload = {
                "exp_id": exp_id,
                "event": event,
                "from": exp.state,
                "to": target,
                "fix_attempts": attempts,
            }
            if worker_id is not None:
                payload["worker_id"] = worker_id
            if target == "cancelled":
                payload["cancel_reason"] = cancel_reason or "unspecified"
            self._emit("transition", payload)
            return copy.deepcopy(exp)

    def record_metric(self, exp_id: str, name: str, value: float, scope: str) -> MetricRecord:
        """Store a metric record; non-finite values flag the experiment and raise after storing."""
        with self._lock:
            exp = self._get(exp_id)
            if exp.state in TERMINAL_STATES:
                raise TerminalMutation(f"experiment {exp_id} is terminal ({exp.state})")
            if exp.state not in ("checked", "finished", "analyzed"):
                raise IllegalTransition(exp.state, "record_metric")
            if self.metric.known and name not in self.metric.known:
                raise UnknownMetric(f"metric {name!r} is not declared in the adapter manifest")
            if scope not in ("smoke", "full"):
                raise ValueError(f"scope must be smoke|full, got {scope!r}")
            encoded = encode_value(value)
            finite = not isinstance(encoded, str)
            self._emit(
                "metric",
                {
                    "exp_id": exp_id,
                    "name": name,
                    "value": encoded,
                    "direction": self.metric.direction_of(name),
                    "scope": scope,
                    "finite": finite,
                },
            )
            rec = exp.metrics[name][-1]
            if not finite:
                raise NonFiniteValue(f"metric {name}={value} on {exp_id} is not finite; experiment flagged")
            return copy.deepcopy(rec)

    def append_playbook(self, content: str, author: str) -> PlaybookVersion:
        with self._lock:
            if not content or not content.strip():
                raise EmptyContent("playbook content must be non-empty")
            if author not in ("strategist", "supervisor"):
                raise ValueError(f"playbook author must be strategist|supervisor, got {author!r}")
            seq = len(self.playbook) + 1
            self._emit("playbook", {"seq": seq, "content": content, "author": author})
            return copy.deepcopy(self.playbook[-1])

    def record_cancel_decision(self, name: str, reason: str, by: str, applied: bool, rejection: Optional[str] = None) -> None:
        with self._lock:
            self._emit("cancel", {"name": name, "reason": reason, "by": by, "applied": applied, "rejection": rejection})

    def record_strategist_turn(self, reason: str, summary: dict) -> int:
        with self._lock:
            turn = self.campaign.strategist_turns + 1
            payload = {"turn": turn, "reason": reason, "analyzed_count": self.campaign.analyzed_count}
            payload.update(summary)
            self._emit("strategist_turn", payload)
            return turn

    def record_milestone(self, n: int, path: str) -> None:
        with self._lock:
            self._emit("milestone", {"n": n, "path": path})

    def record_supervisor(self, payload: dict) -> None:
        with self._lock:
            self._emit("supervisor", payload)

    def record_job(self, exp_id: str, external_id: str, state: str, detail: Optional[str] = None) -> None:
        with self._lock:
            payload = {"exp_id": exp_id, "external_id": external_id, "state": state}
            if detail is not None:
                payload["detail"] = detail
            self._emit("job", payload)

    def post_chat(self, message: str) -> None:
        with self._lock:
            if self.campaign.phase == "halted":
                from .errors import CampaignHalted

                raise CampaignHalted("campaign is halted; chat is closed")
            if not message or not message.strip():
                raise EmptyContent("chat message must be non-empty")
            self._emit("chat", {"message": message})

    def set_phase(self, phase: str, reason: Optional[str] = None) -> None:
        with self._lock:
            payload = {"phase": phase}
            if reason is not None:
                payload["reason"] = reason
            self._emit("phase", payload)

    # -- reads --------------------------------------------------------------

    def _get(self, exp_id: str) -> Experiment:
        exp = self.experiments.get(exp_id)
        if exp is None:
            raise UnknownExperiment(f"no experiment with id {exp_id!r}")
        return exp

    def experiment(self, exp_id: str) -> Experiment:
        with self._lock:
            return copy.deepcopy(self._get(exp_id))

    def by_name(self, name: str) -> Optional[Experiment]:
        with self._lock:
            exp_id = self._names.get(name)
            return copy.deepcopy(self.experiments[exp_id]) if exp_id else None

    def all_experiments(self) -> list[Experiment]:
        with self._lock:
            return [copy.deepcopy(e) for e in self.experiments.values()]

    def in_state(self, *states: str) -> list[Experiment]:
        with self._lock:
            return [copy.deepcopy(e) for e in self.experiments.values() if e.state in states]

    def playbook_head(self) -> Optional[PlaybookVersion]:
        with self._lock:
            return copy.deepcopy(self.playbook[-1]) if self.playbook else None

    def leaderboard(self, top_k: Optional[int] = None) -> list[tuple[Experiment, float]]:
        """Analyzed/done experiments with a finite full-scope primary value, best first.

        Ties break toward the earlier analyzed timestamp.
        """
        with self._lock:
            rows = []
            for exp in self.experiments.values():
                if exp.state not in ("analyzed", "done"):
                    continue
                value = exp.primary_full_value(self.metric.name)
                if value is None:
                    continue
                rows.append((exp, value))
            sign = 1.0 if self.metric.direction == "min" else -1.0
            rows.sort(key=lambda pair: (sign * pair[1], pair[0].analyzed_at, pair[0].id))
            if top_k is not None:
                rows = rows[:top_k]
            return [(copy.deepcopy(exp), value) for exp, value in rows]

    def flagged(self) -> list[Experiment]:
        """Experiments excluded from ranking: non-finite metrics or analyzed without a full primary value."""
        with self._lock:
            out = []
            for exp in self.experiments.values():
                smoke_only = exp.state in ("analyzed", "done") and exp.primary_full_value(self.metric.name) is None
                if exp.flags or smoke_only:
                    out.append(copy.deepcopy(exp))
            return out

    def columns(self) -> dict[str, list[Experiment]]:
        """Projection of all experiments onto the display columns (total, single-valued)."""
        with self._lock:
            cols: dict[str, list[Experiment]] = {name: [] for name in DISPLAY_COLUMNS}
            for exp in sorted(self.experiments.values(), key=lambda e: e.id):
                cols[COLUMN_OF_STATE[exp.state]].append(copy.deepcopy(exp))
            return cols

    def non_terminal(self) -> list[Experiment]:
        with self._lock:
            return [copy.deepcopy(e) for e in self.experiments.values() if e.state not in TERMINAL_STATES]

    def events_since(self, seq: int) -> list[BoardEvent]:
        with self._lock:
            return [copy.deepcopy(ev) for ev in self.events if ev.seq > seq]

    def snapshot(self) -> dict:
        """Full structural snapshot; two boards are equal iff their snapshots are."""
        with self._lock:
            return {
                "campaign": _campaign_dict(self.campaign),
                "metric": {
                    "name": self.metric.name,
                    "direction": self.metric.direction,
                    "known": list(self.metric.known),
                    "directions": dict(sorted(self.metric.directions.items())),
                },
                "config": self.config.to_dict(),
                "experiments": [_experiment_dict(e) for e in sorted(self.experiments.values(), key=lambda e: e.id)],
                "playbook": [
                    {"seq": v.seq, "content": v.content, "author": v.author, "created_at": v.created_at}
                    for v in self.playbook
                ],
                "journal_seq": self._seq,
            }

    def write_snapshot(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.snapshot(), sort_keys=True, indent=2, default=_json_default), encoding="utf-8")

    # -- persistence --------------------------------------------------------

    def persist(self, path: Path) -> Path:
        """Write the full journal (header + every event) to path."""
        with self._lock:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            lines = [self._header_line()] + [ev.line() for ev in self.events]
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            return path

    @classmethod
    def load(cls, path: Path, clock: Callable[[], float] = wall_clock, journal_path: Optional[Path] = None) -> "Board":
        """Rebuild a board by replaying a journal; a torn final line is tolerated."""
        raw = Path(path).read_bytes().decode("utf-8", errors="replace")
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise CorruptJournal("journal is empty")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CorruptJournal(f"journal header unreadable: {exc}") from exc
        if header.get("record") != "campaign":
            raise CorruptJournal("journal does not start with a campaign header")
        metric = MetricSpec(
            name=header["metric"]["name"],
            direction=header["metric"]["direction"],
            known=tuple(header["metric"]["known"]),
            directions=dict(header["metric"].get("directions", {})),
        )
        board = cls(
            campaign_id=header["id"],
            budget=header["budget"],
            metric=metric,
            config=CampaignConfig.from_dict(header["config"]),
            clock=clock,
            journal_path=None,
        )
        for idx, line in enumerate(lines[1:], start=1):
            is_tail = idx == len(lines) - 1
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                if is_tail:
                    break  # torn tail: replay the complete prefix
                raise CorruptJournal(f"journal line {idx + 1} unreadable")
            if not isinstance(rec, dict) or not {"seq", "kind", "at", "payload"} <= rec.keys():
                if is_tail:
                    break
                raise CorruptJournal(f"journal line {idx + 1} is not an event record")
            ev = BoardEvent(seq=rec["seq"], kind=rec["kind"], at=rec["at"], payload=rec["payload"])
            board._apply(ev)
            board.events.append(ev)
            board._seq = ev.seq
        if journal_path is not None:
            board._journal_path = Path(journal_path)
            board._journal_path.parent.mkdir(parents=True, exist_ok=True)
            board._journal_file = open(board._journal_path, "w", encoding="utf-8")
            board._journal_file.write(board._header_line() + "\n")
            for ev in board.events:
                board._journal_file.write(ev.line() + "\n")
            board._journal_file.flush()
        return board

    def close(self) -> None:
        with self._lock:
            if self._journal_file is not None:
                self._journal_file.close()
                self._journal_file = None


def _campaign_dict(c: CampaignState) -> dict:
    out = dict(c.__dict__)
    out["chat_pending"] = list(c.chat_pending)
    return out


def _experiment_dict(e: Experiment) -> dict:
    return {
        "id": e.id,
        "name": e.name,
        "hypothesis": e.hypothesis,
        "state": e.state,
        "fix_attempts": e.fix_attempts,
        "priority_hint": e.priority_hint,
        "worker_id": e.worker_id,
        "job": dict(e.job) if e.job else None,
        "metrics": {
            name: [
                {"value": encode_value(r.value), "direction": r.direction, "scope": r.scope, "recorded_at": r.recorded_at}
                for r in recs
            ]
            for name, recs in sorted(e.metrics.items())
        },
        "flags": list(e.flags),
        "cancel_reason": e.cancel_reason,
        "created_at": e.created_at,
        "updated_at": e.updated_at,
        "analyzed_at": e.analyzed_at,
    }


def _json_default(obj: Any):
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
