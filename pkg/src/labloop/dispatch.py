"""Priority dispatcher: the phase-3 control loop.

tick() is pure scheduling: it polls jobs, moves board state and returns a
list of actions (worker tasks, strategist turns, milestone reports,
supervisor interventions, halt). It never calls an agent backend itself; the
campaign loop executes the actions between ticks. Task priority is
fix > analyze > implement, FIFO within a class.
"""

from __future__ import annotations

import heapq
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .adapter import ContextDoc
from .board import Board, TERMINAL_STATES
from .cluster import ClusterBackend, JobSpec, TERMINAL_JOB_STATES
from .errors import NonFiniteValue, SubmitFailed, UnknownMetric

log = logging.getLogger(__name__)

CLASS_RANK = {"fix": 0, "analyze": 1, "implement": 2}
CANCELLABLE_STATES = frozenset({"to_implement", "implemented", "checked", "queued", "running"})

BAND_GUIDANCE = {
    "explore": "Explore freely across diverse directions.",
    "focus": "Focus on the directions already showing promise.",
    "refine": "Only high-confidence refinements of top performers.",
    "selective": "Be extremely selective; propose only near-certain wins over the current best.",
    "stop": "Stop proposing new experiments. Acknowledge results and summarize.",
}

PROPOSE_RE = re.compile(r"^PROPOSE:\s*([^|\n]+?)\s*\|\s*([^|\n]+?)(?:\s*\|\s*([^|\n]+?))?\s*$", re.MULTILINE)
CANCEL_RE = re.compile(r"^CANCEL:\s*([^|\n]+?)\s*\|\s*([^\n]+?)\s*$", re.MULTILINE)
STATUS_RE = re.compile(r"^\s*STATUS:\s*(\w+)\s*$", re.IGNORECASE | re.MULTILINE)


def budget_band(budget: int) -> str:
    """Five-band posture from the remaining budget."""
    if budget > 20:
        return "explore"
    if budget > 10:
        return "focus"
    if budget > 5:
        return "refine"
    if budget > 0:
        return "selective"
    return "stop"


@dataclass
class Task:
    kind: str  # fix | analyze | implement
    exp_id: str
    seq: int
    created_at: float

    @property
    def rank(self) -> int:
        return CLASS_RANK[self.kind]


class TaskQueue:
    """Priority queue over task classes with FIFO inside each class."""

    def __init__(self):
        self._heap: list[tuple[int, int, Task]] = []
        self._seq = 0

    def push(self, kind: str, exp_id: str, created_at: float = 0.0) -> Task:
        self._seq += 1
        task = Task(kind=kind, exp_id=exp_id, seq=self._seq, created_at=created_at)
        heapq.heappush(self._heap, (task.rank, task.seq, task))
        return task

    def pop(self) -> Optional[Task]:
        if not self._heap:
            return None
        return heapq.heappop(self._heap)[2]

    def clear(self) -> None:
        self._heap = []

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self):
        return iter(task for _, _, task in sorted(self._heap))


@dataclass
class StrategistOutput:
    proposals: list = field(default_factory=list)  # {"name", "hypothesis", "priority_hint"}
    cancellations: list = field(default_factory=list)  # {"name", "reason"}
    playbook_update: Optional[str] = None


def parse_strategist_report(text: str) -> StrategistOutput:
    """Structured lines out of a strategist report; everything else is prose."""
    text = text or ""
    out = StrategistOutput()
    for match in PROPOSE_RE.finditer(text):
        out.proposals.append(
            {"name": match.group(1).strip(), "hypothesis": match.group(2).strip(), "priority_hint": (match.group(3) or "").strip() or None}
        )
    for match in CANCEL_RE.finditer(text):
        out.cancellations.append({"name": match.group(1).strip(), "reason": match.group(2).strip()})
    playbook_match = re.search(r"^PLAYBOOK:\s*$(.*?)(?:^END PLAYBOOK\s*$|\Z)", text, re.MULTILINE | re.DOTALL)
    if playbook_match:
        content = playbook_match.group(1).strip()
        if content:
            out.playbook_update = content
    return out


# -- actions ----------------------------------------------------------------

@dataclass
class RunTask:
    task: Task
    worker_id: str


@dataclass
class StrategistTurn:
    reason: str


@dataclass
class MilestoneReport:
    number: int


@dataclass
class SupervisorIntervention:
    pass


@dataclass
class HaltCampaign:
    reason: str


class Dispatcher:
    """Owns scheduling state; the board stays the single source of experiment truth."""

    def __init__(self, board: Board, cluster: ClusterBackend, runner, bundle, supervisor, workspace: Path):
        self.board = board
        self.cluster = cluster
        self.runner = runner
        self.bundle = bundle
        self.supervisor = supervisor
        self.workspace = Path(workspace)
        self.config = board.config
        self.queue = TaskQueue()
        self.active: dict[str, object] = {}  # exp_id -> JobHandle
        self._job_seen: dict[str, str] = {}  # exp_id -> last job state acted on
        self._tasked: set = set()  # (exp_id, kind, round) dedupe keys
        self._busy_workers: set = set()
        self._turn_pending = False
        self._milestones_scheduled = board.campaign.milestones_emitted
        self._supervisor_pending = False
        self._halt_emitted = False
        self._last_turn_analyzed = 0
        self._last_turn_seq = -1
        self._idle_ticks = 0
        self.recent_failures: list[str] = []
        self.halt_requested: Optional[str] = None
        board.subscribe(self._on_board_event)

    # -- board listener ------------------------------------------------------

    def _on_board_event(self, ev) -> None:
        if ev.kind == "transition" and ev.payload["to"] in TERMINAL_STATES:
            self.supervisor.on_terminal(ev.payload["exp_id"], ev.payload["to"])

    # -- tick ----------------------------------------------------------------

    def tick(self) -> list:
        """One scheduling pass; strictly ordered steps, idempotent when nothing changed."""
        if self.board.campaign.phase == "halted":
            return []
        actions: list = []
        self._poll_jobs()
        self._enqueue_checked()
        self._collect_new_tasks()
        self._assign_workers(actions)
        self._check_strategist(actions)
        self._check_milestones(actions)
        self._check_supervisor(actions)
        self._check_halt(actions)
        if not actions and not self.active:
            self._idle_ticks += 1
            if self._idle_ticks >= self.config.max_idle_ticks and not self._halt_emitted:
                log.warning("campaign idle for %d ticks; halting", self._idle_ticks)
                self._halt_emitted = True
                actions.append(HaltCampaign("idle"))
        else:
            self._idle_ticks = 0
        return actions

    # step 1: poll running/pending jobs
    def _poll_jobs(self) -> None:
        for exp_id in sorted(self.active):
            handle = self.active[exp_id]
            # one poll can drain several due jobs at once, so compare against
            # the state this dispatcher last acted on, not the live handle
            before = self._job_seen.get(exp_id, "pending")
            try:
                handle = self.cluster.poll(handle)
            except Exception as exc:
                log.warning("poll failed for %s: %s", exp_id, exc)
                continue
            self.active[exp_id] = handle
            if handle.state == before:
                continue
            self._job_seen[exp_id] = handle.state
            self.board.record_job(exp_id, handle.external_id or handle.id, handle.state, detail=handle.detail)
            exp = self.board.experiment(exp_id)
            if handle.state == "running" and exp.state == "queued":
                self.board.transition(exp_id, "job_launched")
            elif handle.state in TERMINAL_JOB_STATES:
                del self.active[exp_id]
                self._job_seen.pop(exp_id, None)
                if exp.state == "queued" and handle.state in ("completed", "failed", "timeout"):
                    # job raced through start and end between polls
                    self.board.transition(exp_id, "job_launched")
                    exp = self.board.experiment(exp_id)
                if exp.state != "running":
                    continue  # cancellation already moved the board
                if handle.state == "completed":
                    self.board.transition(exp_id, "job_succeeded")
                    self._push_task("analyze", exp_id)
                elif handle.state in ("failed", "timeout"):
                    # a timed-out job counts as a failure
                    self.board.transition(exp_id, "job_failed")
                    self._note_failure(exp_id)
                    self.handle_failure(exp_id)

    # step 2: enqueue checked experiments
    def _enqueue_checked(self) -> None:
        checked = sorted(self.board.in_state("checked"), key=lambda e: (e.updated_at, e.id))
        for exp in checked:
            self.board.transition(exp.id, "enqueue")
            structure = self.bundle.manifest.experiment_structure if self.bundle else {}
            run_script = structure.get("run_script", "run_experiment.py")
            spec = JobSpec(
                experiment_id=exp.id,
                name=exp.name,
                command=f"python {run_script}",
                workdir=f"experiments/{exp.name}",
                gpus=self.config.gpus_per_job,
                time_limit_s=self.config.job_time_limit_s,
                priority=0 if exp.fix_attempts > 0 else 1,
            )
            try:
                handle = self.cluster.submit(spec)
            except (SubmitFailed, ValueError) as exc:
                log.warning("submit failed for %s: %s", exp.name, exc)
                self.board.transition(exp.id, "work_failed")
                self._note_failure(exp.id, str(exc))
                self.handle_failure(exp.id)
                continue
            self.active[exp.id] = handle
            self._job_seen[exp.id] = handle.state
            self.board.record_job(exp.id, handle.external_id or handle.id, handle.state)
            if handle.state == "running":
                self.board.transition(exp.id, "job_launched")

    # step 2b: task intake for freshly accepted proposals
    def _collect_new_tasks(self) -> None:
        for exp in sorted(self.board.in_state("to_implement"), key=lambda e: e.id):
            self._push_task("implement", exp.id)

    def _push_task(self, kind: str, exp_id: str) -> None:
        exp = self.board.experiment(exp_id)
        key = (exp_id, kind, exp.fix_attempts if kind == "fix" else 0)
        if key in self._tasked:
            return
        self._tasked.add(key)
        self.queue.push(kind, exp_id, created_at=self.board.clock())

    # step 3: hand tasks to free workers in priority order
    def _assign_workers(self, actions: list) -> None:
        while len(self._busy_workers) < self.config.num_workers:
            task = self.queue.pop()
            if task is None:
                return
            exp = self.board.experiment(task.exp_id)
            if exp.state in TERMINAL_STATES:
                continue  # cancelled while waiting; drop silently
            worker_id = self._free_worker_id()
            self._busy_workers.add(worker_id)
            actions.append(RunTask(task=task, worker_id=worker_id))

    def _free_worker_id(self) -> str:
        for i in range(1, self.config.num_workers + 1):
            wid = f"w{i}"
            if wid not in self._busy_workers:
                return wid
        raise RuntimeError("no free worker")  # guarded by caller

    # step 4: strategist cadence (plus starvation bootstrap / budget-zero flush)
    def _check_strategist(self, actions: list) -> None:
        if self._turn_pending:
            return
        camp = self.board.campaign
        if camp.analyzed_count - self._last_turn_analyzed >= self.config.strategist_cadence:
            self._turn_pending = True
            actions.append(StrategistTurn(reason="cadence"))
            return
        nothing_to_do = len(self.queue) == 0 and not self.active and not any(a for a in actions if isinstance(a, RunTask))
        board_moved = self.board.events and self.board.events[-1].seq > self._last_turn_seq
        has_analyzed = bool(self.board.in_state("analyzed"))
        if nothing_to_do and board_moved and (camp.budget_remaining > 0 or has_analyzed):
            self._turn_pending = True
            actions.append(StrategistTurn(reason="bootstrap" if camp.strategist_turns == 0 else "flush"))

    # step 5: milestone cadence
    def _check_milestones(self, actions: list) -> None:
        due = self.board.campaign.analyzed_count // self.config.milestone_cadence
        while self._milestones_scheduled < due:
            self._milestones_scheduled += 1
            actions.append(MilestoneReport(number=self._milestones_scheduled))

    # step 6: supervisor trigger
    def _check_supervisor(self, actions: list) -> None:
        if self._supervisor_pending:
            return
        if self.supervisor.should_trigger():
            self._supervisor_pending = True
            actions.append(SupervisorIntervention())

    # step 7: convergence / requested halt
    def _check_halt(self, actions: list) -> None:
        if self._halt_emitted:
            return
        if self.halt_requested:
            self._halt_emitted = True
            actions.append(HaltCampaign(self.halt_requested))
            return
        converged, reason = self.converged()
        if converged:
            self._halt_emitted = True
            actions.append(HaltCampaign(reason))

    def converged(self) -> tuple[bool, Optional[str]]:
        """Stall cap reached, or budget exhausted with nothing still moving."""
        camp = self.board.campaign
        if camp.stall_count >= self.config.convergence_c:
            return True, "stalled"
        if camp.budget_remaining <= 0 and camp.budget_initial > 0:
            if not self.board.non_terminal():
                return True, "budget_exhausted"
        return False, None

    def request_halt(self, reason: str = "user_requested") -> None:
        self.halt_requested = reason

    # -- failure routing -----------------------------------------------------

    def _note_failure(self, exp_id: str, extra: Optional[str] = None) -> None:
        exp = self.board.experiment(exp_id)
        log_path = self.workspace / "experiments" / exp.name / "results" / "job.log"
        excerpt = f"experiment {exp.name} (attempt {exp.fix_attempts + 1})"
        if extra:
            excerpt += f": {extra}"
        if log_path.is_file():
            tail = log_path.read_text(encoding="utf-8", errors="replace")[-1000:]
            excerpt += "\n" + tail
        self.recent_failures.append(excerpt)
        del self.recent_failures[:-10]

    def handle_failure(self, exp_id: str) -> None:
        """Fix cap: under k_max the failure earns a fix task; at the cap it is terminal."""
        exp = self.board.experiment(exp_id)
        if exp.state != "failed":
            return
        if exp.fix_attempts < self.config.k_max:
            self._push_task("fix", exp_id)
        else:
            self.board.transition(exp_id, "fix")  # lands failed_terminal

    # -- action execution (called by the campaign loop) ----------------------

    def complete_task(self, worker_id: str) -> None:
        self._busy_workers.discard(worker_id)

    def run_worker_task(self, run: RunTask) -> None:
        task = run.task
        try:
            if task.kind == "implement":
                self._do_implement(run, fix=False)
            elif task.kind == "fix":
                self._do_implement(run, fix=True)
            elif task.kind == "analyze":
                self._do_analyze(run)
        finally:
            self.complete_task(run.worker_id)

    def _structure(self) -> dict:
        return self.bundle.manifest.experiment_structure if self.bundle else {}

    def _playbook_doc(self) -> ContextDoc:
        head = self.board.playbook_head()
        text = head.content if head else "(playbook is empty)"
        return ContextDoc("playbook:head", "Playbook", text)

    def _leaderboard_doc(self, top_k: int = 5) -> ContextDoc:
        rows = self.board.leaderboard(top_k=top_k)
        lines = [f"{i + 1}. {exp.name}: {self.board.metric.name}={value}" for i, (exp, value) in enumerate(rows)]
        return ContextDoc("board:leaderboard", "Leaderboard", "\n".join(lines) or "(empty leaderboard)")

    def _do_implement(self, run: RunTask, fix: bool) -> None:
        task = run.task
        exp = self.board.experiment(task.exp_id)
        if fix:
            if exp.state != "failed":
                return
            exp = self.board.transition(task.exp_id, "fix", worker_id=run.worker_id)
            if exp.state == "failed_terminal":
                return
        else:
            if exp.state != "to_implement":
                return
            exp = self.board.transition(task.exp_id, "assign", worker_id=run.worker_id)

        run_script = self._structure().get("run_script", "run_experiment.py")
        task_lines = [
            f"TASK: {'fix' if fix else 'implement'}",
            f"EXPERIMENT: {exp.id}",
            f"NAME: {exp.name}",
            f"HYPOTHESIS: {exp.hypothesis}",
            f"RUN_SCRIPT: {run_script}",
            f"WORKDIR: experiments/{exp.name}",
        ]
        if fix:
            task_lines.append(f"FIX_ATTEMPT: {exp.fix_attempts}")
            log_path = self.workspace / "experiments" / exp.name / "results" / "job.log"
            if log_path.is_file():
                task_lines.append("FAILURE LOG:\n" + log_path.read_text(encoding="utf-8", errors="replace")[-2000:])
        extras = [
            ContextDoc("task:work", "Task", "\n".join(task_lines)),
            self._playbook_doc(),
            self._leaderboard_doc(),
        ]
        session = self.runner.run_role_session(role="worker", bundle=self.bundle, extras=extras, phase="phase3")
        declared = self._declared_status(session)
        script_path = self.workspace / "experiments" / exp.name / run_script
        # bare "implemented" would strand the experiment: nothing re-checks it later,
        # so anything short of a passing check goes through the fix path
        if session.outcome == "reported" and declared == "checked" and script_path.is_file():
            self.board.transition(exp.id, "code_written", worker_id=run.worker_id)
            self.board.transition(exp.id, "checks_passed", worker_id=run.worker_id)
        else:
            reason = (
                f"worker session {session.id} outcome={session.outcome}, declared={declared}, "
                f"artifact={'present' if script_path.is_file() else 'missing'}"
            )
            log.warning("implement failed for %s: %s", exp.name, reason)
            self._append_job_log(exp.name, f"worker failure: {reason}")
            self.board.transition(exp.id, "work_failed")
            self._note_failure(exp.id, reason)
            self.handle_failure(exp.id)

    def _do_analyze(self, run: RunTask) -> None:
        task = run.task
        exp = self.board.experiment(task.exp_id)
        if exp.state != "finished":
            return
        results_rel = f"experiments/{exp.name}/results/metrics.json"
        debrief_rel = f"experiments/{exp.name}/debrief.md"
        extras = [
            ContextDoc(
                "task:work",
                "Task",
                "\n".join(
                    [
                        "TASK: analyze",
                        f"EXPERIMENT: {exp.id}",
                        f"NAME: {exp.name}",
                        f"HYPOTHESIS: {exp.hypothesis}",
                        f"RESULTS: {results_rel}",
                        f"DEBRIEF: {debrief_rel}",
                    ]
                ),
            ),
            self._playbook_doc(),
            self._leaderboard_doc(),
        ]
        session = self.runner.run_role_session(role="worker", bundle=self.bundle, extras=extras, phase="phase3")
        declared = self._declared_status(session)
        debrief_path = self.workspace / debrief_rel
        metrics_path = self.workspace / results_rel
        if session.outcome == "reported" and declared == "analyzed" and debrief_path.is_file():
            self._record_metrics(exp.id, metrics_path)
            self.board.transition(exp.id, "debrief_written", worker_id=run.worker_id)
        else:
            reason = (
                f"analysis session {session.id} outcome={session.outcome}, declared={declared}, "
                f"debrief={'present' if debrief_path.is_file() else 'missing'}"
            )
            log.warning("analyze failed for %s: %s", exp.name, reason)
            self._append_job_log(exp.name, f"analysis failure: {reason}")
            self.board.transition(exp.id, "work_failed")
            self._note_failure(exp.id, reason)
            self.handle_failure(exp.id)

    def _record_metrics(self, exp_id: str, metrics_path: Path) -> None:
        if not metrics_path.is_file():
            return
        try:
            data = json.loads(metrics_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            log.warning("unreadable metrics file for %s: %s", exp_id, exc)
            return
        scope = data.get("scope", "full")
        for name, value in sorted((data.get("metrics") or {}).items()):
            try:
                self.board.record_metric(exp_id, name, float(value), scope)
            except NonFiniteValue as exc:
                log.warning("%s", exc)  # stored and flagged; never ranked
            except (UnknownMetric, TypeError, ValueError) as exc:
                log.warning("skipping metric %s for %s: %s", name, exp_id, exc)

    def _declared_status(self, session) -> Optional[str]:
        matches = STATUS_RE.findall(session.report or "")
        return matches[-1].lower() if matches else None

    def _append_job_log(self, exp_name: str, line: str) -> None:
        results = self.workspace / "experiments" / exp_name / "results"
        try:
            results.mkdir(parents=True, exist_ok=True)
            with open(results / "job.log", "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError:
            pass

    # -- strategist turn -----------------------------------------------------

    def run_strategist_turn(self, reason: str) -> None:
        camp = self.board.campaign
        budget = camp.budget_remaining
        band = budget_band(budget)
        seq_before = self.board.events[-1].seq if self.board.events else 0
        chat = list(camp.chat_pending)
        task_lines = [
            "TASK: strategist_turn",
            f"REASON: {reason}",
            f"BUDGET REMAINING: {budget}",
            f"BUDGET BAND: {band}",
            f"GUIDANCE: {BAND_GUIDANCE[band]}",
            f"ANALYZED: {camp.analyzed_count}",
            f"STALL COUNT: {camp.stall_count}",
            f"BEST: {camp.best_primary if camp.best_primary is not None else 'none yet'}",
        ]
        extras = [
            ContextDoc("task:strategist", "Task", "\n".join(task_lines)),
            self._playbook_doc(),
            self._leaderboard_doc(),
            self._debriefs_doc(),
        ]
        if chat:
            guidance = "\n".join(f"- {msg}" for msg in chat)
            extras.append(ContextDoc("chat:guidance", "Human guidance", "HUMAN GUIDANCE:\n" + guidance))
        session = self.runner.run_role_session(role="strategist", bundle=self.bundle, extras=extras, phase="phase3")

        out = parse_strategist_report(session.report or "")
        applied = self.apply_strategist_output(out)

        # the turn acknowledges every debrief it has now seen
        for exp in sorted(self.board.in_state("analyzed"), key=lambda e: e.id):
            self.board.transition(exp.id, "acknowledge")

        accepted = rejected = 0
        for ev in self.board.events_since(seq_before):
            if ev.kind == "proposal":
                if ev.payload["accepted"]:
                    accepted += 1
                else:
                    rejected += 1
        self.board.record_strategist_turn(
            reason=reason,
            summary={
                "session": session.id,
                "outcome": session.outcome,
                "budget_before": budget,
                "budget_after": self.board.campaign.budget_remaining,
                "accepted": accepted,
                "rejected": rejected,
                "cancelled": applied["cancelled"],
                "playbook_updated": applied["playbook_updated"],
                "chat_drained": len(chat),
            },
        )
        self._last_turn_analyzed = self.board.campaign.analyzed_count
        self._last_turn_seq = self.board.events[-1].seq
        self._turn_pending = False

    def _debriefs_doc(self) -> ContextDoc:
        chunks = []
        for exp in sorted(self.board.in_state("analyzed"), key=lambda e: e.id)[:5]:
            path = self.workspace / "experiments" / exp.name / "debrief.md"
            if path.is_file():
                chunks.append(f"## {exp.name}\n" + path.read_text(encoding="utf-8", errors="replace")[:1000])
        return ContextDoc("board:debriefs", "New debriefs", "\n\n".join(chunks) or "(no new debriefs)")

    def apply_strategist_output(self, out: StrategistOutput) -> dict:
        """Apply proposals in order (budget gates them), then cancellations, then the playbook."""
        for proposal in out.proposals:
            self.board.propose(proposal["name"], proposal["hypothesis"], proposal.get("priority_hint"))
        cancelled = []
        for cancellation in out.cancellations:
            name = cancellation["name"]
            reason = cancellation["reason"]
            exp = self.board.by_name(name)
            if exp is None:
                self.board.record_cancel_decision(name, reason, "strategist", False, "UnknownExperiment")
                continue
            if exp.state in TERMINAL_STATES:
                self.board.record_cancel_decision(name, reason, "strategist", False, "TerminalMutation")
                continue
            if exp.state not in CANCELLABLE_STATES:
                self.board.record_cancel_decision(name, reason, "strategist", False, f"NotCancellable({exp.state})")
                continue
            if exp.state == "running" and exp.id in self.active:
                handle = self.active.pop(exp.id)
                self._job_seen.pop(exp.id, None)
                try:
                    handle = self.cluster.cancel(handle)
                    self.board.record_job(exp.id, handle.external_id or handle.id, handle.state)
                except Exception as exc:
                    log.warning("job cancel failed for %s: %s", name, exc)
            elif exp.state == "queued" and exp.id in self.active:
                handle = self.active.pop(exp.id)
                self._job_seen.pop(exp.id, None)
                try:
                    self.cluster.cancel(handle)
                except Exception as exc:
                    log.warning("job cancel failed for %s: %s", name, exc)
            self.board.transition(exp.id, "cancel", cancel_reason=reason)
            self.board.record_cancel_decision(name, reason, "strategist", True)
            cancelled.append(name)
        playbook_updated = False
        if out.playbook_update:
            try:
                self.board.append_playbook(out.playbook_update, author="strategist")
                playbook_updated = True
            except Exception as exc:
                log.warning("playbook update rejected: %s", exc)
        return {"cancelled": cancelled, "playbook_updated": playbook_updated}

    # -- milestone reports ---------------------------------------------------

    def run_milestone(self, number: int) -> None:
        rel_path = f"reports/milestone_{number:03d}/overview.md"
        extras = [
            ContextDoc(
                "task:work",
                "Task",
                "\n".join(
                    [
                        "TASK: milestone_report",
                        f"MILESTONE: {number}",
                        f"PATH: {rel_path}",
                        f"ANALYZED: {self.board.campaign.analyzed_count}",
                        f"BUDGET REMAINING: {self.board.campaign.budget_remaining}",
                    ]
                ),
            ),
            self._leaderboard_doc(),
            self._playbook_doc(),
        ]
        session = self.runner.run_role_session(role="worker", bundle=self.bundle, extras=extras, phase="phase3")
        path = self.workspace / rel_path
        if not path.is_file():
            # the report must exist; fall back to the session report or board stats
            path.parent.mkdir(parents=True, exist_ok=True)
            body = session.report or f"Milestone {number}: {self.board.campaign.analyzed_count} experiments analyzed."
            path.write_text(f"# Milestone {number:03d}\n\n{body}\n", encoding="utf-8")
        self.board.record_milestone(number, rel_path)

    # -- supervisor ----------------------------------------------------------

    def run_supervisor(self) -> None:
        try:
            self.supervisor.intervene(list(self.recent_failures))
        finally:
            self._supervisor_pending = False

    # -- halt ----------------------------------------------------------------

    def halt(self, reason: str) -> None:
        """Cooperative shutdown: cancel jobs, flush analyzed to done, cancel the rest."""
        for exp_id in sorted(self.active):
            handle = self.active.pop(exp_id)
            self._job_seen.pop(exp_id, None)
            try:
                handle = self.cluster.cancel(handle)
                self.board.record_job(exp_id, handle.external_id or handle.id, handle.state)
            except Exception as exc:
                log.warning("job cancel failed during halt for %s: %s", exp_id, exc)
        for exp in sorted(self.board.non_terminal(), key=lambda e: e.id):
            if exp.state == "analyzed":
                self.board.transition(exp.id, "acknowledge")
            else:
                self.board.transition(exp.id, "cancel", cancel_reason="campaign_halted")
        self.queue.clear()
        self.board.set_phase("halted", reason=reason)

    # -- resume --------------------------------------------------------------

    def adopt_existing(self) -> None:
        """After a journal reload: restore schedulable state for a mid-flight campaign.

        Live job handles are gone with the old process, so running work is
        treated as a failure (fix-eligible) and queued work is resubmitted.
        """
        self.supervisor.rebuild_from_board()
        self._last_turn_analyzed = self.board.campaign.analyzed_count
        self._milestones_scheduled = self.board.campaign.milestones_emitted
        for exp in sorted(self.board.all_experiments(), key=lambda e: e.id):
            if exp.state == "running":
                self.board.transition(exp.id, "job_failed")
                self._note_failure(exp.id, "orchestrator restart lost the job handle")
                self.handle_failure(exp.id)
            elif exp.state == "implementing":
                # the worker session died with the old process
                self.board.transition(exp.id, "work_failed")
                self._note_failure(exp.id, "orchestrator restart lost the worker session")
                self.handle_failure(exp.id)
            elif exp.state == "implemented":
                # code_written and checks_passed are recorded back to back; a crash
                # between the two writes leaves a validated check unrecorded
                self.board.transition(exp.id, "checks_passed")
            elif exp.state == "queued":
                # board state is still accurate; only the handle was lost
                self._resubmit(exp)
            elif exp.state == "finished":
                self._push_task("analyze", exp.id)
            elif exp.state == "failed":
                self.handle_failure(exp.id)

    def _resubmit(self, exp) -> None:
        run_script = self._structure().get("run_script", "run_experiment.py")
        spec = JobSpec(
            experiment_id=exp.id,
            name=exp.name,
            command=f"python {run_script}",
            workdir=f"experiments/{exp.name}",
            gpus=self.config.gpus_per_job,
            time_limit_s=self.config.job_time_limit_s,
            priority=0 if exp.fix_attempts > 0 else 1,
        )
        try:
            handle = self.cluster.submit(spec)
        except (SubmitFailed, ValueError) as exc:
            log.warning("resubmit failed for %s: %s", exp.name, exc)
            self.board.transition(exp.id, "work_failed")
            self._note_failure(exp.id, str(exc))
            self.handle_failure(exp.id)
            return
        self.active[exp.id] = handle
        self._job_seen[exp.id] = handle.state
        self.board.record_job(exp.id, handle.external_id or handle.id, handle.state, detail="resubmitted after restart")
        if handle.state == "running":
            self.board.transition(exp.id, "job_launched")
