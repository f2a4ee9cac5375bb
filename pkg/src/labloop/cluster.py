"""Cluster abstraction: submit/poll/cancel over three interchangeable backends.

The simulation backend drives experiments from an outcome table on a virtual
clock and is the substrate for deterministic fixture campaigns. GPU
accounting is first-fit over a fixed fleet; allocated + free == fleet size is
an invariant checked by tests against the event log this module records.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import Callable, Optional

from .clock import wall_clock
from .errors import SubmitFailed, UnknownHandle

log = logging.getLogger(__name__)

JOB_STATES = ("pending", "running", "completed", "failed", "cancelled", "timeout")
_STATE_RANK = {"pending": 0, "running": 1, "completed": 2, "failed": 2, "cancelled": 2, "timeout": 2}
TERMINAL_JOB_STATES = frozenset({"completed", "failed", "cancelled", "timeout"})


@dataclass
class JobSpec:
    experiment_id: str
    name: str
    command: str
    workdir: str
    gpus: int = 1
    time_limit_s: float = 7200.0
    env: dict = field(default_factory=dict)
    priority: int = 1  # 0 = fix-linked, served first


@dataclass
class JobHandle:
    id: str
    spec: JobSpec
    state: str = "pending"
    external_id: Optional[str] = None
    submitted_at: float = 0.0
    started_at: Optional[float] = None
    ended_at: Optional[float] = None
    exit_code: Optional[int] = None
    detail: Optional[str] = None

    def advance(self, state: str) -> None:
        # job states only move forward
        if _STATE_RANK[state] < _STATE_RANK[self.state]:
            raise ValueError(f"job {self.id} cannot move {self.state} -> {state}")
        self.state = state


class GpuPool:
    """First-fit allocator over a fixed fleet with a priority wait queue."""

    def __init__(self, fleet_size: int, clock: Callable[[], float] = wall_clock):
        self.fleet_size = fleet_size
        self.clock = clock
        self.free: list[int] = list(range(fleet_size))
        self.allocated: dict[str, list[int]] = {}
        self.waiting: list[tuple[int, int, str, int]] = []  # (priority, seq, job_id, gpus)
        self._seq = 0
        self.events: list[dict] = []

    def _record(self, event: str, job_id: str, gpus: list[int]) -> None:
        self.events.append(
            {
                "at": self.clock(),
                "event": event,
                "job": job_id,
                "gpus": list(gpus),
                "free": len(self.free),
                "allocated": sum(len(v) for v in self.allocated.values()),
            }
        )

    def try_allocate(self, job_id: str, gpus: int) -> Optional[list[int]]:
        """First fit: grab the lowest free ids; None when not enough are free."""
        if gpus > self.fleet_size:
            raise ValueError(f"requested {gpus} GPUs on a fleet of {self.fleet_size}")
        if len(self.free) < gpus:
            return None
        ids = sorted(self.free)[:gpus]
        for i in ids:
            self.free.remove(i)
        self.allocated[job_id] = ids
        self._record("allocate", job_id, ids)
        return ids

    def enqueue(self, job_id: str, gpus: int, priority: int) -> None:
        self._seq += 1
        self.waiting.append((priority, self._seq, job_id, gpus))
        self._record("queue", job_id, [])

    def release(self, job_id: str) -> list[str]:
        """Free a job's GPUs, then serve the oldest highest-priority waiters first."""
        ids = self.allocated.pop(job_id, [])
        self.free.extend(ids)
        self.free.sort()
        self._record("release", job_id, ids)
        started = []
        self.waiting.sort(key=lambda item: (item[0], item[1]))
        still_waiting = []
        for priority, seq, waiting_id, gpus in self.waiting:
            if len(self.free) >= gpus:
                got = sorted(self.free)[:gpus]
                for i in got:
                    self.free.remove(i)
                self.allocated[waiting_id] = got
                self._record("allocate", waiting_id, got)
                started.append(waiting_id)
            else:
                still_waiting.append((priority, seq, waiting_id, gpus))
        self.waiting = still_waiting
        return started

    def drop_waiting(self, job_id: str) -> bool:
        before = len(self.waiting)
        self.waiting = [w for w in self.waiting if w[2] != job_id]
        if len(self.waiting) != before:
            self._record("cancel", job_id, [])
            return True
        return False

    def conserved(self) -> bool:
        return len(self.free) + sum(len(v) for v in self.allocated.values()) == self.fleet_size


class ClusterBackend:
    """submit/poll/cancel; concrete backends fill in the mechanics."""

    def submit(self, spec: JobSpec) -> JobHandle:
        raise NotImplementedError

    def poll(self, handle: JobHandle) -> JobHandle:
        raise NotImplementedError

    def cancel(self, handle: JobHandle) -> JobHandle:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Simulation backend

@dataclass
class OutcomeEntry:
    pattern: str
    duration_s: float = 100.0
    exit_code: int = 0
    metrics: dict = field(default_factory=dict)
    scope: str = "full"
    stdout: str = ""
    stderr: str = ""


class OutcomeTable:
    """Name-pattern -> scripted job outcome; first match wins, so order entries from specific to general."""

    def __init__(self, entries: list):
        self.entries = [e if isinstance(e, OutcomeEntry) else OutcomeEntry(**e) for e in entries]

    def match(self, name: str) -> OutcomeEntry:
        for entry in self.entries:
            if fnmatch(name, entry.pattern):
                return entry
        return OutcomeEntry(pattern="*")

    def to_dict(self) -> dict:
        return {"entries": [dict(e.__dict__) for e in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "OutcomeTable":
        return cls(list(data.get("entries", [])))


@dataclass
class _SimJob:
    handle: JobHandle
    entry: OutcomeEntry
    order: int
    end_at: Optional[float] = None
    timed_out: bool = False


class SimCluster(ClusterBackend):
    """Virtual-clock cluster: job outcomes come from the table, never from real processes."""

    def __init__(self, outcome_table: OutcomeTable, clock, workspace: Path, fleet_size: int = 4):
        self.table = outcome_table
        self.clock = clock
        self.workspace = Path(workspace)
        self.pool = GpuPool(fleet_size, clock=clock)
        self.jobs: dict[str, _SimJob] = {}
        self._counter = 0
        self._order = 0

    @property
    def fleet_size(self) -> int:
        return self.pool.fleet_size

    def submit(self, spec: JobSpec) -> JobHandle:
        if spec.gpus > self.pool.fleet_size:
            raise ValueError(f"requested {spec.gpus} GPUs on a fleet of {self.pool.fleet_size}")
        self._counter += 1
        self._order += 1
        handle = JobHandle(id=f"sim-{self._counter:04d}", spec=spec, submitted_at=self.clock())
        handle.external_id = handle.id
        entry = self.table.match(spec.name)
        job = _SimJob(handle=handle, entry=entry, order=self._order)
        self.jobs[handle.id] = job
        ids = self.pool.try_allocate(handle.id, spec.gpus)
        if ids is not None:
            self._start(job)
        else:
            self.pool.enqueue(handle.id, spec.gpus, spec.priority)
        return handle

    def _start(self, job: _SimJob) -> None:
        now = self.clock()
        job.handle.advance("running")
        job.handle.started_at = now
        if job.entry.duration_s > job.handle.spec.time_limit_s:
            job.end_at = now + job.handle.spec.time_limit_s
            job.timed_out = True
        else:
            job.end_at = now + job.entry.duration_s

    def _drain(self) -> None:
        """Finish every job whose virtual end time has passed, oldest first."""
        while True:
            due = [
                j
                for j in self.jobs.values()
                if j.handle.state == "running" and j.end_at is not None and j.end_at <= self.clock()
            ]
            if not due:
                return
            due.sort(key=lambda j: (j.end_at, j.order))
            job = due[0]
            self._finish(job)

    def _finish(self, job: _SimJob) -> None:
        handle = job.handle
        handle.ended_at = job.end_at
        if job.timed_out:
            handle.advance("timeout")
            handle.detail = f"killed at time limit {handle.spec.time_limit_s:.0f}s"
            handle.exit_code = None
        else:
            handle.exit_code = job.entry.exit_code
            handle.advance("completed" if job.entry.exit_code == 0 else "failed")
        self._write_results(job)
        started = self.pool.release(handle.id)
        for job_id in started:
            self._start(self.jobs[job_id])

    def _write_results(self, job: _SimJob) -> None:
        results = self.workspace / "experiments" / job.handle.spec.name / "results"
        try:
            results.mkdir(parents=True, exist_ok=True)
            log_lines = [job.entry.stdout, job.entry.stderr]
            if job.timed_out:
                log_lines.append("JOB TIMED OUT")
            (results / "job.log").write_text("\n".join(line for line in log_lines if line) + "\n", encoding="utf-8")
            if job.handle.state == "completed":
                (results / "metrics.json").write_text(
                    json.dumps({"metrics": job.entry.metrics, "scope": job.entry.scope}, sort_keys=True),
                    encoding="utf-8",
                )
        except OSError as exc:
            log.warning("could not write sim results for %s: %s", job.handle.spec.name, exc)

    def poll(self, handle: JobHandle) -> JobHandle:
        if handle.id not in self.jobs:
            raise UnknownHandle(f"no job {handle.id}")
        self._drain()
        return self.jobs[handle.id].handle

    def cancel(self, handle: JobHandle) -> JobHandle:
        if handle.id not in self.jobs:
            raise UnknownHandle(f"no job {handle.id}")
        job = self.jobs[handle.id]
        if job.handle.state in TERMINAL_JOB_STATES:
            return job.handle
        if job.handle.state == "pending":
            self.pool.drop_waiting(handle.id)
            job.handle.advance("cancelled")
        else:
            job.handle.advance("cancelled")
            job.handle.ended_at = self.clock()
            started = self.pool.release(handle.id)
            for job_id in started:
                self._start(self.jobs[job_id])
        return job.handle


# ---------------------------------------------------------------------------
# Local subprocess backend

class LocalCluster(ClusterBackend):
    """Runs jobs as local subprocesses; GPU slots are bookkeeping only."""

    def __init__(self, workspace: Path, fleet_size: int = 4, clock: Callable[[], float] = wall_clock):
        self.workspace = Path(workspace)
        self.pool = GpuPool(fleet_size, clock=clock)
        self.clock = clock
        self.jobs: dict[str, dict] = {}
        self._counter = 0

    @property
    def fleet_size(self) -> int:
        return self.pool.fleet_size

    def submit(self, spec: JobSpec) -> JobHandle:
        if spec.gpus > self.pool.fleet_size:
            raise ValueError(f"requested {spec.gpus} GPUs on a fleet of {self.pool.fleet_size}")
        self._counter += 1
        handle = JobHandle(id=f"loc-{self._counter:04d}", spec=spec, submitted_at=self.clock())
        job = {"handle": handle, "proc": None}
        self.jobs[handle.id] = job
        ids = self.pool.try_allocate(handle.id, spec.gpus)
        if ids is not None:
            self._start(job, ids)
        else:
            self.pool.enqueue(handle.id, spec.gpus, spec.priority)
        return handle

    def _start(self, job: dict, gpu_ids: list[int]) -> None:
        handle = job["handle"]
        env = dict(os.environ)
        env.update(handle.spec.env)
        env["CUDA_VISIBLE_DEVICES"] = ",".join(str(i) for i in gpu_ids)
        workdir = self.workspace / handle.spec.workdir
        workdir.mkdir(parents=True, exist_ok=True)
        try:
            proc = subprocess.Popen(
                handle.spec.command,
                shell=True,
                cwd=workdir,
                env=env,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
            )
        except OSError as exc:
            self.pool.release(handle.id)
            raise SubmitFailed(f"could not spawn job process: {exc}") from exc
        job["proc"] = proc
        handle.advance("running")
        handle.started_at = self.clock()
        handle.external_id = str(proc.pid)

    def poll(self, handle: JobHandle) -> JobHandle:
        job = self.jobs.get(handle.id)
        if job is None:
            raise UnknownHandle(f"no job {handle.id}")
        h: JobHandle = job["handle"]
        proc = job["proc"]
        if h.state == "running" and proc is not None:
            if proc.poll() is None:
                if self.clock() - h.started_at > h.spec.time_limit_s:
                    proc.kill()
                    proc.wait(timeout=10)
                    h.advance("timeout")
                    h.ended_at = self.clock()
                    h.detail = "killed at time limit"
                    self._release(h)
            else:
                h.exit_code = proc.returncode
                h.advance("completed" if proc.returncode == 0 else "failed")
                h.ended_at = self.clock()
                out = proc.stdout.read() if proc.stdout else b""
                self._write_log(h, out)
                self._release(h)
        return h

    def _write_log(self, handle: JobHandle, output: bytes) -> None:
        results = self.workspace / "experiments" / handle.spec.name / "results"
        try:
            results.mkdir(parents=True, exist_ok=True)
            (results / "job.log").write_bytes(output)
        except OSError:
            pass

    def _release(self, handle: JobHandle) -> None:
        started = self.pool.release(handle.id)
        for job_id in started:
            waiting = self.jobs[job_id]
            ids = self.pool.allocated[job_id]
            self._start(waiting, ids)

    def cancel(self, handle: JobHandle) -> JobHandle:
        job = self.jobs.get(handle.id)
        if job is None:
            raise UnknownHandle(f"no job {handle.id}")
        h: JobHandle = job["handle"]
        if h.state in TERMINAL_JOB_STATES:
            return h
        if h.state == "pending":
            self.pool.drop_waiting(handle.id)
            h.advance("cancelled")
            return h
        proc = job["proc"]
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait(timeout=10)
        h.advance("cancelled")
        h.ended_at = self.clock()
        self._release(h)
        return h


# ---------------------------------------------------------------------------
# External scheduler backend

SBATCH_TEMPLATE = """#!/bin/bash
#SBATCH --job-name={name}
#SBATCH --gpus={gpus}
#SBATCH --time={minutes}
#SBATCH --output={output}
cd {workdir}
{command}
"""

_EXTERNAL_STATE_MAP = {
    "PENDING": "pending",
    "CONFIGURING": "pending",
    "RUNNING": "running",
    "COMPLETING": "running",
    "COMPLETED": "completed",
    "FAILED": "failed",
    "NODE_FAIL": "failed",
    "OUT_OF_MEMORY": "failed",
    "TIMEOUT": "timeout",
    "CANCELLED": "cancelled",
}


class SlurmCluster(ClusterBackend):
    """Drives an external scheduler through its CLI; batch scripts land in slurm/."""

    def __init__(
        self,
        workspace: Path,
        submit_cmd: str = "sbatch",
        status_cmd: str = "squeue-state",
        cancel_cmd: str = "scancel",
        fleet_size: int = 4,
        clock: Callable[[], float] = wall_clock,
    ):
        self.workspace = Path(workspace)
        self.submit_cmd = submit_cmd
        self.status_cmd = status_cmd
        self.cancel_cmd = cancel_cmd
        self.fleet_size = fleet_size
        self.clock = clock
        self.jobs: dict[str, JobHandle] = {}
        self._counter = 0

    def submit(self, spec: JobSpec) -> JobHandle:
        if spec.gpus > self.fleet_size:
            raise ValueError(f"requested {spec.gpus} GPUs on a fleet of {self.fleet_size}")
        self._counter += 1
        handle = JobHandle(id=f"ext-{self._counter:04d}", spec=spec, submitted_at=self.clock())
        script_dir = self.workspace / "slurm"
        script_dir.mkdir(parents=True, exist_ok=True)
        script = script_dir / f"{spec.name}.sbatch"
        script.write_text(
            SBATCH_TEMPLATE.format(
                name=spec.name,
                gpus=spec.gpus,
                minutes=max(1, int(spec.time_limit_s // 60)),
                output=str(script_dir / f"{spec.name}.out"),
                workdir=str(self.workspace / spec.workdir),
                command=spec.command,
            ),
            encoding="utf-8",
        )
        try:
            proc = subprocess.run(
                shlex.split(self.submit_cmd) + [str(script)], capture_output=True, text=True, timeout=60
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SubmitFailed(f"scheduler submit failed: {exc}") from exc
        if proc.returncode != 0:
            raise SubmitFailed(f"scheduler submit returned {proc.returncode}: {proc.stderr.strip()}")
        match = re.search(r"(\d+)", proc.stdout)
        if not match:
            raise SubmitFailed(f"could not parse job id from scheduler output: {proc.stdout!r}")
        handle.external_id = match.group(1)
        self.jobs[handle.id] = handle
        return handle

    def poll(self, handle: JobHandle) -> JobHandle:
        h = self.jobs.get(handle.id)
        if h is None:
            raise UnknownHandle(f"no job {handle.id}")
        if h.state in TERMINAL_JOB_STATES:
            return h
        try:
            proc = subprocess.run(
                shlex.split(self.status_cmd) + [h.external_id], capture_output=True, text=True, timeout=60
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("scheduler status failed for %s: %s", h.external_id, exc)
            return h
        token = proc.stdout.strip().split()[0].upper() if proc.stdout.strip() else ""
        state = _EXTERNAL_STATE_MAP.get(token)
        if state is None:
            log.warning("unknown scheduler state %r for job %s", token, h.external_id)
            return h
        if state != h.state:
            if state == "running":
                h.advance("running")
                h.started_at = self.clock()
            elif state in TERMINAL_JOB_STATES:
                if h.state == "pending" and state in ("completed", "failed", "timeout"):
                    h.advance("running")  # missed the start; keep the order monotone
                h.advance(state)
                h.ended_at = self.clock()
                h.exit_code = 0 if state == "completed" else 1
        return h

    def cancel(self, handle: JobHandle) -> JobHandle:
        h = self.jobs.get(handle.id)
        if h is None:
            raise UnknownHandle(f"no job {handle.id}")
        if h.state in TERMINAL_JOB_STATES:
            return h
        try:
            subprocess.run(shlex.split(self.cancel_cmd) + [h.external_id], capture_output=True, timeout=60)
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("scheduler cancel failed for %s: %s", h.external_id, exc)
        h.advance("cancelled")
        h.ended_at = self.clock()
        return h
