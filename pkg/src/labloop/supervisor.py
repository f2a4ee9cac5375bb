"""Health supervision: sliding failure window, threshold trigger, adapter interventions."""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .adapter import AdapterBundle, ContextDoc
from .errors import EmptyWindow

log = logging.getLogger(__name__)

# report block an intervention session uses to propose an adapter patch
PATCH_RE = re.compile(
    r"PATCH:\s*(?P<file>\w+)\s*\nREASON:\s*(?P<reason>.+?)\s*\n<<<\n(?P<body>.*?)\n>>>",
    re.DOTALL,
)


class HealthWindow:
    """Last |W| terminal experiment outcomes; failed iff the terminal state was failed_terminal."""

    def __init__(self, size: int = 10, min_fill: int = 5):
        self.size = size
        self.min_fill = min_fill
        self.entries: deque = deque(maxlen=size)

    def record(self, exp_id: str, terminal_state: str) -> None:
        self.entries.append((exp_id, terminal_state == "failed_terminal"))

    def failure_rate(self) -> float:
        if not self.entries:
            raise EmptyWindow("no terminal outcomes recorded yet")
        failures = sum(1 for _, failed in self.entries if failed)
        return failures / len(self.entries)

    def should_trigger(self, tau: float) -> bool:
        """Strictly above tau, and only once the window has a meaningful fill."""
        if len(self.entries) < self.min_fill:
            return False
        return self.failure_rate() > tau

    def reset(self) -> None:
        self.entries.clear()


@dataclass
class InterventionRecord:
    number: int
    rate: float
    window: int
    diagnosis: str
    checkpoint_id: Optional[int]
    report_path: str


class Supervisor:
    """Watches terminal outcomes; patches the adapter when failures cluster."""

    def __init__(self, board, bundle: AdapterBundle, runner, workspace: Path, config=None):
        from .board import CampaignConfig

        self.board = board
        self.bundle = bundle
        self.runner = runner
        self.workspace = Path(workspace)
        self.config = config or CampaignConfig()
        self.window = HealthWindow(size=self.config.window_size, min_fill=self.config.window_min_fill)
        self.cooldown_remaining = 0
        self.interventions: list[InterventionRecord] = []

    def on_terminal(self, exp_id: str, terminal_state: str) -> None:
        """Each experiment contributes exactly once, at its final terminal transition."""
        self.window.record(exp_id, terminal_state)
        if self.cooldown_remaining > 0:
            self.cooldown_remaining -= 1

    def should_trigger(self) -> bool:
        if self.cooldown_remaining > 0:
            return False
        return self.window.should_trigger(self.config.tau)

    def intervene(self, failure_excerpts: list) -> InterventionRecord:
        """Run a supervisor session, apply its patch (if any), reset the window."""
        rate = self.window.failure_rate()
        number = len(self.interventions) + 1
        excerpt_text = "\n\n".join(failure_excerpts) if failure_excerpts else "(no failure logs collected)"
        extras = [
            ContextDoc(
                "task:supervise",
                "Task",
                "TASK: supervise\n"
                f"FAILURE RATE: {rate:.2f} over the last {len(self.window.entries)} terminal outcomes\n"
                "Recent failure log excerpts follow.\n\n" + excerpt_text,
            )
        ]
        session = self.runner.run_role_session(role="supervisor", bundle=self.bundle, extras=extras, phase="phase3")
        diagnosis = session.report or "(supervisor session produced no report)"
        checkpoint_id = None
        match = PATCH_RE.search(diagnosis)
        if match and match.group("file") in ("domain_knowledge",) + tuple(self.bundle.files):
            name = match.group("file")
            addition = match.group("body")
            new_content = self.bundle.content_of(name).rstrip("\n") + "\n\n" + addition + "\n"
            checkpoint_id = self.bundle.patch_file(
                name, new_content, reason=match.group("reason").strip(), author="supervisor"
            )
        else:
            log.warning("supervisor intervention %d proposed no applicable patch", number)

        report_dir = self.workspace / "reports" / "supervisor"
        report_dir.mkdir(parents=True, exist_ok=True)
        report_path = report_dir / f"{number:03d}.md"
        report_path.write_text(
            f"# Supervisor intervention {number:03d}\n\n"
            f"Failure rate: {rate:.2f} over {len(self.window.entries)} terminal outcomes\n\n"
            f"## Diagnosis\n\n{diagnosis}\n\n"
            f"## Patch\n\n"
            + (f"Checkpoint {checkpoint_id} on the adapter." if checkpoint_id else "No patch applied."),
            encoding="utf-8",
        )
        record = InterventionRecord(
            number=number,
            rate=rate,
            window=len(self.window.entries),
            diagnosis=diagnosis,
            checkpoint_id=checkpoint_id,
            report_path=str(report_path.relative_to(self.workspace)),
        )
        self.interventions.append(record)
        self.board.record_supervisor(
            {
                "event": "intervention" if checkpoint_id else "no_patch",
                "number": number,
                "rate": round(rate, 6),
                "window": len(self.window.entries),
                "checkpoint_id": checkpoint_id,
                "report_path": record.report_path,
            }
        )
        self.window.reset()
        self.cooldown_remaining = self.config.supervisor_cooldown
        return record

    def rebuild_from_board(self) -> None:
        """Resume support: replay the journal to restore window and cooldown state."""
        self.window.reset()
        self.cooldown_remaining = 0
        count = 0
        for ev in self.board.events:
            if ev.kind == "transition" and ev.payload["to"] in ("done", "cancelled", "failed_terminal"):
                self.on_terminal(ev.payload["exp_id"], ev.payload["to"])
            elif ev.kind == "supervisor" and ev.payload.get("event") in ("intervention", "no_patch"):
                count += 1
                self.window.reset()
                self.cooldown_remaining = self.config.supervisor_cooldown
        if count and not self.interventions:
            # records list is advisory on resume; numbering continues from the journal
            self.interventions = [
                InterventionRecord(number=i + 1, rate=0.0, window=0, diagnosis="(from journal)", checkpoint_id=None, report_path="")
                for i in range(count)
            ]


def validate_phase_artifacts(workspace: Path, phase: str) -> list[str]:
    """Structural completeness checks between phases; issues block the advance."""
    workspace = Path(workspace)
    issues = []
    if phase == "phase1":
        if not (workspace / "plan.md").is_file():
            issues.append("missing plan.md")
        learnings = workspace / "learnings.md"
        if not learnings.is_file() or not learnings.read_text(encoding="utf-8").strip():
            issues.append("missing or empty learnings.md")
        data_report = workspace / "data_report"
        if not data_report.is_dir() or not any(data_report.iterdir()):
            issues.append("missing or empty data_report/")
    elif phase == "phase2":
        harness = workspace / "harness"
        if not harness.is_dir():
            issues.append("missing harness/")
        else:
            report = harness / "test_report.json"
            if not report.is_file():
                issues.append("missing harness/test_report.json")
            else:
                import json

                try:
                    data = json.loads(report.read_text(encoding="utf-8"))
                except json.JSONDecodeError:
                    issues.append("unreadable harness/test_report.json")
                else:
                    if not data.get("passed"):
                        issues.append("harness test report is not passing")
    else:
        raise ValueError(f"no artifact validation for phase {phase!r}")
    return issues
