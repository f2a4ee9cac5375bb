"""Pre-campaign phases: exploration and the adversarial harness-build loop.

The critic is the quality gate: it reviews with fresh eyes (harness +
learnings, never the builder transcript) and its verdict is parsed, not
trusted. Unparseable reviews fail safe to NEEDS_FIXES.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .adapter import AdapterBundle, ContextDoc
from .errors import PhaseError
from .supervisor import validate_phase_artifacts

log = logging.getLogger(__name__)

VERDICT_RE = re.compile(r"^\s*VERDICT:\s*(PASS|NEEDS[ _]FIXES)\s*$", re.IGNORECASE | re.MULTILINE)
FINDING_RE = re.compile(r"^\s*[-*]\s*(critical|minor)\b[:\s]*(.*)$", re.IGNORECASE)
TESTS_RE = re.compile(r"^\s*TESTS:\s*(PASS|FAIL)\s*$", re.IGNORECASE | re.MULTILINE)


@dataclass
class Finding:
    severity: str  # "critical" | "minor"
    description: str


@dataclass
class CriticVerdict:
    verdict: str  # "PASS" | "NEEDS_FIXES"
    findings: list = field(default_factory=list)
    raw: str = ""

    @property
    def criticals(self) -> list:
        return [f for f in self.findings if f.severity == "critical"]


def parse_verdict(text: str) -> CriticVerdict:
    """Extract verdict + findings; anything unparseable is a critical NEEDS_FIXES.

    Invariant: verdict == NEEDS_FIXES iff there is at least one critical
    finding, normalized here so downstream code can rely on it.
    """
    text = text or ""
    match = VERDICT_RE.search(text)
    findings = []
    for line in text.splitlines():
        m = FINDING_RE.match(line)
        if m:
            findings.append(Finding(severity=m.group(1).lower(), description=m.group(2).strip()))
    if match is None:
        return CriticVerdict(
            verdict="NEEDS_FIXES",
            findings=[Finding("critical", f"unparseable critic output: {text.strip()[:500]}")],
            raw=text,
        )
    verdict = "PASS" if match.group(1).upper() == "PASS" else "NEEDS_FIXES"
    criticals = [f for f in findings if f.severity == "critical"]
    if verdict == "PASS" and criticals:
        # critical findings override a pass verdict; fail safe
        verdict = "NEEDS_FIXES"
    if verdict == "NEEDS_FIXES" and not criticals:
        findings.append(Finding("critical", "critic demanded fixes without naming a critical finding; raw review attached: " + text.strip()[:500]))
    return CriticVerdict(verdict=verdict, findings=findings, raw=text)


def parse_test_report(text: str) -> tuple[bool, str]:
    """TESTS: PASS|FAIL marker; missing marker counts as a failure."""
    text = text or ""
    match = TESTS_RE.search(text)
    if match is None:
        return False, "tester output had no TESTS: marker\n" + text.strip()[:500]
    return match.group(1).upper() == "PASS", text


@dataclass
class Phase1Result:
    session_ids: list
    plan_path: str
    learnings: str


@dataclass
class Phase2Result:
    iterations: int
    builder_sessions: int
    critic_sessions: int
    tester_runs: int
    verdict_log: list
    completed_with_warning: bool


class PhasePipeline:
    """Drives phases 1 and 2 against a workspace; phase 0 lives in the adapter module."""

    def __init__(self, workspace: Path, bundle: AdapterBundle, runner, config=None):
        from .board import CampaignConfig

        self.workspace = Path(workspace)
        self.bundle = bundle
        self.runner = runner
        self.config = config or CampaignConfig()

    # -- phase 1 ------------------------------------------------------------

    def run_phase1(self) -> Phase1Result:
        if self.config.skip_phase1:
            # stub deliverables so later phases find the expected files
            (self.workspace / "plan.md").write_text("(exploration skipped by config)\n", encoding="utf-8")
            (self.workspace / "learnings.md").write_text("(exploration skipped by config)\n", encoding="utf-8")
            report_dir = self.workspace / "data_report"
            report_dir.mkdir(parents=True, exist_ok=True)
            (report_dir / "summary.md").write_text("(exploration skipped by config)\n", encoding="utf-8")
            return Phase1Result(session_ids=[], plan_path="plan.md", learnings="")

        sessions = []
        extras = [
            ContextDoc(
                "task:explore",
                "Task",
                "TASK: explore\nWrite plan.md first, then investigate the dataset. Required deliverables: "
                "plan.md, learnings.md (non-empty) and data_report/.",
            )
        ]
        session = self.runner.run_role_session(role="explorer", bundle=self.bundle, extras=extras, phase="phase1")
        sessions.append(session.id)
        issues = validate_phase_artifacts(self.workspace, "phase1")
        if issues:
            log.warning("phase1 deliverables missing (%s); retrying once", "; ".join(issues))
            retry_extras = extras + [
                ContextDoc("task:explore-gap", "Missing deliverables", "Previous attempt left gaps: " + "; ".join(issues))
            ]
            session = self.runner.run_role_session(role="explorer", bundle=self.bundle, extras=retry_extras, phase="phase1")
            sessions.append(session.id)
            issues = validate_phase_artifacts(self.workspace, "phase1")
            if issues:
                raise PhaseError("phase1 deliverables still missing after retry: " + "; ".join(issues))
        learnings = (self.workspace / "learnings.md").read_text(encoding="utf-8")
        return Phase1Result(session_ids=sessions, plan_path="plan.md", learnings=learnings)

    # -- phase 2 ------------------------------------------------------------

    def _harness_doc(self) -> ContextDoc:
        harness = self.workspace / "harness"
        listing = []
        if harness.is_dir():
            for path in sorted(harness.rglob("*")):
                if path.is_file():
                    rel = path.relative_to(self.workspace)
                    listing.append(f"--- {rel} ---")
                    listing.append(path.read_text(encoding="utf-8", errors="replace")[:4000])
        text = "\n".join(listing) if listing else "(no harness files yet)"
        return ContextDoc("harness:files", "Harness files", text)

    def _learnings_doc(self) -> ContextDoc:
        learnings = self.workspace / "learnings.md"
        text = learnings.read_text(encoding="utf-8") if learnings.is_file() else "(no phase-1 learnings)"
        return ContextDoc("phase1:learnings", "Exploration learnings", text)

    def run_phase2(self) -> Phase2Result:
        """Builder -> critic (-> tester) until clean or i_max is spent."""
        i_max = self.config.i_max
        verdict_log = []
        builder_sessions = 0
        critic_sessions = 0
        tester_runs = 0
        pending_findings: list = []
        completed_with_warning = True

        for iteration in range(1, i_max + 1):
            finding_text = "\n".join(f"- {f.severity}: {f.description}" for f in pending_findings)
            builder_extras = [
                self._learnings_doc(),
                ContextDoc(
                    "task:build",
                    "Task",
                    f"TASK: build\nITERATION: {iteration}\nBuild or repair the harness under harness/.\n"
                    + (f"Critical findings to address:\n{finding_text}" if pending_findings else "Fresh build."),
                ),
            ]
            self.runner.run_role_session(role="builder", bundle=self.bundle, extras=builder_extras, phase="phase2")
            builder_sessions += 1

            # fresh eyes: harness files + learnings, never the builder transcript
            critic_extras = [
                self._learnings_doc(),
                self._harness_doc(),
                ContextDoc("task:critique", "Task", f"TASK: critique\nITERATION: {iteration}\nReview the harness."),
            ]
            critic_session = self.runner.run_role_session(
                role="critic", bundle=self.bundle, extras=critic_extras, phase="phase2"
            )
            critic_sessions += 1
            verdict = parse_verdict(critic_session.report or "")
            verdict_log.append(
                {"iteration": iteration, "verdict": verdict.verdict, "criticals": len(verdict.criticals)}
            )
            if verdict.verdict == "NEEDS_FIXES":
                pending_findings = verdict.criticals
                continue

            tester_extras = [
                self._harness_doc(),
                ContextDoc(
                    "task:test",
                    "Task",
                    f"TASK: test\nITERATION: {iteration}\nWrite tests under harness/tests/ only, run them, report TESTS: PASS or FAIL.",
                ),
            ]
            tester_session = self.runner.run_role_session(
                role="tester", bundle=self.bundle, extras=tester_extras, phase="phase2"
            )
            tester_runs += 1
            passed, output = parse_test_report(tester_session.report or "")
            self._write_test_report(passed, output, iteration)
            if passed:
                completed_with_warning = False
                verdict_log[-1]["tests"] = "pass"
                break
            verdict_log[-1]["tests"] = "fail"
            pending_findings = [Finding("critical", "tests failed:\n" + output.strip()[:2000])]
        else:
            log.warning("phase2 hit the iteration cap (%d) without a clean pass; proceeding with warning", i_max)

        if completed_with_warning and tester_runs == 0:
            # iteration cap exhausted with the critic still flagging; record the state honestly
            self._write_test_report(False, "never reached the tester: critic flagged every iteration", i_max)
        self._write_verdict_log(verdict_log, completed_with_warning)
        return Phase2Result(
            iterations=len(verdict_log),
            builder_sessions=builder_sessions,
            critic_sessions=critic_sessions,
            tester_runs=tester_runs,
            verdict_log=verdict_log,
            completed_with_warning=completed_with_warning,
        )

    def _write_test_report(self, passed: bool, output: str, iteration: int) -> None:
        harness = self.workspace / "harness"
        harness.mkdir(parents=True, exist_ok=True)
        (harness / "test_report.json").write_text(
            json.dumps({"passed": passed, "iteration": iteration, "output": output[:4000]}, sort_keys=True, indent=2),
            encoding="utf-8",
        )

    def _write_verdict_log(self, verdict_log: list, warned: bool) -> None:
        harness = self.workspace / "harness"
        harness.mkdir(parents=True, exist_ok=True)
        (harness / "verdict_log.json").write_text(
            json.dumps({"iterations": verdict_log, "completed_with_warning": warned}, sort_keys=True, indent=2),
            encoding="utf-8",
        )
