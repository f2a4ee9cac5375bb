"""Deterministic simulation fixtures.

A ScriptedBackend replays data-driven tool-call scripts, and each profile
pairs one with a job outcome table so a whole campaign runs end to end with
no network, no GPUs and no real model. Runs are reproducible byte for byte:
the backend is a pure function of the transcript, and every clock in the
stack is virtual.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .board import CampaignConfig
from .cluster import OutcomeTable
from .runtime import FinalText
from .tools import ToolCall

TASK_RE = re.compile(r"^TASK:\s*(\S+)", re.MULTILINE)
# {var}, {var+2}, {a+i+1:03d}: +/- chains over integer vars, optional format spec
_TEMPLATE_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*(?:[+-][A-Za-z0-9_]+)*)(?::([^{}]+))?\}")
_TOKEN_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*|\d+|[+-])")


def render_template(template: str, variables: dict) -> str:
    """Substitute {name}/{name+k:spec} placeholders; unknown names stay verbatim."""

    def _eval(expr: str):
        tokens = _TOKEN_RE.findall(expr)
        value = None
        op = "+"
        for token in tokens:
            if token in "+-":
                op = token
                continue
            if token.isdigit():
                operand = int(token)
            elif token in variables:
                operand = variables[token]
            else:
                return None
            if value is None:
                value = operand
            elif op == "+":
                value = value + operand
            else:
                value = value - operand
        return value

    def _sub(match: re.Match) -> str:
        value = _eval(match.group(1))
        if value is None:
            return match.group(0)
        spec = match.group(2)
        return format(value, spec) if spec else str(value)

    return _TEMPLATE_RE.sub(_sub, template)


def _render_obj(obj, variables: dict):
    if isinstance(obj, str):
        return render_template(obj, variables)
    if isinstance(obj, dict):
        return {k: _render_obj(v, variables) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_render_obj(v, variables) for v in obj]
    return obj


@dataclass
class ScriptStep:
    tool: Optional[str] = None
    args: dict = field(default_factory=dict)
    final: Optional[str] = None  # bare text instead of a tool call
    capture: list = field(default_factory=list)  # {"name", "path", "pattern"?}
    when: Optional[dict] = None  # {"var", "op", "value"}; doc vars only
    repeat: Union[int, str] = 1  # static int or a doc-var template
    bound: dict = field(default_factory=dict)  # loop index, filled by expansion


@dataclass
class Script:
    steps: list
    vars: list = field(default_factory=list)  # {"name", "pattern", "cast"?}


def _check(pred: dict, variables: dict) -> bool:
    name = pred.get("var")
    op = pred.get("op", "eq")
    value = pred.get("value")
    if op == "exists":
        return name in variables
    if name not in variables:
        return False
    current = variables[name]
    if op == "eq":
        return current == value
    if op == "ne":
        return current != value
    if op == "lt":
        return current < value
    if op == "le":
        return current <= value
    if op == "gt":
        return current > value
    if op == "ge":
        return current >= value
    if op == "contains":
        return value in str(current)
    return False


def _dig(payload, path):
    current = payload
    for key in path:
        if isinstance(current, dict) and key in current:
            current = current[key]
        else:
            return None
    return current


class ScriptedBackend:
    """Pure replay backend: the next action is a function of the transcript alone.

    Script choice keys on the TASK: marker in the prompt docs. The step index
    is the count of tool calls already made, so crash-and-replay lands on the
    same action every time.
    """

    def __init__(self, scripts: dict, name: str = "scripted"):
        self.scripts = {key: s if isinstance(s, Script) else Script(**s) for key, s in scripts.items()}
        self.identity = f"scripted:{name}"

    def next_action(self, transcript: list, tool_specs: list) -> Union[ToolCall, FinalText]:
        docs = [rec.payload for rec in transcript if rec.kind == "prompt"]
        script = self._select(docs)
        if script is None:
            return ToolCall("report_to_user", {"message": "No script for this task.\nSTATUS: done"})
        variables = self._doc_vars(script, docs)
        self._captures(script, transcript, variables)
        steps = self._expand(script, variables)
        index = sum(1 for rec in transcript if rec.kind == "tool_call")
        if index >= len(steps):
            return ToolCall("report_to_user", {"message": "Script exhausted.\nSTATUS: done"})
        step = steps[index]
        scope = {**variables, **step.bound}
        if step.final is not None:
            return FinalText(render_template(step.final, scope))
        return ToolCall(step.tool, _render_obj(step.args, scope))

    def _select(self, docs: list) -> Optional[Script]:
        for doc in docs:
            match = TASK_RE.search(doc.get("text", ""))
            if match:
                return self.scripts.get(match.group(1))
        return self.scripts.get("default")

    def _doc_vars(self, script: Script, docs: list) -> dict:
        variables: dict = {}
        text = "\n".join(doc.get("text", "") for doc in docs)
        for spec in script.vars:
            match = re.search(spec["pattern"], text, re.MULTILINE)
            if not match:
                continue
            raw = match.group(1) if match.groups() else match.group(0)
            variables[spec["name"]] = int(raw) if spec.get("cast") == "int" else raw
        return variables

    def _captures(self, script: Script, transcript: list, variables: dict) -> None:
        # pair tool_result records with flat step order; captured vars persist
        steps = self._expand(script, variables)
        result_index = 0
        for rec in transcript:
            if rec.kind != "tool_result":
                continue
            if result_index < len(steps):
                for cap in steps[result_index].capture:
                    value = _dig(rec.payload.get("payload") or {}, cap["path"])
                    if value is None:
                        continue
                    if cap.get("pattern"):
                        match = re.search(cap["pattern"], str(value))
                        value = match.group(1) if match else None
                        if value is None:
                            continue
                    variables[cap["name"]] = int(value) if cap.get("cast") == "int" else value
            result_index += 1

    def _expand(self, script: Script, variables: dict) -> list:
        """Flatten repeats; expansion shape may depend on doc vars only, so the
        flat list is identical on every call within a session."""
        flat: list = []
        for raw in script.steps:
            step = raw if isinstance(raw, ScriptStep) else ScriptStep(**raw)
            if step.when is not None and not _check(step.when, variables):
                continue
            count = step.repeat
            if isinstance(count, str):
                rendered = render_template(count, variables)
                count = int(rendered) if rendered.isdigit() else 0
            for i in range(count):
                flat.append(
                    ScriptStep(
                        tool=step.tool,
                        args=step.args,
                        final=step.final,
                        capture=step.capture,
                        repeat=1,
                        bound={"i": i},
                    )
                )
        return flat


# -- shared scripts ---------------------------------------------------------


def _phase_scripts() -> dict:
    """Phase 0-2 scripts shared by every profile: fast, artifact-complete."""
    return {
        "customize": Script(
            steps=[
                {
                    "tool": "report_to_user",
                    "args": {"message": "Adapter reviewed; defaults are a good fit for this workspace.\nSTATUS: done"},
                }
            ]
        ),
        "explore": Script(
            steps=[
                {
                    "tool": "shell_exec",
                    "args": {"cmd": "printf '# Plan\\n\\n1. Profile the data.\\n2. Build the harness.\\n' > plan.md"},
                },
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "mkdir -p data_report && printf '# Data report\\n\\nRows look clean.\\n' > data_report/summary.md"
                    },
                },
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "printf '# Learnings\\n\\n- Series are stationary enough for short-horizon models.\\n' > learnings.md"
                    },
                },
                {"tool": "report_to_user", "args": {"message": "Exploration complete; see learnings.md.\nSTATUS: done"}},
            ]
        ),
        "build": Script(
            steps=[
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "mkdir -p harness harness/tests && printf '# shared runner\\n' > harness/run_common.py"
                    },
                },
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "printf '# template experiment entry\\n' > harness/template_experiment.py"
                    },
                },
                {"tool": "report_to_user", "args": {"message": "Harness scaffolded under harness/.\nSTATUS: done"}},
            ]
        ),
        "critique": Script(
            steps=[
                {"tool": "read_file", "args": {"path": "harness/run_common.py"}},
                {"tool": "report_to_user", "args": {"message": "Harness looks sound.\nVERDICT: PASS"}},
            ]
        ),
        "test": Script(
            steps=[
                {
                    "tool": "shell_exec",
                    "args": {"cmd": "printf 'def test_smoke():\\n    assert True\\n' > harness/tests/test_smoke.py"},
                },
                {"tool": "report_to_user", "args": {"message": "Smoke suite written and run.\nTESTS: PASS"}},
            ]
        ),
        "supervise": Script(
            steps=[
                {
                    "tool": "report_to_user",
                    "args": {
                        "message": (
                            "Failures cluster on one configuration; recording a guardrail.\n"
                            "PATCH: domain_knowledge\n"
                            "REASON: repeated terminal failures in the health window\n"
                            "<<<\n"
                            "- Avoid the configuration family that keeps failing; prefer known-good baselines.\n"
                            ">>>\n"
                            "STATUS: done"
                        )
                    },
                }
            ]
        ),
        "milestone_report": Script(
            vars=[
                {"name": "num", "pattern": r"MILESTONE:\s*(\d+)", "cast": "int"},
                {"name": "path", "pattern": r"PATH:\s*(\S+)"},
            ],
            steps=[
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "mkdir -p reports/milestone_{num:03d} && printf '# Milestone {num}\\n\\nProgress is on track.\\n' > {path}"
                    },
                },
                {"tool": "report_to_user", "args": {"message": "Milestone {num} report written to {path}.\nSTATUS: done"}},
            ]
        ),
    }


def _worker_scripts() -> dict:
    return {
        "implement": Script(
            vars=[
                {"name": "exp_name", "pattern": r"NAME:\s*(\S+)"},
                {"name": "run_script", "pattern": r"RUN_SCRIPT:\s*(\S+)"},
            ],
            steps=[
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "mkdir -p experiments/{exp_name}/results && printf '# entry point\\n' > experiments/{exp_name}/{run_script}"
                    },
                },
                {
                    "tool": "report_to_user",
                    "args": {"message": "Implemented {exp_name} and ran smoke checks.\nSTATUS: checked"},
                },
            ]
        ),
        "fix": Script(
            vars=[
                {"name": "exp_name", "pattern": r"NAME:\s*(\S+)"},
                {"name": "run_script", "pattern": r"RUN_SCRIPT:\s*(\S+)"},
            ],
            steps=[
                {"tool": "read_file", "args": {"path": "experiments/{exp_name}/results/job.log"}},
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "printf '# entry point (repaired)\\n' > experiments/{exp_name}/{run_script}"
                    },
                },
                {
                    "tool": "report_to_user",
                    "args": {"message": "Repaired {exp_name}; smoke checks pass again.\nSTATUS: checked"},
                },
            ]
        ),
        "analyze": Script(
            vars=[{"name": "exp_name", "pattern": r"NAME:\s*(\S+)"}],
            steps=[
                {"tool": "read_file", "args": {"path": "experiments/{exp_name}/results/metrics.json"}},
                {
                    "tool": "shell_exec",
                    "args": {
                        "cmd": "printf '# Debrief: {exp_name}\\n\\nRun completed; metrics recorded on the board.\\n' > experiments/{exp_name}/debrief.md"
                    },
                },
                {
                    "tool": "report_to_user",
                    "args": {"message": "Debrief written for {exp_name}.\nSTATUS: analyzed"},
                },
            ]
        ),
    }


def _strategist_script(per_turn: int) -> Script:
    """Proposes a fixed batch per turn with names continuing from the board total."""
    return Script(
        vars=[{"name": "band", "pattern": r"BUDGET BAND:\s*(\w+)"}],
        steps=[
            {
                "tool": "read_board",
                "args": {},
                "capture": [{"name": "ntotal", "path": ["proposed_total"], "cast": "int"}],
            },
            {
                "tool": "propose_experiment",
                "args": {
                    "name": "exp-{ntotal+i+1:03d}",
                    "hypothesis": "Variant {ntotal+i+1} of the baseline family improves the primary metric.",
                },
                "when": {"var": "band", "op": "ne", "value": "stop"},
                "repeat": per_turn,
            },
            {
                "tool": "report_to_user",
                "args": {"message": "Turn complete for the {band} band.\nSTATUS: done"},
            },
        ]
    )


# -- profiles ---------------------------------------------------------------

PROFILE_NAMES = ("happy_path", "failure_burst", "budget_exhaustion", "convergence_stall", "supervisor_storm")


@dataclass
class Profile:
    name: str
    domain: str
    budget: int
    config: CampaignConfig
    scripts: dict
    outcome_table: OutcomeTable

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.scripts, name=self.name)


def _base_config(**overrides) -> CampaignConfig:
    base = dict(
        tick_seconds=30.0,
        num_workers=4,
        fleet_size=4,
        job_time_limit_s=3600,
        skip_phase1=False,
    )
    base.update(overrides)
    return CampaignConfig(**base)


def build_profile(name: str) -> Profile:
    if name == "happy_path":
        # improvement every third experiment, no failures, budget runs to zero
        entries = [
            {
                "pattern": f"exp-{n:03d}",
                "duration_s": 100.0,
                "exit_code": 0,
                "metrics": {"val_smape": round(1.0 - 0.005 * ((n - 1) // 3), 6), "val_mae": 0.5},
            }
            for n in range(1, 51)
        ]
        scripts = {**_phase_scripts(), **_worker_scripts(), "strategist_turn": _strategist_script(5)}
        return Profile(
            name=name,
            domain="time_series",
            budget=50,
            config=_base_config(),
            scripts=scripts,
            outcome_table=OutcomeTable(entries),
        )

    if name == "failure_burst":
        # five experiments fail every attempt and exhaust the fix cap;
        # slow failures keep them terminal-late so the health window fills with them
        entries = [
            {"pattern": f"exp-{n:03d}", "duration_s": 120.0, "exit_code": 1, "stderr": "CUDA error: device-side assert"}
            for n in range(6, 11)
        ] + [
            {
                "pattern": "exp-*",
                "duration_s": 60.0,
                "exit_code": 0,
                "metrics": {"val_smape": 0.9, "val_mae": 0.4},
            }
        ]
        scripts = {**_phase_scripts(), **_worker_scripts(), "strategist_turn": _strategist_script(12)}
        return Profile(
            name=name,
            domain="time_series",
            budget=12,
            config=_base_config(),
            scripts=scripts,
            outcome_table=OutcomeTable(entries),
        )

    if name == "budget_exhaustion":
        # the opening turn over-proposes: four rejections land in the journal
        entries = [
            {
                "pattern": f"exp-{n:03d}",
                "duration_s": 80.0,
                "exit_code": 0,
                "metrics": {"val_smape": round(1.0 - 0.01 * n, 6), "val_mae": 0.5},
            }
            for n in range(1, 7)
        ]
        scripts = {**_phase_scripts(), **_worker_scripts(), "strategist_turn": _strategist_script(10)}
        return Profile(
            name=name,
            domain="time_series",
            budget=6,
            config=_base_config(),
            scripts=scripts,
            outcome_table=OutcomeTable(entries),
        )

    if name == "convergence_stall":
        # improvements dry up after the fifteenth result; the stall counter
        # walks to the cap and the campaign halts mid-flight with work queued
        entries = [
            {
                "pattern": f"exp-{n:03d}",
                "duration_s": 100.0,
                "exit_code": 0,
                "metrics": {"val_smape": round(1.0 - 0.01 * n, 6) if n <= 15 else 1.0, "val_mae": 0.5},
            }
            for n in range(1, 51)
        ]
        scripts = {**_phase_scripts(), **_worker_scripts(), "strategist_turn": _strategist_script(6)}
        return Profile(
            name=name,
            domain="time_series",
            budget=60,
            config=_base_config(),
            scripts=scripts,
            outcome_table=OutcomeTable(entries),
        )

    if name == "supervisor_storm":
        # everything fails; interventions are paced by the cooldown alone
        entries = [{"pattern": "exp-*", "duration_s": 60.0, "exit_code": 1, "stderr": "OOM on rank 0"}]
        scripts = {**_phase_scripts(), **_worker_scripts(), "strategist_turn": _strategist_script(30)}
        return Profile(
            name=name,
            domain="time_series",
            budget=30,
            config=_base_config(),
            scripts=scripts,
            outcome_table=OutcomeTable(entries),
        )

    raise KeyError(f"unknown fixture profile {name!r}; known: {', '.join(PROFILE_NAMES)}")
