"""Shared helpers: boards, scripted stub backends, journal parsing."""

import json
from pathlib import Path

import pytest

from labloop.board import Board, CampaignConfig, MetricSpec
from labloop.clock import VirtualClock
from labloop.runtime import FinalText
from labloop.tools import ToolCall


def make_metric() -> MetricSpec:
    return MetricSpec(
        name="val_smape",
        direction="min",
        known=("val_smape", "val_mae", "train_loss"),
        directions={"val_smape": "min", "val_mae": "min", "train_loss": "min"},
    )


def make_board(tmp_path: Path, budget: int = 20, journal: bool = True, phase: str = "phase3", **cfg) -> Board:
    board = Board(
        campaign_id="t-camp",
        budget=budget,
        metric=make_metric(),
        config=CampaignConfig(**cfg),
        clock=VirtualClock(0.0),
        journal_path=(tmp_path / "journal.jsonl") if journal else None,
    )
    if phase != "phase0":
        board.set_phase(phase)
    return board


@pytest.fixture
def board(tmp_path):
    b = make_board(tmp_path)
    yield b
    b.close()


def report(message: str) -> ToolCall:
    return ToolCall("report_to_user", {"message": message})


def shell(cmd: str) -> ToolCall:
    return ToolCall("shell_exec", {"cmd": cmd})


class StubBackend:
    """Plays a fixed list of actions; an Exception instance in the list is raised."""

    identity = "stub"

    def __init__(self, actions, on_exhausted=None):
        self.actions = list(actions)
        self.on_exhausted = on_exhausted
        self.calls = 0

    def next_action(self, transcript, tool_specs):
        self.calls += 1
        if not self.actions:
            if self.on_exhausted is not None:
                return self.on_exhausted
            raise AssertionError("stub backend ran out of scripted actions")
        action = self.actions.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


class RoleStub:
    """Routes sessions to per-task programs by the TASK: marker in the prompt docs.

    programs maps a task key to a list of programs; each program is the action
    list for one session, ending in report_to_user. Step position inside a
    session is the number of tool_call records already in the transcript.
    """

    identity = "role-stub"

    def __init__(self, programs: dict):
        self.programs = {k: [list(p) for p in v] for k, v in programs.items()}
        self.cursor = {k: 0 for k in programs}

    def next_action(self, transcript, tool_specs):
        key = None
        for rec in transcript:
            if rec.kind != "prompt":
                continue
            text = rec.payload.get("text", "")
            for line in text.splitlines():
                if line.startswith("TASK:"):
                    key = line.split(":", 1)[1].strip()
                    break
            if key:
                break
        step = sum(1 for rec in transcript if rec.kind == "tool_call")
        if key not in self.programs:
            return report("STATUS: done")
        if step == 0:
            self.cursor[key] += 1
        program = self.programs[key][self.cursor[key] - 1]
        return program[step]


def parse_journal(path: Path):
    """Header dict plus event dicts; a torn final line is dropped."""
    lines = Path(path).read_text(encoding="utf-8", errors="replace").splitlines()
    header = json.loads(lines[0])
    events = []
    for line in lines[1:]:
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError:
            pass
    return header, events


def final_states(events) -> dict:
    states = {}
    for ev in events:
        if ev["kind"] == "transition":
            states[ev["payload"]["exp_id"]] = ev["payload"]["to"]
    return states
