"""Supervisor: failure window math, trigger boundary, intervention flow, artifact checks."""

import json

import pytest

from labloop.adapter import AdapterBundle, copy_builtin
from labloop.board import CampaignConfig
from labloop.errors import EmptyWindow
from labloop.runtime import SessionRunner
from labloop.supervisor import (
    PATCH_RE,
    HealthWindow,
    Supervisor,
    validate_phase_artifacts,
)
from labloop.tools import Toolbelt

from conftest import RoleStub, make_board, report


def fill(window, failed, passed):
    n = 0
    for _ in range(failed):
        n += 1
        window.record(f"x-{n:04d}", "failed_terminal")
    for _ in range(passed):
        n += 1
        window.record(f"x-{n:04d}", "done")


class TestHealthWindow:
    def test_rate(self):
        w = HealthWindow(10, 5)
        fill(w, failed=3, passed=7)
        assert w.failure_rate() == pytest.approx(0.3)

    def test_empty_window_raises(self):
        with pytest.raises(EmptyWindow):
            HealthWindow().failure_rate()

    def test_trigger_is_strict(self):
        # 4/10 sits exactly at tau and must not fire; 5/10 is above and must
        w = HealthWindow(10, 5)
        fill(w, failed=4, passed=6)
        assert w.failure_rate() == pytest.approx(0.4)
        assert not w.should_trigger(0.4)
        w2 = HealthWindow(10, 5)
        fill(w2, failed=5, passed=5)
        assert w2.should_trigger(0.4)

    def test_min_fill_gate(self):
        w = HealthWindow(10, 5)
        fill(w, failed=4, passed=0)  # 100% failing, too few samples
        assert not w.should_trigger(0.4)
        w.record("x-0005", "failed_terminal")
        assert w.should_trigger(0.4)

    def test_window_slides(self):
        w = HealthWindow(3, 1)
        fill(w, failed=3, passed=0)
        assert w.failure_rate() == 1.0
        fill(w, failed=0, passed=3)  # old failures fall off the edge
        assert w.failure_rate() == 0.0

    def test_cancelled_is_not_a_failure(self):
        w = HealthWindow(10, 1)
        w.record("x-0001", "cancelled")
        w.record("x-0002", "done")
        assert w.failure_rate() == 0.0

    def test_reset(self):
        w = HealthWindow(10, 5)
        fill(w, failed=5, passed=0)
        w.reset()
        with pytest.raises(EmptyWindow):
            w.failure_rate()


# -- patch block parsing ----------------------------------------------------


PATCH_REPORT = """Diagnosed the cluster of failures.

PATCH: domain_knowledge
REASON: runs crash on the long horizon split
<<<
Cap the forecast horizon at 48 steps until the loader is fixed.
>>>

That should stop the bleeding."""


def test_patch_re_parses_block():
    m = PATCH_RE.search(PATCH_REPORT)
    assert m.group("file") == "domain_knowledge"
    assert m.group("reason") == "runs crash on the long horizon split"
    assert m.group("body") == "Cap the forecast horizon at 48 steps until the loader is fixed."


def test_patch_re_no_block():
    assert PATCH_RE.search("just a diagnosis, no patch") is None


# -- supervisor object ------------------------------------------------------


def make_supervisor(tmp_path, programs, **cfg):
    config = CampaignConfig(**cfg)
    board = make_board(tmp_path, **cfg)
    copy_builtin("time_series", tmp_path / "adapter")
    bundle = AdapterBundle.load(tmp_path / "adapter")
    runner = SessionRunner(tmp_path, Toolbelt(tmp_path, config=config), RoleStub(programs),
                          config=config, backoff_base=0.001)
    sup = Supervisor(board, bundle, runner, tmp_path, config=config)
    return sup, board, bundle


class TestSupervisor:
    def test_cooldown_suppresses_trigger(self, tmp_path):
        sup, _, _ = make_supervisor(tmp_path, {})
        sup.cooldown_remaining = 2
        for i in range(5):
            sup.on_terminal(f"x-{i:04d}", "failed_terminal")
        # 100% failure rate, but the first two outcomes burned the cooldown down
        assert sup.cooldown_remaining == 0
        assert sup.should_trigger()

    def test_should_trigger_blocked_while_cooling(self, tmp_path):
        sup, _, _ = make_supervisor(tmp_path, {})
        for i in range(5):
            sup.on_terminal(f"x-{i:04d}", "failed_terminal")
        sup.cooldown_remaining = 1
        assert not sup.should_trigger()

    def test_intervention_applies_patch(self, tmp_path):
        sup, board, bundle = make_supervisor(tmp_path, {"supervise": [[report(PATCH_REPORT)]]})
        before = bundle.content_of("domain_knowledge")
        for i in range(5):
            sup.on_terminal(f"x-{i:04d}", "failed_terminal")
        assert sup.should_trigger()
        record = sup.intervene(["Traceback: boom"])
        assert record.number == 1
        assert record.rate == pytest.approx(1.0)
        assert record.checkpoint_id == 1
        assert record.report_path == "reports/supervisor/001.md"
        # the patch appends to the existing prompt file
        after = bundle.content_of("domain_knowledge")
        assert after.startswith(before.rstrip("\n"))
        assert "Cap the forecast horizon" in after
        assert bundle.checkpoints[-1].author == "supervisor"
        # window reset plus a fresh cooldown
        assert sup.cooldown_remaining == sup.config.supervisor_cooldown
        assert len(sup.window.entries) == 0
        report_text = (tmp_path / "reports" / "supervisor" / "001.md").read_text("utf-8")
        assert "Failure rate: 1.00" in report_text
        sup_events = [e for e in board.events if e.kind == "supervisor"]
        assert sup_events[-1].payload == {
            "event": "intervention", "number": 1, "rate": 1.0, "window": 5,
            "checkpoint_id": 1, "report_path": "reports/supervisor/001.md",
        }

    def test_intervention_without_patch(self, tmp_path):
        sup, board, bundle = make_supervisor(
            tmp_path, {"supervise": [[report("flaky data loader, nothing to patch")]]})
        for i in range(5):
            sup.on_terminal(f"x-{i:04d}", "failed_terminal")
        record = sup.intervene([])
        assert record.checkpoint_id is None
        assert bundle.checkpoints == []
        sup_events = [e for e in board.events if e.kind == "supervisor"]
        assert sup_events[-1].payload["event"] == "no_patch"

    def test_patch_to_unknown_file_is_skipped(self, tmp_path):
        bad = PATCH_REPORT.replace("PATCH: domain_knowledge", "PATCH: mystery_file")
        sup, _, bundle = make_supervisor(tmp_path, {"supervise": [[report(bad)]]})
        for i in range(5):
            sup.on_terminal(f"x-{i:04d}", "failed_terminal")
        assert sup.intervene([]).checkpoint_id is None
        assert bundle.checkpoints == []

    def test_rebuild_from_board(self, tmp_path):
        sup, board, _ = make_supervisor(tmp_path, {})
        # stage a journal: six terminals, an intervention marker, two more terminals
        for i in range(1, 7):
            board.propose(f"n{i}", "h")
        ids = [f"x-{i:04d}" for i in range(1, 7)]
        for exp_id in ids:
            board.transition(exp_id, "cancel")
        board.record_supervisor({"event": "intervention", "number": 1, "rate": 1.0,
                                 "window": 6, "checkpoint_id": 1, "report_path": "r"})
        board.propose("n7", "h")
        board.transition("x-0007", "cancel")
        fresh = Supervisor(sup.board, sup.bundle, sup.runner, tmp_path, config=sup.config)
        fresh.rebuild_from_board()
        # only the post-intervention terminal remains in the window
        assert len(fresh.window.entries) == 1
        assert fresh.cooldown_remaining == sup.config.supervisor_cooldown - 1
        assert len(fresh.interventions) == 1


# -- phase artifact validation ----------------------------------------------


class TestPhaseArtifacts:
    def seed_phase1(self, ws):
        (ws / "plan.md").write_text("# plan\n", encoding="utf-8")
        (ws / "learnings.md").write_text("learned things\n", encoding="utf-8")
        (ws / "data_report").mkdir()
        (ws / "data_report" / "summary.md").write_text("data\n", encoding="utf-8")

    def test_phase1_complete(self, tmp_path):
        self.seed_phase1(tmp_path)
        assert validate_phase_artifacts(tmp_path, "phase1") == []

    def test_phase1_issues(self, tmp_path):
        issues = validate_phase_artifacts(tmp_path, "phase1")
        assert set(issues) == {"missing plan.md", "missing or empty learnings.md",
                              "missing or empty data_report/"}
        self.seed_phase1(tmp_path)
        (tmp_path / "learnings.md").write_text("  \n", encoding="utf-8")
        assert validate_phase_artifacts(tmp_path, "phase1") == ["missing or empty learnings.md"]

    def test_phase2_report_gates(self, tmp_path):
        assert validate_phase_artifacts(tmp_path, "phase2") == ["missing harness/"]
        harness = tmp_path / "harness"
        harness.mkdir()
        assert validate_phase_artifacts(tmp_path, "phase2") == ["missing harness/test_report.json"]
        (harness / "test_report.json").write_text("not json", encoding="utf-8")
        assert validate_phase_artifacts(tmp_path, "phase2") == ["unreadable harness/test_report.json"]
        (harness / "test_report.json").write_text(json.dumps({"passed": False}), encoding="utf-8")
        assert validate_phase_artifacts(tmp_path, "phase2") == ["harness test report is not passing"]
        (harness / "test_report.json").write_text(json.dumps({"passed": True}), encoding="utf-8")
        assert validate_phase_artifacts(tmp_path, "phase2") == []

    def test_unknown_phase(self, tmp_path):
        with pytest.raises(ValueError):
            validate_phase_artifacts(tmp_path, "phase9")
