"""Campaign wiring: phases 0-3 over one workspace.

Owns construction order (toolbelt, runner, adapter, board, cluster,
supervisor, dispatcher) and the phase-3 loop that executes dispatcher
actions, checking convergence after every one so a halt lands exactly where
the stall cap or budget says it should.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Optional

from .adapter import AdapterBundle, resolve
from .board import Board, CampaignConfig, MetricSpec
from .clock import VirtualClock, wall_clock
from .cluster import LocalCluster, SimCluster
from .dispatch import (
    Dispatcher,
    HaltCampaign,
    MilestoneReport,
    RunTask,
    StrategistTurn,
    SupervisorIntervention,
)
from .errors import CampaignError, CampaignHalted, CorruptJournal, PhaseError
from .phases import PhasePipeline
from .supervisor import Supervisor
from .tools import Toolbelt, write_schemas
from .runtime import SessionRunner

log = logging.getLogger(__name__)


class Campaign:
    """One research campaign in one workspace directory."""

    def __init__(
        self,
        workspace: Path,
        backend,
        budget: int,
        domain: str,
        config: Optional[CampaignConfig] = None,
        cluster=None,
        clock=None,
        campaign_id: str = "campaign",
    ):
        self.workspace = Path(workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.config = config or CampaignConfig()
        self.clock = clock if clock is not None else wall_clock
        self.backend = backend
        self.budget = budget
        self.domain = domain
        self.campaign_id = campaign_id
        self.cluster = cluster
        self.toolbelt = Toolbelt(self.workspace, self.config)
        self.runner = SessionRunner(self.workspace, self.toolbelt, backend, self.config, clock=self.clock)
        self.board: Optional[Board] = None
        self.bundle: Optional[AdapterBundle] = None
        self.supervisor: Optional[Supervisor] = None
        self.dispatcher: Optional[Dispatcher] = None
        self.phases: Optional[PhasePipeline] = None
        self._halt_flag: Optional[str] = None
        write_schemas(self.workspace / "tool_schemas.json")

    # -- construction --------------------------------------------------------

    def prepare(self) -> None:
        """Phase 0: resolve the adapter, then stand the rest of the stack up."""
        if self.board is not None:
            return
        journal = self.workspace / "journal.jsonl"
        # a fresh launch truncates the journal; refuse to destroy a prior campaign
        if journal.exists() and journal.stat().st_size > 0:
            raise CampaignError(
                f"{journal} already holds a campaign; resume it or pick a fresh workspace"
            )
        result = resolve(self.workspace, self.domain, self.runner)
        self.bundle = result.bundle
        self.runner.bundle = self.bundle
        self.board = Board(
            campaign_id=self.campaign_id,
            budget=self.budget,
            metric=_metric_spec(self.bundle),
            config=self.config,
            clock=self.clock,
            journal_path=self.workspace / "journal.jsonl",
        )
        self._wire()

    def _wire(self) -> None:
        self.toolbelt.board = self.board
        if self.cluster is None:
            self.cluster = LocalCluster(self.workspace, clock=self.clock, fleet_size=self.config.fleet_size)
        self.supervisor = Supervisor(self.board, self.bundle, self.runner, self.workspace, self.config)
        self.dispatcher = Dispatcher(self.board, self.cluster, self.runner, self.bundle, self.supervisor, self.workspace)
        self.phases = PhasePipeline(self.workspace, self.bundle, self.runner, self.config)

    @classmethod
    def resume(cls, workspace: Path, backend, cluster=None, clock=None) -> "Campaign":
        """Rebuild a campaign from its journal; live job handles are gone, so
        running work fails over to the fix path and queued work is resubmitted."""
        workspace = Path(workspace)
        journal = workspace / "journal.jsonl"
        if not journal.is_file():
            raise CorruptJournal(f"no journal at {journal}")
        clock = clock if clock is not None else wall_clock
        board = Board.load(journal, clock=clock, journal_path=journal)
        if board.campaign.phase == "halted":
            raise CampaignHalted(f"campaign {board.campaign.id} already halted ({board.campaign.halt_reason})")
        campaign = cls(
            workspace,
            backend,
            budget=board.campaign.budget_initial,
            domain=board.campaign.id,
            config=board.config,
            cluster=cluster,
            clock=clock,
            campaign_id=board.campaign.id,
        )
        campaign.board = board
        campaign.bundle = AdapterBundle.load(workspace / "adapter")
        campaign.runner.bundle = campaign.bundle
        campaign.runner._counter = len(list((workspace / "logs" / "sessions").glob("s*.jsonl")))
        campaign._wire()
        if board.campaign.phase == "phase3":
            campaign.dispatcher.adopt_existing()
        return campaign

    # -- run ------------------------------------------------------------------

    def run(self) -> str:
        """Drive the campaign to a halt; returns the halt reason."""
        self.prepare()
        phase = self.board.campaign.phase
        if phase == "phase0":
            self.board.set_phase("phase1")
            phase = "phase1"
        if phase == "phase1":
            self.phases.run_phase1()
            self.board.set_phase("phase2")
            phase = "phase2"
        if phase == "phase2":
            result = self.phases.run_phase2()
            if result.completed_with_warning:
                log.warning("phase 2 ended at the iteration cap; continuing with an unverified harness")
            self.board.set_phase("phase3")
        return self._run_phase3()

    def _run_phase3(self) -> str:
        halt_file = self.workspace / "HALT"
        while self.board.campaign.phase == "phase3":
            if halt_file.exists() and self._halt_flag is None:
                # cross-process cooperative halt (the CLI drops this file)
                self._halt_flag = "user_requested"
            if self._halt_flag is not None:
                self.dispatcher.request_halt(self._halt_flag)
                self._halt_flag = None
            actions = self.dispatcher.tick()
            for action in actions:
                self._execute(action)
                if self.board.campaign.phase == "halted":
                    break
                if not isinstance(action, HaltCampaign):
                    converged, reason = self.dispatcher.converged()
                    if converged:
                        self.dispatcher.halt(reason)
                        break
            if self.board.campaign.phase == "phase3":
                self._advance()
        self._finalize()
        return self.board.campaign.halt_reason or "halted"

    def _execute(self, action) -> None:
        if isinstance(action, RunTask):
            self.dispatcher.run_worker_task(action)
        elif isinstance(action, StrategistTurn):
            self.dispatcher.run_strategist_turn(action.reason)
        elif isinstance(action, MilestoneReport):
            self.dispatcher.run_milestone(action.number)
        elif isinstance(action, SupervisorIntervention):
            self.dispatcher.run_supervisor()
        elif isinstance(action, HaltCampaign):
            self.dispatcher.halt(action.reason)
        else:
            raise PhaseError(f"unknown dispatcher action {action!r}")

    def _advance(self) -> None:
        if isinstance(self.clock, VirtualClock):
            self.clock.advance(self.config.tick_seconds)
        else:
            time.sleep(self.config.tick_seconds)

    def _finalize(self) -> None:
        try:
            self.board.write_snapshot(self.workspace / "board_snapshot.json")
            accounting = self.workspace / "logs" / "accounting.json"
            accounting.parent.mkdir(parents=True, exist_ok=True)
            accounting.write_text(json.dumps(self.runner.account(), indent=2, sort_keys=True), encoding="utf-8")
        except OSError as exc:
            log.warning("could not write final snapshots: %s", exc)
        self.board.close()

    # -- external controls ----------------------------------------------------

    def request_halt(self, reason: str = "user_requested") -> None:
        """Cooperative: takes effect at the next tick boundary."""
        self._halt_flag = reason

    def post_chat(self, message: str) -> None:
        self.board.post_chat(message)


def _metric_spec(bundle: AdapterBundle) -> MetricSpec:
    manifest = bundle.manifest
    primary = manifest.primary()
    if primary is None:
        raise PhaseError("adapter manifest must declare exactly one primary metric")
    return MetricSpec(
        name=primary["name"],
        direction=primary.get("direction", "min"),
        known=tuple(m["name"] for m in manifest.metrics),
        directions={m["name"]: m.get("direction", "min") for m in manifest.metrics},
    )


def launch_fixture(profile_name: str, workspace: Path, config: Optional[CampaignConfig] = None) -> Campaign:
    """A fully simulated campaign: scripted backend, sim cluster, virtual clock."""
    from .fixtures import build_profile

    profile = build_profile(profile_name)
    config = config or profile.config
    clock = VirtualClock(0.0)
    workspace = Path(workspace)
    cluster = SimCluster(profile.outcome_table, clock, workspace, fleet_size=config.fleet_size)
    return Campaign(
        workspace,
        profile.backend(),
        budget=profile.budget,
        domain=profile.domain,
        config=config,
        cluster=cluster,
        clock=clock,
        campaign_id=f"fixture-{profile_name}",
    )
