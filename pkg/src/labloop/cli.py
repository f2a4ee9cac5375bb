"""Command line entry point: campaign launch | resume | status | halt."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .board import Board, CampaignConfig
from .campaign import Campaign, launch_fixture
from .clock import VirtualClock
from .cluster import SimCluster, SlurmCluster
from .dispatch import budget_band
from .errors import CampaignError
from .fixtures import PROFILE_NAMES, build_profile
from .gateway import BackgroundServer, create_app
from .runtime import HttpChatBackend


def _load_config(path: str | None) -> CampaignConfig | None:
    if path is None:
        return None
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a mapping")
    return CampaignConfig.from_dict(data)


def _add_serve_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--serve", action="store_true", help="serve the gateway while the campaign runs")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--frontend", default=None, help="directory of built dashboard assets to serve at /")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="campaign", description="autonomous research campaign orchestrator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    launch = sub.add_parser("launch", help="start a new campaign in a workspace")
    launch.add_argument("--workspace", required=True)
    launch.add_argument("--domain", default="time_series")
    launch.add_argument("--budget", type=int, default=25)
    launch.add_argument("--fixture", choices=PROFILE_NAMES, help="run a fully simulated profile instead of a real backend")
    launch.add_argument("--config", help="YAML file of config overrides")
    launch.add_argument("--cluster", choices=("local", "slurm"), default="local")
    launch.add_argument("--campaign-id", default="campaign")
    launch.add_argument("--skip-phase1", action="store_true")
    _add_serve_args(launch)

    resume = sub.add_parser("resume", help="continue a campaign from its journal")
    resume.add_argument("--workspace", required=True)
    resume.add_argument("--fixture", choices=PROFILE_NAMES, help="the profile the campaign was launched with")
    resume.add_argument("--cluster", choices=("local", "slurm"), default="local")
    _add_serve_args(resume)

    status = sub.add_parser("status", help="print a summary from the journal")
    status.add_argument("--workspace", required=True)
    status.add_argument("--json", action="store_true", dest="as_json")

    halt = sub.add_parser("halt", help="request a cooperative halt of a running campaign")
    halt.add_argument("--workspace", required=True)
    return parser


def _make_cluster(kind: str, workspace: Path, config: CampaignConfig):
    if kind == "slurm":
        return SlurmCluster(workspace, fleet_size=config.fleet_size)
    return None  # Campaign defaults to LocalCluster


def _run_with_server(campaign: Campaign, args) -> str:
    server = None
    if args.serve:
        frontend = Path(args.frontend) if args.frontend else None
        app = create_app(
            campaign.board,
            campaign.workspace,
            runner=campaign.runner,
            halt_cb=campaign.request_halt,
            chat_cb=campaign.post_chat,
            frontend_dir=frontend,
        )
        server = BackgroundServer(app, host=args.host, port=args.port)
        server.start()
        print(f"gateway listening on http://{args.host}:{args.port}")
    try:
        return campaign.run()
    finally:
        if server is not None:
            server.stop()


def _cmd_launch(args) -> int:
    workspace = Path(args.workspace)
    config = _load_config(args.config)
    if args.fixture:
        campaign = launch_fixture(args.fixture, workspace, config=config)
    else:
        if config is None:
            config = CampaignConfig()
        if args.skip_phase1:
            config.skip_phase1 = True
        campaign = Campaign(
            workspace,
            HttpChatBackend(),
            budget=args.budget,
            domain=args.domain,
            config=config,
            cluster=_make_cluster(args.cluster, workspace, config),
            campaign_id=args.campaign_id,
        )
    campaign.prepare()
    reason = _run_with_server(campaign, args)
    print(f"campaign halted: {reason}")
    return 0


def _journal_tail_at(journal: Path) -> float:
    last = 0.0
    for line in journal.read_text(encoding="utf-8", errors="replace").splitlines()[1:]:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(rec, dict) and "at" in rec:
            last = max(last, float(rec["at"]))
    return last


def _cmd_resume(args) -> int:
    workspace = Path(args.workspace)
    journal = workspace / "journal.jsonl"
    halt_file = workspace / "HALT"
    if halt_file.exists():
        halt_file.unlink()
    if args.fixture:
        profile = build_profile(args.fixture)
        clock = VirtualClock(_journal_tail_at(journal))
        cluster = SimCluster(profile.outcome_table, clock, workspace, fleet_size=profile.config.fleet_size)
        campaign = Campaign.resume(workspace, profile.backend(), cluster=cluster, clock=clock)
    else:
        config = CampaignConfig()  # real config is reloaded from the journal header
        campaign = Campaign.resume(
            workspace, HttpChatBackend(), cluster=_make_cluster(args.cluster, workspace, config)
        )
    reason = _run_with_server(campaign, args)
    print(f"campaign halted: {reason}")
    return 0


def _cmd_status(args) -> int:
    journal = Path(args.workspace) / "journal.jsonl"
    if not journal.is_file():
        print(f"no journal at {journal}", file=sys.stderr)
        return 1
    board = Board.load(journal)
    camp = board.campaign
    if args.as_json:
        print(json.dumps(board.snapshot(), sort_keys=True, default=str))
        return 0
    columns = {name: len(exps) for name, exps in board.columns().items()}
    print(f"campaign   {camp.id}")
    print(f"phase      {camp.phase}" + (f" ({camp.halt_reason})" if camp.halt_reason else ""))
    print(f"budget     {camp.budget_remaining}/{camp.budget_initial} ({budget_band(camp.budget_remaining)})")
    print(f"analyzed   {camp.analyzed_count}   stall {camp.stall_count}")
    if camp.best_experiment:
        print(f"best       {camp.best_experiment} ({board.metric.name}={camp.best_primary})")
    print("columns    " + "  ".join(f"{name}:{count}" for name, count in columns.items() if count))
    print(f"turns      strategist {camp.strategist_turns}  milestones {camp.milestones_emitted}  interventions {camp.supervisor_interventions}")
    return 0


def _cmd_halt(args) -> int:
    workspace = Path(args.workspace)
    if not (workspace / "journal.jsonl").is_file():
        print(f"no campaign in {workspace}", file=sys.stderr)
        return 1
    (workspace / "HALT").write_text("halt requested\n", encoding="utf-8")
    print("halt requested; the campaign will stop at its next tick")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "launch":
            return _cmd_launch(args)
        if args.command == "resume":
            return _cmd_resume(args)
        if args.command == "status":
            return _cmd_status(args)
        if args.command == "halt":
            return _cmd_halt(args)
    except CampaignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
