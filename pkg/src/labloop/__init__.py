"""Autonomous research-campaign orchestrator.

A durable experiment board drives a four-phase pipeline: adapter resolution,
exploration, harness construction, and a dispatcher-run campaign of
propose -> implement -> run -> analyze under a fixed experiment budget.
"""

from .board import Board, CampaignConfig, MetricSpec
from .campaign import Campaign, launch_fixture
from .clock import VirtualClock
from .errors import CampaignError

__version__ = "0.1.0"

__all__ = [
    "Board",
    "Campaign",
    "CampaignConfig",
    "CampaignError",
    "MetricSpec",
    "VirtualClock",
    "launch_fixture",
    "__version__",
]
