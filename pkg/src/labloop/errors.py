"""Exception types shared across the orchestrator.

Tool failures are deliberately NOT exceptions: the toolbelt reports them as
failed ToolResults so an agent session never crashes on a bad call.
"""


class CampaignError(Exception):
    """Base class for orchestrator errors."""


class IllegalTransition(CampaignError):
    """Raised when a lifecycle event is not legal in the current state."""

    def __init__(self, state: str, event: str):
        self.state = state
        self.event = event
        super().__init__(f"no transition from state {state!r} on event {event!r}")


class TerminalMutation(CampaignError):
    """Raised on any attempt to mutate an experiment in a terminal state."""


class UnknownExperiment(CampaignError):
    pass


class DuplicateName(CampaignError):
    pass


class UnknownMetric(CampaignError):
    pass


class NonFiniteValue(CampaignError):
    """Raised after storing a NaN/inf metric; the experiment is flagged, never ranked."""


class EmptyContent(CampaignError):
    pass


class CorruptJournal(CampaignError):
    """A non-tail journal record failed to parse."""


class UnknownFile(CampaignError):
    pass


class EmptyReason(CampaignError):
    pass


class UnknownRole(CampaignError):
    pass


class UnknownCheckpoint(CampaignError):
    pass


class AdapterResolutionError(CampaignError):
    """Adapter generation failed twice; the campaign cannot start."""


class GenerationIncomplete(CampaignError):
    def __init__(self, missing: list):
        self.missing = list(missing)
        super().__init__(f"adapter generation incomplete, missing: {', '.join(self.missing)}")


class SpawnDepthExceeded(CampaignError):
    pass


class BackendError(CampaignError):
    """Transport/provider failure inside an agent backend."""


class UnknownHandle(CampaignError):
    pass


class SubmitFailed(CampaignError):
    """Cluster submission failed (CLI nonzero, spawn failure); surfaces as experiment failure."""


class EmptyWindow(CampaignError):
    pass


class PhaseError(CampaignError):
    """A pipeline phase could not produce its required deliverables."""


class PathEscape(CampaignError):
    """A path resolved outside the campaign workspace."""


class CampaignHalted(CampaignError):
    pass
