"""Autonomous non-monolithic multi-mode exploration on an options hierarchy."""

from .core import (
    AgentKind,
    EvalReport,
    ModeConfig,
    ModeCounters,
    ModeId,
    RunConfig,
    TaskName,
    TopHorizonStats,
    Transition,
    default_config,
    validate_config,
)
from .runlog import RunLog, WindowRow

__version__ = "0.1.0"

__all__ = [
    "AgentKind", "EvalReport", "ModeConfig", "ModeCounters", "ModeId",
    "RunConfig", "RunLog", "TaskName", "TopHorizonStats", "Transition",
    "WindowRow", "default_config", "validate_config",
]
