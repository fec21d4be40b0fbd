"""Run log record shared by the training engine and the harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .core import EvalReport, ModeCounters


@dataclass
class WindowRow:
    """Per-window metrics: step is the window's end (1-based)."""

    step: int
    random_steps: int
    onpolicy_steps: int
    exploit_steps: int
    reward_mean: float
    success_rate: float


@dataclass
class RunLog:
    windows: List[WindowRow]
    evals: List[EvalReport]
    counters: ModeCounters
    config_echo: Dict[str, str]
    decisions: List[Tuple[int, str]] = field(default_factory=list)
    burst_lengths: List[int] = field(default_factory=list)
    checkpoints: Dict[str, object] = field(default_factory=dict)
