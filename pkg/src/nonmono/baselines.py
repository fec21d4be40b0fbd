"""Comparison agents: homeostasis-triggered references and monolithic.

The reference agents are two-level (no learned top policy). A surprise
signal -- the value promise discrepancy between a value estimate k
steps ago and the realized discounted return plus the current value
estimate -- feeds an adaptive threshold ("homeostasis") that converts
it into switch events at a preset target rate. Each switch triggers an
exploration burst of fixed duration, after which exploitation resumes:
exactly the rigid schedule the autonomous agent replaces.

The monolithic agent never switches at all; it adds Gaussian noise to
both levels' outputs at every step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Deque, Optional, Tuple

import numpy as np

from .core import ModeId, RunConfig


class LengthMismatch(ValueError):
    pass


def value_promise(v_then, rewards, v_now, gamma, k: Optional[int] = None) -> float:
    """|V(s_{t-k}) - sum_i gamma^i R_{t-i} - gamma^k V(s_t)|.

    rewards[0] is the most recent reward R_t; rewards[k-1] the oldest.
    """
    rewards = list(rewards)
    if k is not None and len(rewards) != k:
        raise LengthMismatch(f"expected {k} rewards, got {len(rewards)}")
    k = len(rewards)
    discounted = 0.0
    for i, r in enumerate(rewards):
        discounted += (gamma ** i) * r
    return abs(v_then - discounted - (gamma ** k) * v_now)


@dataclass
class ValuePromiseWindow:
    """Keeps the last k rewards and value estimates aligned to steps."""

    k: int
    gamma: float

    def __post_init__(self):
        self.rewards: Deque[float] = deque(maxlen=self.k)
        self.values: Deque[float] = deque(maxlen=self.k + 1)

    def push(self, reward: float, value: float) -> None:
        self.rewards.appendleft(reward)
        self.values.appendleft(value)

    @property
    def full(self) -> bool:
        return len(self.rewards) == self.k and len(self.values) == self.k + 1

    def discrepancy(self) -> float:
        if not self.full:
            raise LengthMismatch("window is not full yet")
        v_now = self.values[0]
        v_then = self.values[self.k]
        return value_promise(v_then, list(self.rewards), v_now, self.gamma,
                             k=self.k)


@dataclass
class HomeostasisState:
    """Adaptive thresholding of a nonnegative trigger signal.

    Fires with probability signal / (ema * multiplier); the multiplier
    adapts multiplicatively so the long-run firing rate tracks rho.
    Starting the multiplier at 1/rho makes a stationary signal fire at
    rho from the first step.
    """

    rho: float
    multiplier: float
    ema: float = 0.0
    smoothing: float = 0.01
    adapt: float = 0.01
    primed: bool = False


def make_homeostasis(rho: float, smoothing: float = 0.01,
                     adapt: float = 0.01) -> HomeostasisState:
    return HomeostasisState(rho=rho, multiplier=1.0 / rho,
                            smoothing=smoothing, adapt=adapt)


def homeostasis_step(
    h: HomeostasisState, signal: float, rng: np.random.Generator
) -> Tuple[bool, HomeostasisState]:
    """Advance one step; returns (switch, updated state)."""
    if signal < 0:
        raise ValueError("trigger signal must be nonnegative")
    if not h.primed:
        ema = signal
    else:
        ema = (1.0 - h.smoothing) * h.ema + h.smoothing * signal
    denom = ema * h.multiplier
    p = min(1.0, signal / denom) if denom > 0 else 0.0
    switch = bool(rng.random() < p)
    # Stationary point of the multiplicative adaptation is rate == rho.
    if switch:
        mult = h.multiplier * np.exp(h.adapt * (1.0 - h.rho))
    else:
        mult = h.multiplier * np.exp(-h.adapt * h.rho)
    return switch, replace(h, ema=ema, multiplier=mult, primed=True)


@dataclass(frozen=True)
class RefConfig:
    explore_mode: ModeId               # RANDOM or ONPOLICY
    explore_duration: int = 100        # env steps per triggered burst
    rho: float = 0.01


def ref_config_for(cfg: RunConfig) -> RefConfig:
    from .core import AgentKind

    mode = (ModeId.RANDOM if cfg.agent is AgentKind.REF_UNIFORM
            else ModeId.ONPOLICY)
    return RefConfig(explore_mode=mode, rho=cfg.baseline_rho)


def reference_run(cfg: RunConfig, ref: Optional[RefConfig] = None,
                  trigger_fn=None):
    """Homeostasis-triggered two-level reference agent; returns a RunLog.

    trigger_fn replaces the homeostasis decision (for tests); it takes
    (signal, rng) and returns a bool.
    """
    from .engine import run_reference

    if ref is None:
        ref = ref_config_for(cfg)
    return run_reference(cfg, ref, trigger_fn=trigger_fn)


def monolithic_run(cfg: RunConfig):
    """Noise-based two-level agent: exploit with noise at every step."""
    from .engine import run_monolithic

    return run_monolithic(cfg)
