"""Three-level orchestration: autonomous mode selection with guidance.

The top level picks, once per top horizon, which middle-level policy
generates goals for the next horizon. Guidance enters twice:

* each closed horizon's summed reward is scaled by the chosen mode's
  coefficient before the top level trains on it, so under negative
  rewards the more-penalized explore modes look worse;
* the top level's training loss is scaled up for explore modes and
  down for the exploit mode by the latest evaluation success rate, so
  a capable exploit hierarchy suppresses further exploration.

A horizon whose within-horizon success ratio reaches the chosen mode's
reference terminates the top-level episode early for advantage
computation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import env as envmod
from .agents import OffPolicyLearner, OnPolicyLearner, off_select, on_select
from .core import EvalReport, ModeConfig, ModeCounters, ModeId, MODES, TopHorizonStats
from .env import EnvState, TaskSpec


class ZeroCount(ValueError):
    """A horizon was closed before any step was recorded."""


class Phase(enum.Enum):
    PRETRAIN = "pretrain"
    STARTING_MODE = "starting_mode"
    AUTONOMOUS = "autonomous"


@dataclass
class RunState:
    t: int
    env_state: EnvState
    current_mode: ModeId
    current_goal: np.ndarray
    stats: TopHorizonStats
    counters: ModeCounters
    last_eval: Optional[EvalReport]
    phase: Phase


@dataclass
class TopRollout:
    """One completed top horizon, as training data for the top policy."""

    obs: np.ndarray
    mode: ModeId
    logprob: float
    r_final: float
    done_top: bool


def modify_reward(r_m: float, alpha: float, enabled: bool = True) -> float:
    """Guided-exploration reward scaling: r + alpha*r."""
    if not enabled:
        return r_m
    return r_m + alpha * r_m


def modify_loss(loss: float, s_e: float, mode: ModeId, enabled: bool = True) -> float:
    """Evaluation-driven loss scaling for the top policy.

    Explore modes: loss + s_e*loss. Exploit: loss - s_e*loss.
    """
    if not enabled:
        return loss
    if mode.is_explore:
        return loss + s_e * loss
    return loss - s_e * loss


def horizon_close(
    stats: TopHorizonStats,
    cfg: ModeConfig,
    mode: ModeId,
    reward_mod_enabled: bool = True,
    s_o_ref: Optional[float] = None,
) -> Tuple[float, bool, float]:
    """Close one top horizon; returns (r_final, done_top, s_o_m).

    s_o_ref overrides the per-mode reference (the starting-mode phase
    uses a common reference). Resets the accumulators afterward.
    """
    if stats.count_m == 0:
        raise ZeroCount("cannot close a horizon with zero steps")
    s_o_m = stats.done_m / stats.count_m
    r_final = modify_reward(stats.r_m, cfg.alpha[mode], reward_mod_enabled)
    ref = cfg.s_o_ref[mode] if s_o_ref is None else s_o_ref
    done_top = s_o_m >= ref
    stats.reset()
    return r_final, done_top, s_o_m


def goal_transition(state: np.ndarray, goal: np.ndarray,
                    next_state: np.ndarray) -> np.ndarray:
    """Re-express a standing relative goal after movement: s + g - s'.

    Operates on the goal subspace (the leading position coordinates).
    """
    k = len(goal)
    return np.asarray(state)[:k] + np.asarray(goal) - np.asarray(next_state)[:k]


def top_observation(state_vec: np.ndarray, target_pos: np.ndarray,
                    prev_mode: ModeId, last_s_o_m: float) -> np.ndarray:
    """The top policy's input: state, context, previous mode, progress."""
    one_hot = np.zeros(len(MODES))
    one_hot[MODES.index(prev_mode)] = 1.0
    return np.concatenate([state_vec, target_pos, one_hot, [last_s_o_m]])


TOP_OBS_EXTRA = 3 + 1  # previous-mode one-hot + last success ratio


def select_mode(
    top: OnPolicyLearner,
    obs: np.ndarray,
    phase: Phase,
    rng: np.random.Generator,
) -> Tuple[ModeId, float]:
    """Pick the next mode; forced uniform-random during the starting phase.

    Returns (mode, logprob of that mode under the current top policy) so
    the decision can enter the top policy's rollout either way.
    """
    if phase in (Phase.PRETRAIN, Phase.STARTING_MODE):
        from .agents import _log_softmax
        from .approx import forward

        idx = MODES.index(ModeId.RANDOM)
        logp = float(_log_softmax(forward(top.actor, obs))[idx])
        return ModeId.RANDOM, logp
    idx, logp = on_select(top, obs, rng)
    return MODES[idx], logp


def evaluate_exploit(
    mid: OffPolicyLearner,
    low: OffPolicyLearner,
    spec: TaskSpec,
    episodes: int,
    rng: np.random.Generator,
    middle_horizon: int = 10,
    step_of_eval: int = 0,
    goal_fn=None,
    action_fn=None,
) -> EvalReport:
    """Noise-free evaluation of the exploit hierarchy.

    Runs full episodes with the deterministic middle goal source and the
    low-level controller; an episode counts as a success if any step is
    judged successful. Never mutates the learners. goal_fn/action_fn
    allow substituting scripted policies.
    """
    if goal_fn is None:
        goal_fn = lambda obs: off_select(mid, obs, explore_noise=False)
    if action_fn is None:
        action_fn = lambda obs: off_select(low, obs, explore_noise=False)
    successes = 0
    for _ in range(episodes):
        state = envmod.reset(spec, rng)
        goal = np.zeros(spec.action_dim)
        succeeded = False
        for t in range(spec.episode_len):
            state_vec = envmod.observe(state)
            if t % middle_horizon == 0:
                goal = goal_fn(np.concatenate([state_vec, spec.target_pos]))
            action = np.clip(action_fn(np.concatenate([state_vec, goal])),
                             -spec.action_bound, spec.action_bound)
            next_state, _, done_env = envmod.step(state, action, spec)
            if envmod.judge_success(next_state, spec.target_pos, spec):
                succeeded = True
                break
            goal = goal_transition(state_vec, goal, envmod.observe(next_state))
            state = next_state
            if done_env:
                break
        successes += int(succeeded)
    return EvalReport(s_e=successes / episodes, episodes=episodes,
                      step_of_eval=step_of_eval)


def run_training(cfg):
    """Execute the full three-level training loop; returns a RunLog."""
    from .engine import run_auto

    return run_auto(cfg)
