"""Desk-scale 2-D point-navigation tasks.

Two tasks with the two-stage / deceptive-reward structure that makes
exploration matter:

* Push -- a wide movable block sits on the straight line between the
  start and the target and slides only along the push axis (a slot).
  Walking straight shoves the block ahead of the agent until it jams
  against the far wall covering the target region, so the greedy path
  permanently fails the episode. Success requires leaving the direct
  corridor and going around the untouched block.

* Fall -- an impassable gap strip crosses the arena between the start
  and the target. The block starts at the gap edge; pushed fully into
  the gap it locks in place and becomes a bridge. Only the bridged
  x-range can be crossed.

Dynamics are kinematic: each step the position moves by the clamped
action (a velocity command), resolved axis by axis against the block,
the gap, and the arena walls. Reward is the negative Euclidean distance
from the agent to the target, always <= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TaskName

ARENA_HALF = 8.0
BLOCK_HALF = 1.5            # Fall bridge block
PUSH_BLOCK_HALF = 3.5       # Push obstacle (wide, y-slot constrained)
GAP_LOW = 0.5
GAP_HIGH = 2.5
START_JITTER = 0.5


class NonFiniteAction(ValueError):
    """An action contained a NaN or infinite component."""


@dataclass(frozen=True)
class TaskSpec:
    name: TaskName
    state_dim: int
    action_dim: int
    goal_low: np.ndarray
    goal_high: np.ndarray
    action_bound: float
    target_pos: np.ndarray
    success_radius: float
    episode_len: int
    block_half: float
    block_slides: tuple        # per-axis: may the block move along it


@dataclass
class EnvState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    block_pos: np.ndarray
    t_ep: int


def push_task_spec() -> TaskSpec:
    return TaskSpec(
        name=TaskName.PUSH,
        state_dim=6,
        action_dim=2,
        goal_low=np.array([-6.0, -6.0]),
        goal_high=np.array([6.0, 6.0]),
        action_bound=1.0,
        target_pos=np.array([0.0, 6.5]),
        success_radius=0.5,
        episode_len=500,
        block_half=PUSH_BLOCK_HALF,
        block_slides=(False, True),
    )


def fall_task_spec() -> TaskSpec:
    return TaskSpec(
        name=TaskName.FALL,
        state_dim=6,
        action_dim=2,
        goal_low=np.array([-6.0, -6.0]),
        goal_high=np.array([6.0, 6.0]),
        action_bound=1.0,
        target_pos=np.array([0.0, 5.5]),
        success_radius=0.5,
        episode_len=500,
        block_half=BLOCK_HALF,
        block_slides=(True, True),
    )


def task_spec(name: TaskName) -> TaskSpec:
    return push_task_spec() if name is TaskName.PUSH else fall_task_spec()


def reset(spec: TaskSpec, rng: np.random.Generator) -> EnvState:
    """Fresh episode: agent near the task start, block at its fixed spot.

    The agent start is jittered uniformly within +/-START_JITTER per
    axis so that repeated episodes differ; everything is deterministic
    given the generator state.
    """
    jitter = rng.uniform(-START_JITTER, START_JITTER, size=2)
    agent = np.array([0.0, -5.0]) + jitter
    if spec.name is TaskName.PUSH:
        block = np.array([0.0, 0.0])
    else:
        # Below the gap with the top face flush against the gap edge.
        block = np.array([2.5, GAP_LOW - BLOCK_HALF])
    return EnvState(
        agent_pos=agent,
        agent_vel=np.zeros(2),
        block_pos=block,
        t_ep=0,
    )


def observe(state: EnvState) -> np.ndarray:
    return np.concatenate([state.agent_pos, state.agent_vel, state.block_pos])


def _block_locked(spec: TaskSpec, block: np.ndarray) -> bool:
    # Fall only: a block fully covering the gap rows has dropped in and
    # become terrain.
    if spec.name is not TaskName.FALL:
        return False
    return (block[1] - spec.block_half <= GAP_LOW
            and block[1] + spec.block_half >= GAP_HIGH)


def _bridged_at(spec: TaskSpec, block: np.ndarray, x: float) -> bool:
    return abs(x - block[0]) <= spec.block_half


def _gap_blocks(spec: TaskSpec, block: np.ndarray, pos: np.ndarray) -> bool:
    if spec.name is not TaskName.FALL:
        return False
    in_gap_rows = GAP_LOW < pos[1] < GAP_HIGH
    return in_gap_rows and not (_block_locked(spec, block)
                                and _bridged_at(spec, block, pos[0]))


_FACE_TOL = 1e-9


def _move_axis(spec: TaskSpec, agent: np.ndarray, block: np.ndarray,
               axis: int, delta: float) -> None:
    """Advance the agent along one axis, pushing the block as needed.

    Mutates agent and block in place. The agent is a point; the block an
    axis-aligned square of half-size BLOCK_HALF. Contact pushes the
    block by the penetration depth; walls stop the block, and a stopped
    block stops the agent flush against its face. A locked block (Fall,
    dropped into the gap) is walkable terrain, not an obstacle.
    """
    if delta == 0.0:
        return
    other = 1 - axis
    sign = 1.0 if delta > 0 else -1.0
    target = agent[axis] + delta
    if target > ARENA_HALF:
        target = ARENA_HALF
    elif target < -ARENA_HALF:
        target = -ARENA_HALF

    half = spec.block_half
    solid = (abs(agent[other] - block[other]) < half
             and not _block_locked(spec, block))
    if solid:
        face = block[axis] - sign * half
        started_near = (agent[axis] - face) * sign <= _FACE_TOL
        penetration = (target - face) * sign
        if started_near and penetration > 0.0:
            if spec.block_slides[axis]:
                limit = ARENA_HALF - half
                new_block = block[axis] + sign * penetration
                if new_block > limit:
                    new_block = limit
                elif new_block < -limit:
                    new_block = -limit
            else:
                new_block = block[axis]          # slot: immovable this axis
            moved = (new_block - block[axis]) * sign
            block[axis] = new_block
            target = face + sign * moved

    if spec.name is TaskName.FALL:
        if axis == 1:
            # The gap is impassable unless bridged where the agent crosses.
            in_gap = GAP_LOW < target < GAP_HIGH
            bridged = (_block_locked(spec, block)
                       and abs(agent[0] - block[0]) <= BLOCK_HALF)
            if in_gap and not bridged:
                if delta > 0 and agent[1] <= GAP_LOW:
                    target = min(target, GAP_LOW)
                elif delta < 0 and agent[1] >= GAP_HIGH:
                    target = max(target, GAP_HIGH)
        elif GAP_LOW < agent[1] < GAP_HIGH:
            # Sideways motion while standing on a bridge may not leave it.
            lo = block[0] - spec.block_half
            hi = block[0] + spec.block_half
            if target < lo:
                target = lo
            elif target > hi:
                target = hi

    agent[axis] = target


def step(state: EnvState, action: np.ndarray, spec: TaskSpec):
    """Advance one step; returns (next_state, reward, done_env).

    reward = -||agent_pos - target_pos|| evaluated at the resulting
    position, so it is always finite and <= 0.
    """
    ax, ay = float(action[0]), float(action[1])
    if not (math.isfinite(ax) and math.isfinite(ay)):
        raise NonFiniteAction(f"action {action!r} has non-finite components")
    bound = spec.action_bound
    vx = -bound if ax < -bound else (bound if ax > bound else ax)
    vy = -bound if ay < -bound else (bound if ay > bound else ay)

    agent = state.agent_pos.copy()
    block = state.block_pos.copy()
    _move_axis(spec, agent, block, 0, vx)
    _move_axis(spec, agent, block, 1, vy)

    t_ep = state.t_ep + 1
    next_state = EnvState(agent_pos=agent, agent_vel=np.array([vx, vy]),
                          block_pos=block, t_ep=t_ep)
    tx, ty = spec.target_pos[0], spec.target_pos[1]
    reward = -math.hypot(agent[0] - tx, agent[1] - ty)
    done_env = t_ep >= spec.episode_len
    return next_state, reward, done_env


def judge_success(state: EnvState, target_pos: np.ndarray, spec: TaskSpec) -> bool:
    """True iff the agent is within the success radius (inclusive)."""
    dist = math.hypot(state.agent_pos[0] - target_pos[0],
                      state.agent_pos[1] - target_pos[1])
    return dist <= spec.success_radius
