"""The shared training loop behind all four agents.

One environment thread: the low level acts every step; goals are
re-picked every middle horizon by whichever middle policy the current
mode names; both off-policy learners train on every eligible
transition regardless of which mode generated it. The agents differ
only in who owns the mode:

* auto -- the learned top policy, re-decided each top horizon;
* reference -- a homeostasis trigger over the value promise
  discrepancy, firing fixed-length exploration bursts;
* monolithic -- exploitation with noise, always.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import env as envmod
from .agents import (
    OffPolicyLearner,
    OnPolicyLearner,
    RandomPolicy,
    RolloutBuffer,
    make_off_policy,
    make_on_policy,
    off_select,
    off_update,
    on_select,
    on_update,
    random_goal,
    value_of,
)
from .approx import forward
from .baselines import RefConfig, ValuePromiseWindow, make_homeostasis, homeostasis_step
from .core import (
    AgentKind,
    EvalReport,
    ModeCounters,
    ModeId,
    MODES,
    RunConfig,
    TopHorizonStats,
    config_to_keyvalues,
    validate_config,
)
from .hierarchy import (
    Phase,
    evaluate_exploit,
    goal_transition,
    horizon_close,
    modify_loss,
    select_mode,
    top_observation,
)
from .runlog import RunLog, WindowRow

WINDOW_WIDTH = 1000
STARTING_SO_REF = 0.9
TOP_TRAIN_EVERY = 8          # completed top horizons per top update
MID_PPO_TRAIN_EVERY = 3      # closed middle horizons per on-policy update
BATCH_SIZE = 64
LOW_WARMUP = 1000            # replay entries before low-level updates
MID_WARMUP = 250
TD3_TRAIN_EVERY = 2          # env steps between off-policy updates
TOP_REWARD_SCALE = 0.01
MID_REWARD_SCALE = 0.1
TOP_GAMMA = 0.5
MID_PPO_GAMMA = 0.95
TOP_LR = 3e-4
MID_PPO_LR = 3e-4
TD3_LR = 1e-3
TOP_ENTROPY_COEF = 0.05
MID_PPO_ENTROPY_COEF = 0.01
VALUE_PROMISE_K = 10
EVAL_STREAM_TAG = 7777


class PhaseAlignmentError(ValueError):
    """Phase boundaries must align with the top horizon."""


@dataclass
class _MidPending:
    obs: np.ndarray
    goal: np.ndarray          # the executed (clamped) goal
    ppo_action: np.ndarray    # raw sample for the on-policy learner
    ppo_logprob: float
    ppo_value: float
    reward: float = 0.0


@dataclass
class _TopPending:
    obs: np.ndarray
    mode: ModeId
    logprob: float


class _Engine:
    """State for one run; subclasses implement the mode source."""

    uses_top = False
    uses_mid_ppo = False

    def __init__(self, cfg: RunConfig):
        validate_config(cfg)
        self.cfg = cfg
        self.spec = envmod.task_spec(cfg.task)
        mc = cfg.mode_config
        if mc.pretrain_steps % cfg.top_horizon != 0:
            raise PhaseAlignmentError("pretrain_steps must be a multiple of top_horizon")
        if mc.starting_mode_steps % cfg.top_horizon != 0:
            raise PhaseAlignmentError(
                "starting_mode_steps must be a multiple of top_horizon"
            )
        if self.spec.episode_len % cfg.top_horizon != 0:
            raise PhaseAlignmentError("episode length must be a multiple of top_horizon")

        seeds = np.random.SeedSequence(cfg.seed).spawn(13)
        self.rng_env = np.random.default_rng(seeds[0])
        rng_low_init = np.random.default_rng(seeds[1])
        rng_mid_init = np.random.default_rng(seeds[2])
        rng_ppo_init = np.random.default_rng(seeds[3])
        rng_top_init = np.random.default_rng(seeds[4])
        self.rng_low_noise = np.random.default_rng(seeds[5])
        self.rng_mid_noise = np.random.default_rng(seeds[6])
        self.rng_goal = np.random.default_rng(seeds[7])
        self.rng_ppo = np.random.default_rng(seeds[8])
        self.rng_top = np.random.default_rng(seeds[9])
        self.rng_low_batch = np.random.default_rng(seeds[10])
        self.rng_mid_batch = np.random.default_rng(seeds[11])
        self.rng_control = np.random.default_rng(seeds[12])

        spec = self.spec
        self.goal_bound = float(spec.goal_high[0])
        obs_low = spec.state_dim + spec.action_dim
        obs_mid = spec.state_dim + 2
        self.low = make_off_policy(obs_low, spec.action_dim, spec.action_bound,
                                   rng_low_init, lr=TD3_LR, dtype=np.float32)
        self.mid = make_off_policy(obs_mid, spec.action_dim, self.goal_bound,
                                   rng_mid_init, lr=TD3_LR, dtype=np.float32)
        self.random_policy = RandomPolicy(low=spec.goal_low, high=spec.goal_high)
        self.mid_ppo: Optional[OnPolicyLearner] = None
        if self.uses_mid_ppo:
            self.mid_ppo = make_on_policy(
                obs_mid, spec.action_dim, "gaussian", rng_ppo_init,
                bound=self.goal_bound, lr=MID_PPO_LR, gamma=MID_PPO_GAMMA,
                entropy_coef=MID_PPO_ENTROPY_COEF, init_log_std=0.5,
                dtype=np.float32,
            )
        self.top: Optional[OnPolicyLearner] = None
        if self.uses_top:
            top_obs_dim = spec.state_dim + 2 + len(MODES) + 1
            self.top = make_on_policy(
                top_obs_dim, len(MODES), "categorical", rng_top_init,
                lr=TOP_LR, gamma=TOP_GAMMA, entropy_coef=TOP_ENTROPY_COEF,
                dtype=np.float32,
            )

        self.mode: ModeId = ModeId.RANDOM
        self.force_repick = False
        self.stats = TopHorizonStats()
        self.counters = ModeCounters()
        self.last_eval: Optional[EvalReport] = None
        self.evals: List[EvalReport] = []
        self.windows: List[WindowRow] = []
        self.decisions: List[Tuple[int, str]] = []
        self.burst_lengths: List[int] = []
        self.mid_pending: Optional[_MidPending] = None
        self.top_pending: Optional[_TopPending] = None
        self.top_rollout = RolloutBuffer()
        self.ppo_rollout = RolloutBuffer()
        self.closed_middle_horizons = 0
        self.last_s_o_m = 0.0
        self.eval_idx = 0
        self.horizons_done = 0
        self.done_top_count = 0
        self.last_env_reward = 0.0
        self.win_counts = {m: 0 for m in MODES}
        self.win_reward = 0.0
        self.win_success = 0

    # -- mode source hooks -------------------------------------------------

    def phase_at(self, t: int) -> Phase:
        mc = self.cfg.mode_config
        if t < mc.pretrain_steps:
            return Phase.PRETRAIN
        if t < mc.pretrain_steps + mc.starting_mode_steps:
            return Phase.STARTING_MODE
        return Phase.AUTONOMOUS

    def begin_accounting(self, t: int, state_vec: np.ndarray) -> None:
        """Called once, at the first post-pretrain step."""

    def after_step(self, t: int, next_vec: np.ndarray) -> None:
        """Called after each environment step and its accounting."""

    # -- shared plumbing ---------------------------------------------------

    def sample_goal(self, t: int, state_vec: np.ndarray) -> None:
        """Re-pick the standing goal from the current mode's policy."""
        obs_mid = np.concatenate([state_vec, self.spec.target_pos])
        phase = self.phase_at(t)
        if phase is Phase.PRETRAIN or (phase is Phase.STARTING_MODE
                                       and self.mode is ModeId.RANDOM):
            executed = random_goal(self.random_policy, self.rng_goal)
            raw = executed
        elif self.mode is ModeId.RANDOM:
            executed = random_goal(self.random_policy, self.rng_goal)
            raw = executed
        elif self.mode is ModeId.ONPOLICY and self.mid_ppo is not None:
            raw, _ = on_select(self.mid_ppo, obs_mid, self.rng_ppo)
            executed = np.clip(raw, -self.goal_bound, self.goal_bound)
        else:
            executed = off_select(self.mid, obs_mid, explore_noise=True,
                                  rng=self.rng_mid_noise)
            raw = executed
        ppo_logprob = 0.0
        ppo_value = 0.0
        if self.mid_ppo is not None:
            from .agents import _gaussian_logprob

            mean = forward(self.mid_ppo.actor, obs_mid)
            ppo_logprob = float(
                _gaussian_logprob(raw, mean, self.mid_ppo.log_std)
            )
            ppo_value = value_of(self.mid_ppo, obs_mid)
        self.mid_pending = _MidPending(
            obs=obs_mid, goal=executed, ppo_action=np.asarray(raw, dtype=float),
            ppo_logprob=ppo_logprob, ppo_value=ppo_value,
        )
        if self.phase_at(t) is not Phase.PRETRAIN:
            self.counters.count_decision(self.mode)
        self.goal = executed.astype(float)

    def close_mid(self, t: int, next_vec: np.ndarray, done: bool) -> None:
        pending = self.mid_pending
        if pending is None:
            return
        obs_next = np.concatenate([next_vec, self.spec.target_pos])
        self.mid.replay.push(pending.obs, pending.goal,
                             pending.reward * MID_REWARD_SCALE, obs_next, False)
        if self.mid_ppo is not None and self.phase_at(t) is not Phase.PRETRAIN:
            roll = self.ppo_rollout
            roll.obs.append(pending.obs)
            roll.actions.append(pending.ppo_action)
            roll.logprobs.append(pending.ppo_logprob)
            roll.rewards.append(pending.reward * MID_REWARD_SCALE)
            roll.dones.append(done)
            roll.values.append(pending.ppo_value)
            roll.final_obs = obs_next
            roll.final_done = done
            self.closed_middle_horizons += 1
            if self.closed_middle_horizons % MID_PPO_TRAIN_EVERY == 0:
                on_update(self.mid_ppo, roll)
                roll.clear()
        self.mid_pending = None

    def maybe_eval(self, t: int) -> None:
        if (t + 1) % self.cfg.eval_interval != 0:
            return
        rng = np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, EVAL_STREAM_TAG, self.eval_idx])
        )
        self.eval_idx += 1
        report = evaluate_exploit(
            self.mid, self.low, self.spec, self.cfg.eval_episodes, rng,
            middle_horizon=self.cfg.middle_horizon, step_of_eval=t + 1,
        )
        self.last_eval = report
        self.evals.append(report)

    def flush_window(self, t: int) -> None:
        if (t + 1) % WINDOW_WIDTH != 0:
            return
        self.windows.append(WindowRow(
            step=t + 1,
            random_steps=self.win_counts[ModeId.RANDOM],
            onpolicy_steps=self.win_counts[ModeId.ONPOLICY],
            exploit_steps=self.win_counts[ModeId.EXPLOIT],
            reward_mean=self.win_reward / WINDOW_WIDTH,
            success_rate=self.win_success / WINDOW_WIDTH,
        ))
        self.counters.snapshot_window(self.win_counts)
        self.win_counts = {m: 0 for m in MODES}
        self.win_reward = 0.0
        self.win_success = 0

    def checkpoints(self) -> Dict[str, object]:
        ckpt = {
            "low_actor": self.low.actor, "low_critic1": self.low.critic1,
            "low_critic2": self.low.critic2,
            "mid_td3_actor": self.mid.actor, "mid_td3_critic1": self.mid.critic1,
            "mid_td3_critic2": self.mid.critic2,
        }
        if self.mid_ppo is not None:
            ckpt["mid_ppo_actor"] = self.mid_ppo.actor
            ckpt["mid_ppo_critic"] = self.mid_ppo.critic
        if self.top is not None:
            ckpt["top_actor"] = self.top.actor
            ckpt["top_critic"] = self.top.critic
        return ckpt

    # -- the loop ----------------------------------------------------------

    def run(self) -> RunLog:
        cfg = self.cfg
        spec = self.spec
        mc = cfg.mode_config
        env_state = envmod.reset(spec, self.rng_env)
        state_vec = envmod.observe(env_state)
        self.goal = np.zeros(spec.action_dim)
        pretrain = mc.pretrain_steps

        for t in range(cfg.total_steps):
            if t == pretrain:
                self.begin_accounting(t, state_vec)
            if t % cfg.middle_horizon == 0 or self.force_repick:
                self.force_repick = False
                self.close_mid(t, state_vec, done=False)
                self.sample_goal(t, state_vec)

            if t < pretrain:
                action = self.rng_low_noise.uniform(
                    -spec.action_bound, spec.action_bound, size=spec.action_dim
                )
            else:
                action = off_select(
                    self.low, np.concatenate([state_vec, self.goal]),
                    explore_noise=True, rng=self.rng_low_noise,
                )
            env_next, reward, done_env = envmod.step(env_state, action, spec)
            next_vec = envmod.observe(env_next)
            success = envmod.judge_success(env_next, spec.target_pos, spec)

            self.win_reward += reward
            self.win_success += int(success)
            self.last_env_reward = reward
            if t >= pretrain:
                self.counters.count_step(self.mode)
                self.win_counts[self.mode] += 1
                self.stats.record(reward, success)
            if self.mid_pending is not None:
                self.mid_pending.reward += reward

            next_goal = goal_transition(state_vec, self.goal, next_vec)
            low_reward = -float(np.linalg.norm(
                state_vec[:2] + self.goal - next_vec[:2]
            ))
            self.low.replay.push(
                np.concatenate([state_vec, self.goal]), action, low_reward,
                np.concatenate([next_vec, next_goal]), False,
            )

            self.after_step(t, next_vec)

            if done_env:
                self.close_mid(t, next_vec, done=True)
                env_state = envmod.reset(spec, self.rng_env)
                state_vec = envmod.observe(env_state)
                self.goal = np.zeros(spec.action_dim)
            else:
                env_state = env_next
                state_vec = next_vec
                self.goal = next_goal

            if t % TD3_TRAIN_EVERY == 0:
                if len(self.low.replay) >= LOW_WARMUP:
                    off_update(self.low,
                               self.low.replay.sample(BATCH_SIZE, self.rng_low_batch))
                if len(self.mid.replay) >= MID_WARMUP:
                    off_update(self.mid,
                               self.mid.replay.sample(BATCH_SIZE, self.rng_mid_batch))

            self.maybe_eval(t)
            self.flush_window(t)

        return RunLog(
            windows=self.windows,
            evals=self.evals,
            counters=self.counters,
            config_echo=config_to_keyvalues(cfg),
            decisions=self.decisions,
            burst_lengths=self.burst_lengths,
            checkpoints=self.checkpoints(),
        )


class _AutoEngine(_Engine):
    uses_top = True
    uses_mid_ppo = True

    def _select(self, t: int, state_vec: np.ndarray) -> None:
        phase = self.phase_at(t)
        obs = top_observation(state_vec, self.spec.target_pos, self.mode,
                              self.last_s_o_m)
        mode, logprob = select_mode(self.top, obs, phase, self.rng_top)
        self.mode = mode
        self.top_pending = _TopPending(obs=obs, mode=mode, logprob=logprob)
        self.decisions.append((t, mode.text))

    def begin_accounting(self, t: int, state_vec: np.ndarray) -> None:
        self.horizons_done = 0
        self._select(t, state_vec)

    def after_step(self, t: int, next_vec: np.ndarray) -> None:
        if self.phase_at(t) is Phase.PRETRAIN:
            return
        if self.stats.count_m < self.cfg.top_horizon:
            return
        phase = self.phase_at(t)
        ref = STARTING_SO_REF if phase is Phase.STARTING_MODE else None
        pending = self.top_pending
        r_final, done_top, s_o_m = horizon_close(
            self.stats, self.cfg.mode_config, pending.mode,
            reward_mod_enabled=self.cfg.reward_mod_enabled, s_o_ref=ref,
        )
        self.last_s_o_m = s_o_m
        self.done_top_count += int(done_top)
        roll = self.top_rollout
        roll.obs.append(pending.obs)
        roll.actions.append(MODES.index(pending.mode))
        roll.logprobs.append(pending.logprob)
        roll.rewards.append(r_final * TOP_REWARD_SCALE)
        roll.dones.append(done_top)
        roll.values.append(value_of(self.top, pending.obs))
        self.horizons_done += 1

        next_obs = top_observation(next_vec, self.spec.target_pos,
                                   pending.mode, s_o_m)
        if self.horizons_done % TOP_TRAIN_EVERY == 0:
            roll.final_obs = next_obs
            roll.final_done = done_top
            s_e = self.last_eval.s_e if self.last_eval is not None else 0.0
            mode = pending.mode
            transform = lambda loss: modify_loss(
                loss, s_e, mode, enabled=self.cfg.loss_mod_enabled
            )
            on_update(self.top, roll, transform)
            roll.clear()

        # Select the mode for the next horizon (phase as of the next step).
        if t + 1 < self.cfg.total_steps:
            next_phase = self.phase_at(t + 1)
            mode, logprob = select_mode(self.top, next_obs, next_phase,
                                        self.rng_top)
            self.mode = mode
            self.top_pending = _TopPending(obs=next_obs, mode=mode,
                                           logprob=logprob)
            self.decisions.append((t + 1, mode.text))


class _ReferenceEngine(_Engine):
    uses_top = False

    def __init__(self, cfg: RunConfig, ref: RefConfig, trigger_fn=None):
        self.ref = ref
        self.uses_mid_ppo = ref.explore_mode is ModeId.ONPOLICY
        super().__init__(cfg)
        self.homeo = make_homeostasis(ref.rho)
        self.trigger_fn = trigger_fn
        self.promise = ValuePromiseWindow(k=VALUE_PROMISE_K, gamma=self.mid.gamma)
        self.burst_left = 0
        self.mode = ModeId.RANDOM  # starting phase behaviour

    def _check_trigger(self) -> bool:
        if self.trigger_fn is not None:
            signal = self.promise.discrepancy() if self.promise.full else 0.0
            return bool(self.trigger_fn(signal, self.rng_control))
        if not self.promise.full:
            return False
        fired, self.homeo = homeostasis_step(
            self.homeo, self.promise.discrepancy(), self.rng_control
        )
        return fired

    def _set_mode(self, t_effective: int, mode: ModeId) -> None:
        if self.mode is not mode:
            self.mode = mode
            self.decisions.append((t_effective, mode.text))
            self.force_repick = True

    def begin_accounting(self, t: int, state_vec: np.ndarray) -> None:
        if self.cfg.mode_config.starting_mode_steps > 0:
            self.mode = ModeId.RANDOM
        elif self._check_trigger():
            self.burst_left = self.ref.explore_duration
            self.mode = self.ref.explore_mode
        else:
            self.mode = ModeId.EXPLOIT
        self.decisions.append((t, self.mode.text))

    def after_step(self, t: int, next_vec: np.ndarray) -> None:
        phase = self.phase_at(t)
        if phase is Phase.PRETRAIN:
            return
        if phase is Phase.STARTING_MODE:
            starting_end = (self.cfg.mode_config.pretrain_steps
                            + self.cfg.mode_config.starting_mode_steps)
            if t + 1 == starting_end:
                self._set_mode(t + 1, ModeId.EXPLOIT)
            return

        # Track the surprise signal from the exploit middle critic.
        obs_mid = np.concatenate([next_vec, self.spec.target_pos])
        value = float(forward(
            self.mid.critic1, np.concatenate([obs_mid, self.goal])
        )[0])
        self.promise.push(self.last_env_reward, value)

        if t + 1 >= self.cfg.total_steps:
            return
        if self.burst_left > 0:
            self.burst_left -= 1
            if self.burst_left > 0:
                return
            self.burst_lengths.append(self.ref.explore_duration)
            # Fall through: a fresh trigger chains bursts back-to-back.
        if self._check_trigger():
            self.burst_left = self.ref.explore_duration
            self._set_mode(t + 1, self.ref.explore_mode)
        else:
            self._set_mode(t + 1, ModeId.EXPLOIT)


class _MonolithicEngine(_Engine):
    uses_top = False
    uses_mid_ppo = False

    def begin_accounting(self, t: int, state_vec: np.ndarray) -> None:
        self.mode = ModeId.EXPLOIT
        self.decisions.append((t, self.mode.text))

    def after_step(self, t: int, next_vec: np.ndarray) -> None:
        pass


def run_auto(cfg: RunConfig) -> RunLog:
    return _AutoEngine(cfg).run()


def run_reference(cfg: RunConfig, ref: RefConfig, trigger_fn=None) -> RunLog:
    return _ReferenceEngine(cfg, ref, trigger_fn=trigger_fn).run()


def run_monolithic(cfg: RunConfig) -> RunLog:
    return _MonolithicEngine(cfg).run()


def run_for(cfg: RunConfig) -> RunLog:
    """Dispatch on cfg.agent."""
    if cfg.agent is AgentKind.AUTO:
        return run_auto(cfg)
    if cfg.agent is AgentKind.MONOLITHIC:
        return run_monolithic(cfg)
    from .baselines import ref_config_for

    return run_reference(cfg, ref_config_for(cfg))
