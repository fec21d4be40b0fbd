"""The four policies of the hierarchy, each an independent learner.

* OffPolicyLearner -- twin-critic deterministic actor with delayed
  policy updates and target smoothing (the exploit goal source and the
  low-level controller).
* OnPolicyLearner -- clipped-surrogate stochastic policy with GAE, in
  a categorical flavour (mode selection) and a Gaussian flavour (goal
  proposals).
* RandomPolicy -- uniform goals over the goal bounds.

Plus the replay ring the off-policy learners sample from and a
histogram entropy estimator for comparing how spread-out each mode's
emitted goals are.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .approx import (
    NetGrads,
    NetParams,
    OptimState,
    backward,
    backward_cached,
    forward,
    forward_cached,
    init_net,
    init_optim,
    opt_step,
    soft_update,
)


class EmptyBatch(ValueError):
    pass


class EmptyRollout(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    """Training produced a NaN or infinite loss; the run must abort."""


@dataclass
class TrainStats:
    critic_loss: float = 0.0
    actor_loss: Optional[float] = None
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    loss: float = 0.0
    loss_final: float = 0.0


# ----------------------------------------------------------------------
# Replay buffer
# ----------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring of (obs, action, reward, next_obs, done)."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int,
                 dtype=np.float64):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.act = np.zeros((capacity, act_dim), dtype=dtype)
        self.rew = np.zeros(capacity, dtype=dtype)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.done = np.zeros(capacity, dtype=dtype)
        self.count = 0

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def push(self, obs, act, rew, next_obs, done) -> None:
        i = self.count % self.capacity
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.count += 1

    def sample(self, n: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        size = len(self)
        if size == 0:
            raise EmptyBatch("replay buffer is empty")
        idx = rng.integers(0, size, size=n)
        return {
            "obs": self.obs[idx],
            "act": self.act[idx],
            "rew": self.rew[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
        }


# ----------------------------------------------------------------------
# Off-policy learner (deterministic actor, twin critics)
# ----------------------------------------------------------------------

HIDDEN = (64, 64)


@dataclass
class OffPolicyLearner:
    actor: NetParams
    critic1: NetParams
    critic2: NetParams
    actor_t: NetParams
    critic1_t: NetParams
    critic2_t: NetParams
    actor_opt: OptimState
    critic1_opt: OptimState
    critic2_opt: OptimState
    replay: ReplayBuffer
    bound: float
    noise_std: float
    target_std: float
    target_clip: float
    policy_delay: int = 2
    tau: float = 0.005
    gamma: float = 0.99
    update_idx: int = 0
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )


def make_off_policy(
    obs_dim: int,
    act_dim: int,
    bound: float,
    rng: np.random.Generator,
    capacity: int = 200_000,
    lr: float = 1e-3,
    gamma: float = 0.99,
    noise_rel: float = 0.2,
    target_rel: float = 0.2,
    clip_rel: float = 0.5,
    dtype=np.float64,
) -> OffPolicyLearner:
    actor = init_net([obs_dim, *HIDDEN, act_dim], rng, out_act="tanh",
                     out_scale=bound, dtype=dtype)
    critic1 = init_net([obs_dim + act_dim, *HIDDEN, 1], rng, dtype=dtype)
    critic2 = init_net([obs_dim + act_dim, *HIDDEN, 1], rng, dtype=dtype)
    return OffPolicyLearner(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        actor_t=actor.copy(),
        critic1_t=critic1.copy(),
        critic2_t=critic2.copy(),
        actor_opt=init_optim(actor, lr),
        critic1_opt=init_optim(critic1, lr),
        critic2_opt=init_optim(critic2, lr),
        replay=ReplayBuffer(capacity, obs_dim, act_dim, dtype=dtype),
        bound=bound,
        noise_std=noise_rel * bound,
        target_std=target_rel * bound,
        target_clip=clip_rel * bound,
        gamma=gamma,
        rng=rng,
    )


def off_select(
    learner: OffPolicyLearner,
    x: np.ndarray,
    explore_noise: bool,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Actor output, optionally with Gaussian exploration noise, clamped."""
    out = forward(learner.actor, x)
    if explore_noise:
        gen = rng if rng is not None else learner.rng
        out = out + gen.normal(0.0, learner.noise_std, size=out.shape)
    return np.clip(out, -learner.bound, learner.bound)


def off_update(learner: OffPolicyLearner, batch: Dict[str, np.ndarray]) -> TrainStats:
    """One twin-critic regression step, with delayed actor/target updates."""
    n = batch["obs"].shape[0]
    if n == 0:
        raise EmptyBatch("batch is empty")
    obs, act = batch["obs"], batch["act"]
    rew, next_obs, done = batch["rew"], batch["next_obs"], batch["done"]

    noise = np.clip(
        learner.rng.normal(0.0, learner.target_std, size=act.shape),
        -learner.target_clip, learner.target_clip,
    )
    next_act = np.clip(forward(learner.actor_t, next_obs) + noise,
                       -learner.bound, learner.bound)
    next_in = np.concatenate([next_obs, next_act], axis=1)
    q_next = np.minimum(
        forward(learner.critic1_t, next_in)[:, 0],
        forward(learner.critic2_t, next_in)[:, 0],
    )
    target = rew + learner.gamma * (1.0 - done) * q_next

    critic_in = np.concatenate([obs, act], axis=1)
    critic_loss = 0.0
    for critic, opt in ((learner.critic1, learner.critic1_opt),
                        (learner.critic2, learner.critic2_opt)):
        q, cache = forward_cached(critic, critic_in)
        err = q[:, 0] - target
        critic_loss += float(np.mean(err * err))
        upstream = (2.0 * err / n)[:, None]
        grads, _ = backward_cached(critic, cache, upstream)
        opt_step(critic, opt, grads)
    if not np.isfinite(critic_loss):
        raise NonFiniteLoss(f"critic loss {critic_loss}")

    stats = TrainStats(critic_loss=critic_loss)
    learner.update_idx += 1
    if learner.update_idx % learner.policy_delay == 0:
        a, a_cache = forward_cached(learner.actor, obs)
        actor_in = np.concatenate([obs, a], axis=1)
        q, q_cache = forward_cached(learner.critic1, actor_in)
        stats.actor_loss = -float(np.mean(q[:, 0]))
        # Ascend Q through the critic input's action slice.
        _, din = backward_cached(learner.critic1, q_cache,
                                 np.full((n, 1), -1.0 / n))
        dq_da = din[:, obs.shape[1]:]
        grads, _ = backward_cached(learner.actor, a_cache, dq_da)
        opt_step(learner.actor, learner.actor_opt, grads)
        soft_update(learner.actor_t, learner.actor, learner.tau)
        soft_update(learner.critic1_t, learner.critic1, learner.tau)
        soft_update(learner.critic2_t, learner.critic2, learner.tau)
    return stats


# ----------------------------------------------------------------------
# On-policy learner (clipped surrogate, GAE)
# ----------------------------------------------------------------------

@dataclass
class RolloutBuffer:
    obs: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    logprobs: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    final_obs: Optional[np.ndarray] = None
    final_done: bool = True

    def __len__(self) -> int:
        return len(self.obs)

    def clear(self) -> None:
        self.obs.clear()
        self.actions.clear()
        self.logprobs.clear()
        self.rewards.clear()
        self.dones.clear()
        self.values.clear()
        self.final_obs = None
        self.final_done = True


@dataclass
class OnPolicyLearner:
    actor: NetParams                   # logits or Gaussian mean
    critic: NetParams
    actor_opt: OptimState
    critic_opt: OptimState
    head: str                          # 'categorical' | 'gaussian'
    bound: float = 1.0                 # gaussian: clamp for emitted samples
    log_std: Optional[np.ndarray] = None
    log_std_m: Optional[np.ndarray] = None
    log_std_v: Optional[np.ndarray] = None
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    epochs: int = 10
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    dual_clip: float = 3.0             # floor factor for negative advantages
    lr: float = 3e-4
    rollout: RolloutBuffer = field(default_factory=RolloutBuffer)


def make_on_policy(
    obs_dim: int,
    n_actions_or_dim: int,
    head: str,
    rng: np.random.Generator,
    bound: float = 1.0,
    lr: float = 3e-4,
    gamma: float = 0.99,
    entropy_coef: float = 0.01,
    init_log_std: float = 0.0,
    dtype=np.float64,
) -> OnPolicyLearner:
    actor = init_net([obs_dim, *HIDDEN, n_actions_or_dim], rng, dtype=dtype)
    critic = init_net([obs_dim, *HIDDEN, 1], rng, dtype=dtype)
    learner = OnPolicyLearner(
        actor=actor,
        critic=critic,
        actor_opt=init_optim(actor, lr),
        critic_opt=init_optim(critic, lr),
        head=head,
        bound=bound,
        gamma=gamma,
        entropy_coef=entropy_coef,
        lr=lr,
    )
    if head == "gaussian":
        learner.log_std = np.full(n_actions_or_dim, init_log_std)
        learner.log_std_m = np.zeros(n_actions_or_dim)
        learner.log_std_v = np.zeros(n_actions_or_dim)
    return learner


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _gaussian_logprob(a: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    var = np.exp(2.0 * log_std)
    return (-0.5 * ((a - mean) ** 2 / var)
            - log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=-1)


def on_select(learner: OnPolicyLearner, x: np.ndarray, rng: np.random.Generator):
    """Sample from the policy; returns (sample, exact logprob of the sample).

    Categorical heads return an integer index. Gaussian heads return the
    raw sample; callers clamp to bounds after the density is taken.
    """
    if learner.head == "categorical":
        logits = forward(learner.actor, x)
        logp = _log_softmax(logits)
        idx = int(rng.choice(len(logits), p=np.exp(logp)))
        return idx, float(logp[idx])
    mean = forward(learner.actor, x)
    std = np.exp(learner.log_std)
    sample = mean + std * rng.standard_normal(mean.shape)
    return sample, float(_gaussian_logprob(sample, mean, learner.log_std))


def value_of(learner: OnPolicyLearner, x: np.ndarray) -> float:
    return float(forward(learner.critic, x)[0])


def clipped_surrogate_term(ratio: float, advantage: float, clip_eps: float) -> float:
    """Per-sample clipped objective min(r*A, clip(r)*A)."""
    clipped = float(np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps))
    return min(ratio * advantage, clipped * advantage)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    final_value: float,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Generalized advantage estimates over one rollout."""
    n = len(rewards)
    adv = np.zeros(n)
    next_value = final_value
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        cont = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * cont * next_value - values[t]
        next_adv = delta + gamma * lam * cont * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


def on_update(
    learner: OnPolicyLearner,
    rollout: RolloutBuffer,
    loss_transform: Optional[Callable[[float], float]] = None,
) -> TrainStats:
    """Clipped-surrogate update over one rollout.

    The scalar loss is passed through loss_transform before backprop;
    the hook must be a linear scaling (its factor is read off as
    loss_transform(1.0)).
    """
    n = len(rollout)
    if n == 0:
        raise EmptyRollout("rollout is empty")
    scale = 1.0 if loss_transform is None else float(loss_transform(1.0))

    obs = np.stack(rollout.obs)
    old_logprobs = np.asarray(rollout.logprobs)
    rewards = np.asarray(rollout.rewards)
    dones = np.asarray(rollout.dones, dtype=float)
    values = np.asarray(rollout.values)
    if rollout.final_obs is not None and not rollout.final_done:
        final_value = value_of(learner, rollout.final_obs)
    else:
        final_value = 0.0
    adv = compute_gae(rewards, values, dones, final_value,
                      learner.gamma, learner.gae_lambda)
    returns = adv + values
    if n > 1 and adv.std() > 1e-8:
        adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
    else:
        adv_n = adv

    if learner.head == "categorical":
        actions = np.asarray(rollout.actions, dtype=int)
    else:
        actions = np.stack(rollout.actions)

    stats = TrainStats()
    for _ in range(learner.epochs):
        if learner.head == "categorical":
            logits = forward(learner.actor, obs)
            logp_all = _log_softmax(logits)
            probs = np.exp(logp_all)
            new_logprobs = logp_all[np.arange(n), actions]
            entropy = float(-(probs * logp_all).sum(axis=1).mean())
        else:
            mean = forward(learner.actor, obs)
            new_logprobs = _gaussian_logprob(actions, mean, learner.log_std)
            entropy = float(
                (learner.log_std + 0.5 * np.log(2.0 * np.pi * np.e)).sum()
            )
        # Rollouts mix data from all goal sources, so ratios can sit far
        # off-policy; bound the exponent and floor negative-advantage
        # terms (dual clip) to keep gradients finite.
        ratio = np.exp(np.clip(new_logprobs - old_logprobs, -20.0, 20.0))
        unclipped = ratio * adv_n
        clipped = np.clip(ratio, 1.0 - learner.clip_eps,
                          1.0 + learner.clip_eps) * adv_n
        objective = np.minimum(unclipped, clipped)
        floored = (adv_n < 0.0) & (ratio > learner.dual_clip)
        objective = np.where(floored, learner.dual_clip * adv_n, objective)
        policy_loss = -float(objective.mean())
        # Gradient flows through ratio only where the unclipped branch
        # is the active minimum and the floor does not bind.
        active = ((unclipped <= clipped) & ~floored).astype(float)
        dlogp = -(active * ratio * adv_n) / n                # dL/dlogpi per sample

        vals = forward(learner.critic, obs)[:, 0]
        verr = vals - returns
        value_loss = float(np.mean(verr * verr))

        loss = policy_loss + learner.value_coef * value_loss \
            - learner.entropy_coef * entropy
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"on-policy loss {loss}")

        if learner.head == "categorical":
            dlogits = dlogp[:, None] * (
                np.eye(logits.shape[1])[actions] - probs
            )
            # Entropy term: dH/dlogits = -p*(logp + H_row); loss has -c*H.
            h_row = -(probs * logp_all).sum(axis=1, keepdims=True)
            dlogits += learner.entropy_coef / n * probs * (logp_all + h_row)
            a_grads, _ = backward(learner.actor, obs, dlogits * scale)
            opt_step(learner.actor, learner.actor_opt, a_grads)
        else:
            var = np.exp(2.0 * learner.log_std)
            dmean = dlogp[:, None] * (actions - mean) / var
            a_grads, _ = backward(learner.actor, obs, dmean * scale)
            opt_step(learner.actor, learner.actor_opt, a_grads)
            dls = (dlogp[:, None] * ((actions - mean) ** 2 / var - 1.0)).sum(axis=0)
            dls -= learner.entropy_coef * np.ones_like(learner.log_std)
            dls *= scale
            _adam_vector(learner, dls)

        c_grads, _ = backward(
            learner.critic, obs,
            (learner.value_coef * 2.0 * verr / n)[:, None] * scale,
        )
        opt_step(learner.critic, learner.critic_opt, c_grads)

        stats = TrainStats(policy_loss=policy_loss, value_loss=value_loss,
                           entropy=entropy, loss=loss,
                           loss_final=loss * scale)
    return stats


def _adam_vector(learner: OnPolicyLearner, grad: np.ndarray) -> None:
    # log_std shares the actor's step budget; plain Adam on a flat vector.
    o = learner.actor_opt
    m, v = learner.log_std_m, learner.log_std_v
    m *= o.beta1
    m += (1.0 - o.beta1) * grad
    v *= o.beta2
    v += (1.0 - o.beta2) * grad * grad
    bc1 = 1.0 - o.beta1 ** o.t
    bc2 = 1.0 - o.beta2 ** o.t
    learner.log_std -= o.step_size * (m / bc1) / (np.sqrt(v / bc2) + o.eps)
    np.clip(learner.log_std, -10.0, 2.0, out=learner.log_std)


# ----------------------------------------------------------------------
# Uniform random goal source
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RandomPolicy:
    low: np.ndarray
    high: np.ndarray


def random_goal(p: RandomPolicy, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform sample per dimension within the bounds."""
    return rng.uniform(p.low, p.high)


# ----------------------------------------------------------------------
# Histogram differential entropy of emitted goals
# ----------------------------------------------------------------------

ENTROPY_BINS = 16
MIN_ENTROPY_SAMPLES = 100


def entropy_estimate(goals, low, high, bins: int = ENTROPY_BINS) -> float:
    """Histogram estimate of the differential entropy over the goal box.

    A fixed bins-per-dimension grid; all mass in a single cell yields
    the estimator minimum log(cell volume).
    """
    goals = np.asarray(goals, dtype=float)
    if goals.ndim == 1:
        goals = goals[:, None]
    if goals.shape[0] < MIN_ENTROPY_SAMPLES:
        raise TooFewSamples(
            f"need >= {MIN_ENTROPY_SAMPLES} samples, got {goals.shape[0]}"
        )
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    dim = goals.shape[1]
    clipped = np.clip(goals, low, high)
    widths = (high - low) / bins
    idx = np.minimum(((clipped - low) / widths).astype(int), bins - 1)
    flat = np.zeros(bins ** dim, dtype=float)
    keys = np.ravel_multi_index(idx.T, (bins,) * dim)
    np.add.at(flat, keys, 1.0)
    p = flat / flat.sum()
    nz = p[p > 0]
    cell_volume = float(np.prod(widths))
    return float(-(nz * np.log(nz)).sum() + np.log(cell_volume))
