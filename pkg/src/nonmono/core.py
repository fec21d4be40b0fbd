"""Shared domain types, run configuration, and mode counters.

Everything else in the package builds on the types here: the three
behaviour modes, the per-mode guidance parameters, the per-horizon
accumulators kept by the top level, and the run configuration record
with its flat key=value file format.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Tuple

import numpy as np


class ConfigError(ValueError):
    """Base class for configuration validation and parsing failures."""


class AlphaOrderViolation(ConfigError):
    """Per-mode reward coefficients do not respect the required ordering."""


class HorizonMismatch(ConfigError):
    """Middle horizon does not divide the top horizon."""


class RangeViolation(ConfigError):
    """A scalar field is outside its permitted range."""


class ModeId(enum.Enum):
    """The option chosen by the top policy: which middle-level policy runs.

    RANDOM samples goals uniformly, ONPOLICY samples from the stochastic
    goal learner, EXPLOIT uses the deterministic goal learner.
    """

    RANDOM = "random"
    ONPOLICY = "onpolicy"
    EXPLOIT = "exploit"

    @property
    def text(self) -> str:
        return self.value

    @classmethod
    def from_text(cls, text: str) -> "ModeId":
        for mode in cls:
            if mode.value == text:
                return mode
        raise ValueError(f"unknown mode {text!r}")

    @property
    def is_explore(self) -> bool:
        return self is not ModeId.EXPLOIT


MODES: Tuple[ModeId, ...] = (ModeId.RANDOM, ModeId.ONPOLICY, ModeId.EXPLOIT)


class TaskName(enum.Enum):
    PUSH = "push"
    FALL = "fall"


class AgentKind(enum.Enum):
    AUTO = "auto"
    REF_UNIFORM = "ref-uniform"
    REF_ONPOLICY = "ref-onpolicy"
    MONOLITHIC = "monolithic"


@dataclass(frozen=True)
class ModeConfig:
    """Per-mode guidance parameters.

    alpha scales each horizon's summed reward (reward = (1+alpha)*sum),
    so a larger alpha makes a mode's horizons look worse under the
    task's negative rewards. s_o_ref is the per-horizon success-ratio
    reference used for early top-level termination; values above 1 are
    legal and mean the threshold can never be crossed.
    """

    alpha: Dict[ModeId, float]
    s_o_ref: Dict[ModeId, float]
    starting_mode_steps: int
    pretrain_steps: int


@dataclass
class TopHorizonStats:
    """Accumulators for one top-level horizon."""

    r_m: float = 0.0
    count_m: int = 0
    done_m: int = 0

    @property
    def s_o_m(self) -> float:
        return self.done_m / self.count_m if self.count_m > 0 else 0.0

    def record(self, reward: float, success: bool) -> None:
        self.r_m += reward
        self.count_m += 1
        if success:
            self.done_m += 1

    def reset(self) -> None:
        self.r_m = 0.0
        self.count_m = 0
        self.done_m = 0


@dataclass(frozen=True)
class EvalReport:
    """Outcome of one noise-free evaluation of the exploit hierarchy."""

    s_e: float
    episodes: int
    step_of_eval: int


@dataclass
class ModeCounters:
    """Environment steps and middle-horizon decisions attributed per mode.

    Only steps after the pretrain phase are counted; their sum equals
    the number of post-pretrain environment steps exactly.
    """

    total_steps: Dict[ModeId, int] = field(
        default_factory=lambda: {m: 0 for m in MODES}
    )
    decisions: Dict[ModeId, int] = field(
        default_factory=lambda: {m: 0 for m in MODES}
    )
    window_counts: List[Dict[ModeId, int]] = field(default_factory=list)

    def count_step(self, mode: ModeId) -> None:
        self.total_steps[mode] += 1

    def count_decision(self, mode: ModeId) -> None:
        self.decisions[mode] += 1

    def snapshot_window(self, counts: Dict[ModeId, int]) -> None:
        self.window_counts.append(dict(counts))


@dataclass(frozen=True)
class Transition:
    """One experience record.

    action_or_goal holds the low-level action for low-level records and
    the emitted goal for middle-level records. goal is the standing
    lower-level context at the time of the action; target_pos the
    episode context.
    """

    state: np.ndarray
    action_or_goal: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    goal: np.ndarray
    target_pos: np.ndarray


@dataclass(frozen=True)
class RunConfig:
    task: TaskName
    agent: AgentKind
    seed: int
    total_steps: int
    top_horizon: int
    middle_horizon: int
    eval_interval: int
    eval_episodes: int
    reward_mod_enabled: bool
    loss_mod_enabled: bool
    mode_config: ModeConfig
    baseline_rho: float


# Default guidance presets per task. Push penalizes both explore modes,
# random more than on-policy; Fall keeps on-policy level with exploit
# (equality is legal at the second comparison only) and instead gates
# random exploration with a stricter success-ratio reference.
_PUSH_ALPHA = {ModeId.RANDOM: 0.7, ModeId.ONPOLICY: 0.4, ModeId.EXPLOIT: 0.0}
_FALL_ALPHA = {ModeId.RANDOM: 0.7, ModeId.ONPOLICY: -0.2, ModeId.EXPLOIT: -0.2}
_PUSH_SO = {ModeId.RANDOM: 0.6, ModeId.ONPOLICY: 0.6, ModeId.EXPLOIT: 0.6}
_FALL_SO = {ModeId.RANDOM: 0.9, ModeId.ONPOLICY: 0.6, ModeId.EXPLOIT: 0.6}

_DEFAULT_RHO = {
    (TaskName.PUSH, AgentKind.REF_UNIFORM): 0.0001,
    (TaskName.PUSH, AgentKind.REF_ONPOLICY): 0.01,
    (TaskName.FALL, AgentKind.REF_UNIFORM): 0.001,
    (TaskName.FALL, AgentKind.REF_ONPOLICY): 0.001,
}


def default_config(
    task: TaskName = TaskName.PUSH,
    agent: AgentKind = AgentKind.AUTO,
    seed: int = 0,
) -> RunConfig:
    """Desk-scale defaults for one run of the given task and agent."""
    alpha = dict(_PUSH_ALPHA if task is TaskName.PUSH else _FALL_ALPHA)
    s_o_ref = dict(_PUSH_SO if task is TaskName.PUSH else _FALL_SO)
    return RunConfig(
        task=task,
        agent=agent,
        seed=seed,
        total_steps=200_000,
        top_horizon=50,
        middle_horizon=10,
        eval_interval=5_000,
        eval_episodes=10,
        reward_mod_enabled=True,
        loss_mod_enabled=True,
        mode_config=ModeConfig(
            alpha=alpha,
            s_o_ref=s_o_ref,
            starting_mode_steps=2_000,
            pretrain_steps=5_000,
        ),
        baseline_rho=_DEFAULT_RHO.get((task, agent), 0.01),
    )


def validate_config(cfg: RunConfig) -> RunConfig:
    """Return cfg unchanged iff every type invariant holds.

    Raises the error naming the first violated invariant otherwise.
    """
    mc = cfg.mode_config
    a_r, a_o, a_e = (mc.alpha[m] for m in MODES)
    if not (a_r > a_o):
        raise AlphaOrderViolation(
            f"alpha[random]={a_r} must be strictly greater than alpha[onpolicy]={a_o}"
        )
    if not (a_o >= a_e):
        raise AlphaOrderViolation(
            f"alpha[onpolicy]={a_o} must be >= alpha[exploit]={a_e}"
        )
    for mode in MODES:
        ref = mc.s_o_ref[mode]
        if not np.isfinite(ref) or ref < 0.0:
            raise RangeViolation(f"s_o_ref[{mode.text}]={ref} must be finite and >= 0")
    if mc.starting_mode_steps < 0 or mc.pretrain_steps < 0:
        raise RangeViolation("phase step counts must be nonnegative")
    if cfg.seed < 0:
        raise RangeViolation("seed must be nonnegative")
    if cfg.total_steps <= 0:
        raise RangeViolation("total_steps must be positive")
    if cfg.top_horizon <= 0 or cfg.middle_horizon <= 0:
        raise RangeViolation("horizons must be positive")
    if cfg.top_horizon % cfg.middle_horizon != 0:
        raise HorizonMismatch(
            f"middle_horizon={cfg.middle_horizon} must divide top_horizon={cfg.top_horizon}"
        )
    if cfg.eval_interval <= 0:
        raise RangeViolation("eval_interval must be positive")
    if cfg.eval_episodes <= 0:
        raise RangeViolation("eval_episodes must be positive")
    if cfg.agent in (AgentKind.REF_UNIFORM, AgentKind.REF_ONPOLICY):
        if not (0.0 < cfg.baseline_rho < 1.0):
            raise RangeViolation(f"rho={cfg.baseline_rho} must lie in (0,1)")
    return cfg


# ----------------------------------------------------------------------
# Flat key=value config file format. One key per line, '#' comments.
# ----------------------------------------------------------------------

CONFIG_KEYS = (
    "task", "agent", "seed", "total_steps", "top_horizon", "middle_horizon",
    "eval_interval", "eval_episodes", "reward_mod", "loss_mod",
    "alpha_random", "alpha_onpolicy", "alpha_exploit",
    "so_ref_random", "so_ref_onpolicy", "so_ref_exploit",
    "starting_mode_steps", "pretrain_steps", "rho",
)


def config_to_keyvalues(cfg: RunConfig) -> Dict[str, str]:
    """Render a RunConfig as the flat key->text mapping of the file format."""
    mc = cfg.mode_config
    return {
        "task": cfg.task.value,
        "agent": cfg.agent.value,
        "seed": str(cfg.seed),
        "total_steps": str(cfg.total_steps),
        "top_horizon": str(cfg.top_horizon),
        "middle_horizon": str(cfg.middle_horizon),
        "eval_interval": str(cfg.eval_interval),
        "eval_episodes": str(cfg.eval_episodes),
        "reward_mod": "true" if cfg.reward_mod_enabled else "false",
        "loss_mod": "true" if cfg.loss_mod_enabled else "false",
        "alpha_random": repr(mc.alpha[ModeId.RANDOM]),
        "alpha_onpolicy": repr(mc.alpha[ModeId.ONPOLICY]),
        "alpha_exploit": repr(mc.alpha[ModeId.EXPLOIT]),
        "so_ref_random": repr(mc.s_o_ref[ModeId.RANDOM]),
        "so_ref_onpolicy": repr(mc.s_o_ref[ModeId.ONPOLICY]),
        "so_ref_exploit": repr(mc.s_o_ref[ModeId.EXPLOIT]),
        "starting_mode_steps": str(mc.starting_mode_steps),
        "pretrain_steps": str(mc.pretrain_steps),
        "rho": repr(cfg.baseline_rho),
    }


def config_to_text(cfg: RunConfig) -> str:
    lines = [f"{key}={value}" for key, value in config_to_keyvalues(cfg).items()]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat key=value text into a raw string mapping."""
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value.strip()
    return raw


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {value!r}")


def apply_keyvalues(cfg: RunConfig, raw: Dict[str, str]) -> RunConfig:
    """Overlay raw key=value entries onto cfg, returning a new RunConfig."""
    try:
        if "task" in raw or "agent" in raw:
            task = TaskName(raw["task"]) if "task" in raw else cfg.task
            agent = AgentKind(raw["agent"]) if "agent" in raw else cfg.agent
            if task is not cfg.task or agent is not cfg.agent:
                cfg = default_config(task, agent, cfg.seed)
        mc = cfg.mode_config
        alpha = dict(mc.alpha)
        s_o_ref = dict(mc.s_o_ref)
        for key, mode in (("alpha_random", ModeId.RANDOM),
                          ("alpha_onpolicy", ModeId.ONPOLICY),
                          ("alpha_exploit", ModeId.EXPLOIT)):
            if key in raw:
                alpha[mode] = float(raw[key])
        for key, mode in (("so_ref_random", ModeId.RANDOM),
                          ("so_ref_onpolicy", ModeId.ONPOLICY),
                          ("so_ref_exploit", ModeId.EXPLOIT)):
            if key in raw:
                s_o_ref[mode] = float(raw[key])
        mc = ModeConfig(
            alpha=alpha,
            s_o_ref=s_o_ref,
            starting_mode_steps=int(raw.get("starting_mode_steps",
                                            mc.starting_mode_steps)),
            pretrain_steps=int(raw.get("pretrain_steps", mc.pretrain_steps)),
        )
        return replace(
            cfg,
            seed=int(raw.get("seed", cfg.seed)),
            total_steps=int(raw.get("total_steps", cfg.total_steps)),
            top_horizon=int(raw.get("top_horizon", cfg.top_horizon)),
            middle_horizon=int(raw.get("middle_horizon", cfg.middle_horizon)),
            eval_interval=int(raw.get("eval_interval", cfg.eval_interval)),
            eval_episodes=int(raw.get("eval_episodes", cfg.eval_episodes)),
            reward_mod_enabled=_parse_bool(raw["reward_mod"])
            if "reward_mod" in raw else cfg.reward_mod_enabled,
            loss_mod_enabled=_parse_bool(raw["loss_mod"])
            if "loss_mod" in raw else cfg.loss_mod_enabled,
            mode_config=mc,
            baseline_rho=float(raw.get("rho", cfg.baseline_rho)),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config_file(path: str, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    if base is None:
        task = TaskName(raw.get("task", "push"))
        agent = AgentKind(raw.get("agent", "auto"))
        base = default_config(task, agent)
    return apply_keyvalues(base, raw)


def iter_modes() -> Iterator[ModeId]:
    return iter(MODES)
