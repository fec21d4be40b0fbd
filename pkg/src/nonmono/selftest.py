"""Quick invariant battery behind the `selftest` subcommand."""

from __future__ import annotations

import numpy as np

from . import env as envmod
from .approx import backward, forward, init_net
from .baselines import make_homeostasis, homeostasis_step, value_promise
from .core import ModeId, TopHorizonStats, default_config, validate_config
from .hierarchy import goal_transition, horizon_close, modify_loss, modify_reward


def _check(name: str, ok: bool, results: list) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}")
    results.append(ok)


def run_all() -> bool:
    results: list = []

    _check("mode round-trip",
           all(ModeId.from_text(m.text) is m for m in ModeId), results)

    _check("reward modification arithmetic",
           abs(modify_reward(-100.0, 0.7) - (-170.0)) < 1e-12
           and abs(modify_reward(-40.0, -0.2) - (-32.0)) < 1e-12, results)

    _check("loss modification branches",
           abs(modify_loss(2.0, 0.5, ModeId.RANDOM) - 3.0) < 1e-12
           and abs(modify_loss(2.0, 0.5, ModeId.EXPLOIT) - 1.0) < 1e-12,
           results)

    stats = TopHorizonStats(r_m=-60.0, count_m=50, done_m=45)
    cfg = default_config()
    r_final, done_top, s_o_m = horizon_close(
        stats, cfg.mode_config, ModeId.ONPOLICY, s_o_ref=0.9)
    _check("horizon close boundary",
           abs(r_final - (-84.0)) < 1e-12 and done_top and
           abs(s_o_m - 0.9) < 1e-12 and stats.count_m == 0, results)

    _check("value promise telescoping",
           abs(value_promise(5.0, [1.0, 1.0], 3.0, 1.0)) < 1e-12, results)

    rng = np.random.default_rng(0)
    s, g, s2 = rng.normal(size=6), rng.normal(size=2), rng.normal(size=6)
    _check("goal transition formula",
           np.allclose(goal_transition(s, g, s2), s[:2] + g - s2[:2],
                       atol=1e-15), results)

    ok = True
    for i in range(5):
        net = init_net([4, 8, 3], np.random.default_rng(i),
                       hidden_act="tanh", out_act="tanh", out_scale=2.0)
        x = np.random.default_rng(100 + i).normal(size=4)
        up = np.random.default_rng(200 + i).normal(size=3)
        grads, _ = backward(net, x, up)
        h = 1e-5
        for li in range(len(net.weights)):
            w = net.weights[li]
            idx = (0, 0)
            orig = w[idx]
            w[idx] = orig + h
            up_v = float(forward(net, x) @ up)
            w[idx] = orig - h
            down_v = float(forward(net, x) @ up)
            w[idx] = orig
            fd = (up_v - down_v) / (2 * h)
            if abs(fd - grads.weights[li][idx]) > 1e-4 * max(1.0, abs(fd)):
                ok = False
    _check("gradient finite differences", ok, results)

    spec = envmod.push_task_spec()
    s1 = envmod.reset(spec, np.random.default_rng(7))
    s2 = envmod.reset(spec, np.random.default_rng(7))
    _check("environment reset determinism",
           np.array_equal(s1.agent_pos, s2.agent_pos), results)

    state = envmod.reset(spec, np.random.default_rng(3))
    solved = False
    for _ in range(spec.episode_len):
        to_target = spec.target_pos - state.agent_pos
        norm = np.linalg.norm(to_target)
        action = to_target / norm if norm > 1e-9 else np.zeros(2)
        state, _, _ = envmod.step(state, action, spec)
        if envmod.judge_success(state, spec.target_pos, spec):
            solved = True
    _check("push deceptive straight line fails", not solved, results)

    h = make_homeostasis(0.01)
    rng = np.random.default_rng(11)
    fired = 0
    n = 20_000
    for _ in range(n):
        switch, h = homeostasis_step(h, 1.0, rng)
        fired += int(switch)
    _check("homeostasis rate tracking", 0.005 <= fired / n <= 0.02, results)

    _check("default config validates",
           validate_config(default_config()) is not None, results)

    print(f"selftest: {sum(results)}/{len(results)} checks passed")
    return all(results)
