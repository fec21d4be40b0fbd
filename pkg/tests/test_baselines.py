"""Value promise discrepancy, homeostasis, and the comparison agents."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonmono.baselines import (
    HomeostasisState,
    LengthMismatch,
    RefConfig,
    ValuePromiseWindow,
    homeostasis_step,
    make_homeostasis,
    monolithic_run,
    reference_run,
    value_promise,
)
from nonmono.core import (
    AgentKind,
    ModeConfig,
    ModeId,
    RangeViolation,
    TaskName,
    default_config,
    validate_config,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def quick_cfg(agent, total_steps=3000, pretrain=500, starting=0, seed=0,
              rho=0.01):
    cfg = default_config(TaskName.PUSH, agent, seed)
    mc = cfg.mode_config
    return replace(
        cfg,
        total_steps=total_steps,
        eval_interval=2000,
        eval_episodes=2,
        baseline_rho=rho,
        mode_config=ModeConfig(
            alpha=dict(mc.alpha),
            s_o_ref=dict(mc.s_o_ref),
            starting_mode_steps=starting,
            pretrain_steps=pretrain,
        ),
    )


class TestValuePromise:
    def test_exact_telescoping(self):
        assert value_promise(5.0, [1.0, 1.0], 3.0, 1.0) == pytest.approx(
            0.0, abs=1e-12)

    def test_zero_rewards(self):
        assert value_promise(5.0, [0.0, 0.0], 0.0, 0.9) == pytest.approx(
            5.0, abs=1e-12)

    def test_most_recent_reward_first(self):
        # rewards[0] is R_t (weight gamma^0), rewards[1] is R_{t-1}.
        got = value_promise(0.0, [1.0, 10.0], 0.0, 0.5)
        assert got == pytest.approx(abs(-(1.0 + 0.5 * 10.0)), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            value_promise(1.0, [1.0, 2.0], 0.0, 0.9, k=3)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_matches_bruteforce_oracle(self, seed):
        g = np.random.default_rng(seed)
        k = int(g.integers(1, 12))
        v_then, v_now = g.normal(size=2) * 10
        gamma = float(g.uniform(0.1, 1.0))
        rewards = list(g.normal(size=k) * 5)
        acc = 0.0
        for i in range(k):
            acc += gamma ** i * rewards[i]
        want = abs(v_then - acc - gamma ** k * v_now)
        assert value_promise(v_then, rewards, v_now, gamma) == pytest.approx(
            want, abs=1e-12)

    def test_constant_shift_invariance_at_gamma_one(self):
        rewards = [0.3, -0.7, 1.1]
        base = value_promise(2.0, rewards, 1.0, 1.0)
        shifted = value_promise(2.0 + 5.0, rewards, 1.0 + 5.0, 1.0)
        assert base == pytest.approx(shifted, abs=1e-12)


class TestValuePromiseWindow:
    def test_fills_and_computes(self):
        win = ValuePromiseWindow(k=3, gamma=1.0)
        values = [10.0, 9.0, 8.0, 7.0]
        rewards = [1.0, 1.0, 1.0, 1.0]
        win.push(rewards[0], values[0])
        assert not win.full
        for r, v in zip(rewards[1:], values[1:]):
            win.push(r, v)
        assert win.full
        # v_then = 10, discounted sum = 3, v_now = 7 -> |10 - 3 - 7| = 0
        assert win.discrepancy() == pytest.approx(0.0, abs=1e-12)

    def test_not_full_raises(self):
        win = ValuePromiseWindow(k=5, gamma=0.9)
        win.push(1.0, 1.0)
        with pytest.raises(LengthMismatch):
            win.discrepancy()


class TestHomeostasis:
    def test_zero_signal_never_fires(self):
        h = make_homeostasis(0.01)
        g = rng(1)
        for _ in range(5000):
            switch, h = homeostasis_step(h, 0.0, g)
            assert not switch

    def test_negative_signal_rejected(self):
        h = make_homeostasis(0.01)
        with pytest.raises(ValueError):
            homeostasis_step(h, -1.0, rng(2))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_rate_tracking_constant_signal(self, seed):
        h = make_homeostasis(0.01)
        g = rng(seed)
        fired = 0
        n = 100_000
        for _ in range(n):
            switch, h = homeostasis_step(h, 1.0, g)
            fired += int(switch)
        assert 0.005 <= fired / n <= 0.02

    def test_rate_tracking_noisy_signal(self):
        h = make_homeostasis(0.01)
        g = rng(7)
        sig = rng(8)
        fired = 0
        n = 100_000
        for _ in range(n):
            switch, h = homeostasis_step(h, float(sig.uniform(0.5, 1.5)), g)
            fired += int(switch)
        assert 0.005 <= fired / n <= 0.02

    def test_scale_invariance(self):
        # Doubling every signal leaves the switch sequence unchanged
        # under paired randomness.
        n = 20_000
        sig = rng(9).uniform(0.5, 1.5, size=n)
        seqs = []
        for scale in (1.0, 2.0):
            h = make_homeostasis(0.01)
            g = rng(10)
            fired = []
            for s in sig:
                switch, h = homeostasis_step(h, float(s * scale), g)
                fired.append(switch)
            seqs.append(fired)
        assert seqs[0] == seqs[1]

    def test_multiplier_stays_positive(self):
        h = make_homeostasis(0.05)
        g = rng(11)
        for _ in range(10_000):
            _, h = homeostasis_step(h, float(g.uniform(0, 2)), g)
            assert h.multiplier > 0


class TestReferenceRun:
    def test_rho_zero_rejected(self):
        cfg = quick_cfg(AgentKind.REF_UNIFORM, rho=0.0)
        with pytest.raises(RangeViolation):
            validate_config(cfg)

    def test_never_fire_matches_monolithic(self):
        cfg_ref = quick_cfg(AgentKind.REF_UNIFORM, total_steps=2500)
        ref_log = reference_run(cfg_ref, trigger_fn=lambda sig, g: False)
        cfg_mono = replace(quick_cfg(AgentKind.MONOLITHIC, total_steps=2500))
        mono_log = monolithic_run(cfg_mono)
        assert ref_log.windows == mono_log.windows
        assert [e.s_e for e in ref_log.evals] == [e.s_e for e in mono_log.evals]
        assert ref_log.counters.total_steps == mono_log.counters.total_steps

    def test_fire_every_step_saturates(self):
        cfg = quick_cfg(AgentKind.REF_UNIFORM, total_steps=2500, pretrain=500)
        log = reference_run(cfg, trigger_fn=lambda sig, g: True)
        explore = (log.counters.total_steps[ModeId.RANDOM]
                   + log.counters.total_steps[ModeId.ONPOLICY])
        assert explore == 2500 - 500
        assert log.counters.total_steps[ModeId.EXPLOIT] == 0

    def test_bursts_have_exact_duration(self):
        cfg = quick_cfg(AgentKind.REF_UNIFORM, total_steps=6000, rho=0.02)
        log = reference_run(cfg)
        assert len(log.burst_lengths) >= 1
        assert all(b == 100 for b in log.burst_lengths)

    def test_onpolicy_flavour_counts_its_mode(self):
        cfg = quick_cfg(AgentKind.REF_ONPOLICY, total_steps=2500)
        log = reference_run(cfg, trigger_fn=lambda sig, g: True)
        assert log.counters.total_steps[ModeId.ONPOLICY] == 2000
        assert log.counters.total_steps[ModeId.RANDOM] == 0

    def test_starting_mode_counts_random(self):
        cfg = quick_cfg(AgentKind.REF_UNIFORM, total_steps=2000, pretrain=500,
                        starting=500)
        log = reference_run(cfg, trigger_fn=lambda sig, g: False)
        assert log.counters.total_steps[ModeId.RANDOM] == 500
        assert log.counters.total_steps[ModeId.EXPLOIT] == 1000


class TestMonolithicRun:
    def test_all_steps_exploit(self):
        cfg = quick_cfg(AgentKind.MONOLITHIC, total_steps=2000, pretrain=500)
        log = monolithic_run(cfg)
        assert log.counters.total_steps[ModeId.EXPLOIT] == 1500
        assert log.counters.total_steps[ModeId.RANDOM] == 0
        assert log.counters.total_steps[ModeId.ONPOLICY] == 0

    def test_bitwise_deterministic(self):
        cfg = quick_cfg(AgentKind.MONOLITHIC, total_steps=2000, seed=5)
        a = monolithic_run(cfg)
        b = monolithic_run(cfg)
        assert a.windows == b.windows
        for name in a.checkpoints:
            assert np.array_equal(a.checkpoints[name].data,
                                  b.checkpoints[name].data)
