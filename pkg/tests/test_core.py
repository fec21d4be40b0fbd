"""Core types, validation, and the flat config file format."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nonmono.core import (
    AgentKind,
    AlphaOrderViolation,
    ConfigError,
    HorizonMismatch,
    ModeConfig,
    ModeId,
    MODES,
    RangeViolation,
    TaskName,
    TopHorizonStats,
    apply_keyvalues,
    config_to_keyvalues,
    config_to_text,
    default_config,
    load_config_file,
    parse_config_text,
    validate_config,
)
from dataclasses import replace


def cfg_with_alpha(random, onpolicy, exploit):
    cfg = default_config()
    mc = cfg.mode_config
    return replace(cfg, mode_config=ModeConfig(
        alpha={ModeId.RANDOM: random, ModeId.ONPOLICY: onpolicy,
               ModeId.EXPLOIT: exploit},
        s_o_ref=dict(mc.s_o_ref),
        starting_mode_steps=mc.starting_mode_steps,
        pretrain_steps=mc.pretrain_steps,
    ))


class TestModeId:
    def test_three_variants(self):
        assert len(list(ModeId)) == 3

    @pytest.mark.parametrize("mode", list(ModeId))
    def test_text_round_trip(self, mode):
        assert ModeId.from_text(mode.text) is mode

    def test_unknown_text_rejected(self):
        with pytest.raises(ValueError):
            ModeId.from_text("greedy")

    def test_explore_split(self):
        assert ModeId.RANDOM.is_explore
        assert ModeId.ONPOLICY.is_explore
        assert not ModeId.EXPLOIT.is_explore


class TestValidation:
    def test_ordered_alpha_accepted(self):
        cfg = cfg_with_alpha(0.7, 0.4, 0.0)
        assert validate_config(cfg) is cfg

    def test_alpha_order_violation(self):
        with pytest.raises(AlphaOrderViolation):
            validate_config(cfg_with_alpha(0.1, 0.4, 0.0))

    def test_equality_allowed_at_second_comparison_only(self):
        validate_config(cfg_with_alpha(0.7, -0.2, -0.2))
        with pytest.raises(AlphaOrderViolation):
            validate_config(cfg_with_alpha(0.4, 0.4, 0.0))
        with pytest.raises(AlphaOrderViolation):
            validate_config(cfg_with_alpha(0.7, 0.1, 0.2))

    def test_horizon_divisibility(self):
        cfg = replace(default_config(), top_horizon=50, middle_horizon=10)
        validate_config(cfg)
        with pytest.raises(HorizonMismatch):
            validate_config(replace(cfg, middle_horizon=7))

    def test_range_checks(self):
        cfg = default_config()
        with pytest.raises(RangeViolation):
            validate_config(replace(cfg, seed=-1))
        with pytest.raises(RangeViolation):
            validate_config(replace(cfg, total_steps=0))
        with pytest.raises(RangeViolation):
            validate_config(replace(cfg, eval_interval=0))

    def test_unreachable_so_ref_is_legal(self):
        # Values above 1 mean "never terminate early" and must validate.
        cfg = default_config()
        mc = cfg.mode_config
        cfg = replace(cfg, mode_config=ModeConfig(
            alpha=dict(mc.alpha),
            s_o_ref={m: 1.1 for m in MODES},
            starting_mode_steps=mc.starting_mode_steps,
            pretrain_steps=mc.pretrain_steps,
        ))
        validate_config(cfg)

    def test_negative_so_ref_rejected(self):
        cfg = default_config()
        mc = cfg.mode_config
        cfg = replace(cfg, mode_config=ModeConfig(
            alpha=dict(mc.alpha),
            s_o_ref={ModeId.RANDOM: -0.1, ModeId.ONPOLICY: 0.5,
                     ModeId.EXPLOIT: 0.5},
            starting_mode_steps=mc.starting_mode_steps,
            pretrain_steps=mc.pretrain_steps,
        ))
        with pytest.raises(RangeViolation):
            validate_config(cfg)

    def test_ref_agent_rho_range(self):
        cfg = default_config(TaskName.PUSH, AgentKind.REF_UNIFORM)
        with pytest.raises(RangeViolation):
            validate_config(replace(cfg, baseline_rho=0.0))


class TestTopHorizonStats:
    def test_record_and_ratio(self):
        stats = TopHorizonStats()
        for i in range(10):
            stats.record(-1.0, success=i < 4)
        assert stats.count_m == 10
        assert stats.done_m == 4
        assert stats.s_o_m == pytest.approx(0.4)
        assert stats.done_m <= stats.count_m

    def test_reset(self):
        stats = TopHorizonStats(r_m=-3.0, count_m=5, done_m=2)
        stats.reset()
        assert (stats.r_m, stats.count_m, stats.done_m) == (0.0, 0, 0)


class TestConfigFile:
    def test_round_trip_identity(self, tmp_path):
        cfg = validate_config(default_config(TaskName.FALL, AgentKind.AUTO, 3))
        path = tmp_path / "run.cfg"
        path.write_text(config_to_text(cfg))
        loaded = load_config_file(str(path))
        assert loaded == cfg
        assert validate_config(loaded) == cfg

    def test_comments_and_blank_lines(self):
        raw = parse_config_text(
            "# a comment\n\nseed=9   # trailing comment\ntotal_steps=1000\n"
        )
        assert raw == {"seed": "9", "total_steps": "1000"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("learning_rate=0.1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("just some words\n")

    def test_overlay_overrides(self):
        cfg = default_config()
        cfg2 = apply_keyvalues(cfg, {"seed": "42", "reward_mod": "false"})
        assert cfg2.seed == 42
        assert not cfg2.reward_mod_enabled
        assert cfg2.total_steps == cfg.total_steps

    def test_all_keys_present_in_echo(self):
        from nonmono.core import CONFIG_KEYS

        echo = config_to_keyvalues(default_config())
        assert set(echo) == set(CONFIG_KEYS)

    @given(seed=st.integers(0, 2**31 - 1),
           steps=st.integers(1, 10**7),
           rmod=st.booleans(), lmod=st.booleans())
    def test_round_trip_property(self, seed, steps, rmod, lmod):
        cfg = replace(default_config(), seed=seed, total_steps=steps,
                      reward_mod_enabled=rmod, loss_mod_enabled=lmod)
        raw = parse_config_text(config_to_text(cfg))
        assert apply_keyvalues(default_config(), raw) == cfg
