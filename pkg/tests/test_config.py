"""Tests for the flat key=value configuration layer."""

import pytest

from vecsched.config import (
    ConfigError,
    apply_overrides,
    default_config,
    parse_config,
    serialize_config,
    validate_config,
)


class TestDefaults:
    def test_defaults_mirror_parameter_table(self):
        cfg = default_config()
        assert cfg.scenario.num_subchannels == 4
        assert cfg.scenario.num_processors == 3
        assert cfg.scenario.uplink_bandwidth_hz == (3e6, 6e6)
        assert cfg.scenario.noise_mw == 1e-5
        assert cfg.scenario.dag.n == 20
        assert cfg.scenario.dag.density == 0.8
        assert cfg.scenario.dag.fat == 0.5
        assert cfg.scenario.dag.ccr == 0.5
        assert cfg.scenario.dag.size_range_bits == (1.6e6, 3.2e6)
        assert cfg.scenario.dag.cycle_range == (5e7, 6e7)
        validate_config(cfg)


class TestParsing:
    def test_round_trip_is_identity(self):
        cfg = default_config()
        text = serialize_config(cfg)
        reparsed = parse_config(text)
        assert reparsed == cfg
        assert serialize_config(reparsed) == text

    def test_round_trip_after_overrides(self):
        cfg = apply_overrides(
            default_config(),
            ["dag.n=12", "ppo.lr=0.05", "train.no_gat=true", "dag.size_lo_kb=100"],
        )
        assert cfg.scenario.dag.n == 12
        assert cfg.ppo.learning_rate == 0.05
        assert cfg.no_gat is True
        assert cfg.scenario.dag.size_range_bits[0] == 100 * 8000.0
        assert parse_config(serialize_config(cfg)) == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# comment\n\nseed=9\n  # indented comment\n")
        assert cfg.seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config("scn.bogus=1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("just a line without equals\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("dag.n=twenty\n")
        with pytest.raises(ConfigError):
            parse_config("train.no_fed=perhaps\n")

    def test_validation_catches_bad_ranges(self):
        cfg = apply_overrides(default_config(), ["dag.density=0"])
        with pytest.raises(ConfigError):
            validate_config(cfg)


class TestDerivedConfigs:
    def test_policy_config_tracks_scenario(self):
        cfg = apply_overrides(default_config(), ["scn.subchannels=2", "scn.processors=5"])
        policy = cfg.policy_config()
        assert policy.num_channels == 2
        assert policy.num_processors == 5
        assert policy.num_actions == 11
        assert policy.feature_dim == 4 + 5 + 2

    def test_no_gat_flag_propagates(self):
        cfg = apply_overrides(default_config(), ["train.no_gat=true"])
        assert cfg.policy_config().use_gat is False

    def test_fed_config_regions_differ(self):
        fed = default_config().fed_config()
        pairs = {(d.dag.density, d.dag.fat) for d in fed.server_distributions}
        assert len(pairs) == 3
