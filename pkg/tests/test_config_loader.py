"""
Tests for the key = value configuration loader.
"""
import os
import sys

import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from models.errors import ConfigError
from models.sgp_config import SgpConfig, parse_eta_schedule
from services.config_loader import (config_to_text, load_config, parse_config_text,
                                    write_config_snapshot)


class TestParseConfigText:
    """Parsing, aliases and validation."""

    def test_empty_text_gives_defaults(self):
        config, spelled = parse_config_text("")
        assert config == SgpConfig()
        assert spelled == {}

    def test_comments_and_blank_lines(self):
        config, _ = parse_config_text("# ablation\n\nretrain = true   # fresh student\niterations = 4\n")
        assert config.retrain is True
        assert config.iterations == 4

    def test_aliases_map_to_canonical_keys(self):
        config, spelled = parse_config_text("T = 3\nconfidence = 0.99\nc_bar = 0.05\nlambda = 2.0\n")
        assert config.iterations == 3
        assert config.ransac.confidence == 0.99
        assert config.inlier_threshold == 0.05
        assert config.lambda_triplet == 2.0
        assert spelled['ransac_confidence'] == 'confidence'

    def test_invalid_value_names_the_key_as_written(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("confidence = 1.5\n")
        assert info.value.key == 'confidence'
        assert "confidence" in str(info.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour: unknown configuration key"):
            parse_config_text("colour = blue\n")

    def test_repeated_key_even_through_alias(self):
        with pytest.raises(ConfigError, match="more than once"):
            parse_config_text("iterations = 2\nT = 3\n")

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="run.cfg:2"):
            parse_config_text("seed = 1\nretrain\n", source="run.cfg")

    @pytest.mark.parametrize("text, key", [
        ("retrain = maybe", "retrain"),
        ("iterations = two", "iterations"),
        ("iterations = 0", "iterations"),
        ("teacher = oracle", "teacher"),
        ("ratio_test = 1.0", "ratio_test"),
        ("eta_schedule = 2-3:0.3", "eta_schedule"),
        ("eta_schedule = 1-2:1.5", "eta_schedule"),
        ("m_n = 2.5", "m_n"),
    ])
    def test_invalid_values(self, text, key):
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        assert info.value.key == key

    def test_auto_values(self):
        config, _ = parse_config_text("fpfh_radius = auto\nicp_threshold = 0.1\nvoxel_size = 0.04\n")
        assert config.fpfh_radius is None
        assert config.effective_fpfh_radius == pytest.approx(0.1)
        assert config.effective_icp_threshold == 0.1

    def test_hidden_dims_list(self):
        config, _ = parse_config_text("hidden_dims = 32, 16\nembedding_dim = 8\n")
        assert config.layer_dims == [33, 32, 16, 8]


class TestEtaSchedule:
    """Verifier threshold schedule."""

    def test_default_schedule(self):
        config = SgpConfig()
        assert [config.eta_for(t) for t in (1, 2, 3, 10, 12)] == [0.30, 0.30, 0.10, 0.10, 0.10]

    def test_open_ended_and_single_iteration_forms(self):
        assert parse_eta_schedule("1:0.5, 2-*:0.2") == ((1, 1, 0.5), (2, None, 0.2))

    def test_iterations_start_at_one(self):
        with pytest.raises(ValueError):
            SgpConfig().eta_for(0)


class TestLoadConfig:
    """File loading, overrides and snapshots."""

    def test_defaults_without_file(self):
        assert load_config() == SgpConfig()

    def test_overrides_replace_file_values(self, tmp_path):
        path = tmp_path / "sgp.cfg"
        path.write_text("seed = 3\nworkers = 2\n")
        config = load_config(str(path), seed=11, workers=None)
        assert config.seed == 11
        assert config.workers == 2
        assert config.ransac.seed == 11

    def test_unknown_override(self):
        with pytest.raises(ConfigError, match="unknown"):
            load_config(colour='blue')

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_config(str(tmp_path / "absent.cfg"))

    def test_snapshot_round_trip(self, tmp_path):
        config = SgpConfig(iterations=4, retrain=True, eta_schedule=((1, 1, 0.25), (2, None, 0.125)),
                           hidden_dims=(24,), fpfh_radius=0.11, learning_rate=0.1 + 0.2, seed=7)
        path = str(tmp_path / "config.txt")
        write_config_snapshot(config, path)
        assert load_config(path) == config
        assert not os.path.exists(path + ".tmp")

    def test_snapshot_lists_every_key(self):
        text = config_to_text(SgpConfig())
        assert "icp_threshold = auto" in text
        assert "eta_schedule = 1-2:0.3, 3-10:0.1" in text
        assert "retrain = false" in text
