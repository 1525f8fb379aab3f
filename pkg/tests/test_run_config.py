"""Experiment configuration, presets and overrides"""

import json

import pytest

from errors import ConfigError
from run_config import apply_overrides, load_experiment_config

PRESETS = ["ptb-char", "ptb-word", "text8-word", "desk-char", "desk-synthetic"]


class TestOverrides:
    def test_nested_assignment(self):
        raw = apply_overrides({"trainer": {"lr": 0.003}}, ["trainer.lr=0.001", "model.hidden_size=64"])
        assert raw == {"trainer": {"lr": 0.001}, "model": {"hidden_size": 64}}

    def test_values_parse_as_json(self):
        raw = apply_overrides({}, ["model.dropout=[0.1, 0.2, 0.3]", "model.layer_norm=false", "name=run-a"])
        assert raw["model"] == {"dropout": [0.1, 0.2, 0.3], "layer_norm": False}
        assert raw["name"] == "run-a"

    @pytest.mark.parametrize("override", ["trainer.lr", "=3"])
    def test_malformed_override(self, override):
        with pytest.raises(ConfigError):
            apply_overrides({}, [override])

    def test_cannot_descend_into_scalar(self):
        with pytest.raises(ConfigError):
            apply_overrides({"name": "x"}, ["name.first=1"])


class TestLoading:
    @pytest.mark.parametrize("preset", PRESETS)
    def test_presets_validate(self, preset):
        config = load_experiment_config(preset)
        assert config.name == preset

    def test_char_preset_hyperparameters(self):
        config = load_experiment_config("ptb-char")
        assert (config.model.look_back, config.model.memory_span, config.model.temperature) == (10, 20, 10.0)
        assert config.trainer.lr == 0.003

    def test_override_and_seed(self):
        config = load_experiment_config("desk-char", ["trainer.lr=0.001"], seed=42)
        assert config.trainer.lr == 0.001
        assert config.seed == 42

    def test_defaults_without_file(self):
        config = load_experiment_config(None)
        assert config.model.mode == "char"
        assert config.trainer.unit == "stream"

    def test_unknown_key_rejected(self, write_text):
        path = write_text("c.json", json.dumps({"model": {"hidden": 5}}))
        with pytest.raises(ConfigError) as info:
            load_experiment_config(path)
        assert info.value.details["problems"][0]["loc"] == "model.hidden"

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_experiment_config("no-such-config")

    def test_invalid_json(self, write_text):
        with pytest.raises(ConfigError):
            load_experiment_config(write_text("c.json", "{oops"))

    def test_non_object(self, write_text):
        with pytest.raises(ConfigError):
            load_experiment_config(write_text("c.json", "[1, 2]"))

    def test_sentence_unit_needs_word_mode(self):
        with pytest.raises(ConfigError):
            load_experiment_config(None, ["trainer.unit=sentences"])

    def test_dropout_range(self):
        with pytest.raises(ConfigError):
            load_experiment_config(None, ["model.dropout=[0.1, 1.0, 0.0]"])

    def test_tied_readout_width(self):
        config = load_experiment_config("ptb-word")
        assert config.model.readout_size == config.model.embedding_size
