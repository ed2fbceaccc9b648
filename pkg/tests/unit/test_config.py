"""Tests for configuration loading."""

from pathlib import Path

import pytest

from cmml_cli.core.config import Settings, parse_overrides, split_variant
from cmml_cli.utils.exceptions import ConfigurationError

DEFAULT_YAML = Path(__file__).resolve().parents[2] / "configs" / "default.yaml"


class TestSettings:
    def test_defaults(self):
        settings = Settings.from_yaml()
        assert settings.seed == 0
        assert settings.encoder.variant == "sequential"
        assert settings.modulation.variant == "film"
        assert settings.training.loss is None
        assert settings.bench.repeats == 5

    def test_shipped_yaml_matches_defaults(self):
        assert Settings.from_yaml(str(DEFAULT_YAML)) == Settings.from_yaml()

    def test_yaml_values(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 4\ntraining:\n  epochs: 2\n", encoding="utf-8")
        settings = Settings.from_yaml(str(path))
        assert settings.seed == 4
        assert settings.training.epochs == 2
        assert settings.training.task_batch_size == 16

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("training:\n  epochs: 2\n", encoding="utf-8")
        overrides = {"training.epochs": 9, "encoder.variant": "pooling-max"}
        settings = Settings.from_yaml(str(path), overrides)
        assert settings.training.epochs == 9
        assert settings.encoder.variant == "pooling-max"

    def test_dashes_in_override_keys(self):
        settings = Settings.from_yaml(overrides={"training.task-batch-size": 4})
        assert settings.training.task_batch_size == 4

    def test_environment_below_overrides(self, monkeypatch):
        monkeypatch.setenv("CMML_SEED", "7")
        monkeypatch.setenv("CMML_TRAINING__EPOCHS", "3")
        assert Settings.from_yaml().seed == 7
        assert Settings.from_yaml().training.epochs == 3
        assert Settings.from_yaml(overrides={"seed": 1}).seed == 1

    def test_output_path(self):
        settings = Settings.from_yaml(overrides={"output_dir": "runs/x"})
        assert settings.output_path == Path("runs/x")


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            Settings.from_yaml(str(tmp_path / "absent.yaml"))

    def test_yaml_syntax_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: 1\ntraining:\n  epochs: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError) as info:
            Settings.from_yaml(str(path))
        assert info.value.line is not None
        assert "line" in str(info.value)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="mapping"):
            Settings.from_yaml(str(path))

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError) as info:
            Settings.from_yaml(overrides={"training.bogus": 1})
        assert info.value.key == "training.bogus"

    def test_invalid_value_names_its_key(self):
        with pytest.raises(ConfigurationError) as info:
            Settings.from_yaml(overrides={"training.epochs": -1})
        assert info.value.key == "training.epochs"
        assert "training.epochs" in str(info.value)

    def test_override_into_scalar(self):
        with pytest.raises(ConfigurationError, match="scalar"):
            Settings.from_yaml(overrides={"seed": 1, "seed.inner": 2})

    def test_empty_override_key(self):
        with pytest.raises(ConfigurationError):
            Settings.from_yaml(overrides={".": 1})


class TestOverrideTokens:
    def test_values_are_yaml_typed(self):
        overrides = parse_overrides(
            ["--training.epochs=3", "--encoder.variant=pooling-mean", "--bench.k_values=[1, 2]"]
        )
        assert overrides == {
            "training.epochs": 3,
            "encoder.variant": "pooling-mean",
            "bench.k_values": [1, 2],
        }

    def test_empty_value(self):
        assert parse_overrides(["--output_dir="]) == {"output_dir": ""}

    @pytest.mark.parametrize("token", ["training.epochs=3", "--training.epochs", "-x=1"])
    def test_malformed_tokens(self, token):
        with pytest.raises(ConfigurationError, match="--key=value"):
            parse_overrides([token])


def test_split_variant():
    assert split_variant("pooling-mean/dot") == ("pooling-mean", "dot")
    with pytest.raises(ConfigurationError):
        split_variant("sequential")
