"""Tests for key = value parsing, experiment configs and environment overrides."""
import math
from pathlib import Path

import pytest

from mdbrief.config import (
    ExperimentConfig,
    default_threads,
    env_default,
    load_experiment,
    load_experiments,
    parse_key_values,
)
from mdbrief.errors import InputParseError

EXPERIMENTS = Path(__file__).resolve().parents[1] / "config" / "experiments"


def test_parse_key_values_skips_comments():
    values = parse_key_values("# header\n\na = 1 2  # trailing\nb=x\n")
    assert values == {"a": "1 2", "b": "x"}


def test_parse_key_values_errors():
    with pytest.raises(InputParseError, match=":1: empty key"):
        parse_key_values(" = 3\n")
    with pytest.raises(InputParseError, match="duplicate"):
        parse_key_values("a = 1\na = 2\n")


def test_text_config_paths_relative_to_file(tmp_path):
    path = tmp_path / "exp.conf"
    path.write_text("model = cams/fish.calib\nviews = 12\nstart = 1 2 -50\nvariants = brief, mdbrief\n")
    config = load_experiment(path)
    assert config.model == tmp_path / "cams" / "fish.calib"
    assert config.views == 12
    assert config.start == (1.0, 2.0, -50.0)
    assert config.variants == ("brief", "mdbrief")
    assert config.recognition_views == 10
    assert config.rot_magnitude_rad == pytest.approx(math.radians(20.0))


def test_yaml_config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("model: /abs/cam.calib\nstart: [0, 0, -10]\ntrack_point: [5, 6]\nseed: 7\nname: demo\n")
    config = load_experiment(path)
    assert config.model == Path("/abs/cam.calib")
    assert config.track_point == (5.0, 6.0)
    assert config.seed == 7
    assert config.name == "demo"


@pytest.mark.parametrize("text,message", [
    ("views: 3\n", "missing required key 'model'"),
    ("model: a.calib\ncolour: red\n", "unknown key"),
    ("model: a.calib\nviews: many\n", "expects an integer"),
    ("model: a.calib\nviews: 0\n", "views"),
    ("model: a.calib\nstart: [1, 2]\n", "expects 3 values"),
    ("model: a.calib\nvariants: [brief, orb]\n", "unknown variant 'orb'"),
    ("model: a.calib\npatch_size: 15\n", "patch_size"),
    ("model: a.calib\nsigma: nan\n", "finite"),
    ("model: [unclosed\n", "invalid YAML"),
    ("- model\n", "mapping"),
])
def test_config_errors(tmp_path, text, message):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(InputParseError, match=message):
        load_experiment(path)


def test_shipped_experiments():
    configs = load_experiments(EXPERIMENTS)
    assert sorted(configs) == ["fisheye", "pinhole", "radial"]
    fisheye = configs["fisheye"]
    assert fisheye.model.name == "fisheye.calib"
    assert fisheye.model.is_file()
    assert fisheye.texture_size == 2048
    assert fisheye.start == (900.0, 1024.0, -80.0)
    assert fisheye.supersample == 3
    assert fisheye.views == 40


def test_validate_direct_construction():
    with pytest.raises(InputParseError, match="dim"):
        ExperimentConfig(model=Path("x"), dim=4).validate()


def test_env_default(monkeypatch, caplog):
    monkeypatch.delenv("MDBRIEF_SEED", raising=False)
    assert env_default("SEED", 0, int) == 0
    monkeypatch.setenv("MDBRIEF_SEED", "12")
    assert env_default("SEED", 0, int) == 12
    monkeypatch.setenv("MDBRIEF_SEED", "twelve")
    with caplog.at_level("WARNING"):
        assert env_default("SEED", 3, int) == 3
    assert "MDBRIEF_SEED" in caplog.text


def test_default_threads(monkeypatch):
    monkeypatch.setenv("MDBRIEF_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("MDBRIEF_THREADS", "0")
    assert default_threads() == 1
