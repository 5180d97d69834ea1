"""Run-config parsing: strict keys, TOML and JSON sources, trainer mapping."""

import json

import pytest

from loopgen.config import RunConfig
from loopgen.errors import ConfigError


def test_defaults_round_trip():
    config = RunConfig()
    again = RunConfig.from_dict(config.to_dict())
    assert again == config


def test_train_config_mapping():
    config = RunConfig(mode="general", steps=7, batch_size=3, lr=0.5,
                       seed=11, gen_z_dim=16, gen_widths=[8, 8, 8, 8])
    tc = config.train_config()
    assert tc.mode == "general"
    assert tc.steps == 7
    assert tc.batch_size == 3
    assert tc.lr == 0.5
    assert tc.seed == 11
    assert tc.generator.z_dim == 16
    assert tc.generator.widths == (8, 8, 8, 8)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="learning_rate"):
        RunConfig.from_dict({"learning_rate": 0.1})


def test_from_toml_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'corpus = "data/corpus"\n'
        'mode = "baseline"\n'
        "steps = 12\n"
        "gen_widths = [8, 8, 8, 8]\n"
        "compute_dc = true\n"
    )
    config = RunConfig.from_file(path)
    assert config.corpus == "data/corpus"
    assert config.mode == "baseline"
    assert config.steps == 12
    assert config.gen_widths == [8, 8, 8, 8]
    assert config.compute_dc is True


def test_from_json_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"steps": 3, "out_dir": "x"}))
    config = RunConfig.from_file(path)
    assert config.steps == 3
    assert config.out_dir == "x"


def test_save_round_trips(tmp_path):
    config = RunConfig(corpus="c", steps=5, gen_widths=[16, 16, 8, 8])
    path = tmp_path / "saved.json"
    config.save(path)
    assert RunConfig.from_file(path) == config


def test_file_validation(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.from_file(tmp_path / "missing.toml")
    bad = tmp_path / "run.yaml"
    bad.write_text("steps: 3\n")
    with pytest.raises(ConfigError, match="toml or .json"):
        RunConfig.from_file(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]\n")
    with pytest.raises(ConfigError, match="table"):
        RunConfig.from_file(arr)


def test_toml_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("stepz = 3\n")
    with pytest.raises(ConfigError, match="stepz"):
        RunConfig.from_file(path)
