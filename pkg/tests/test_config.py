import pytest
import yaml

from gian import config
from gian.model import ConfigError


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("")
    assert config.to_dict(config.load(tmp_path / "c.yaml")) == config.to_dict(config.ExperimentConfig())


def test_partial_override_keeps_other_defaults():
    cfg = config.from_dict({"train": {"model": {"M": 8}, "epochs": 3}})
    assert cfg.train.model.M == 8 and cfg.train.model.d_h == 32
    assert cfg.train.epochs == 3 and cfg.train.learning_rate == 0.002


@pytest.mark.parametrize(
    "raw",
    [
        {"nonsense": {}},
        {"train": [1, 2]},
        {"train": {"model": {"widht": 3}}},
        {"synth": {"redundancy": 2.0}},
        {"corrupt": {"pattern": "XM"}},
        {"eval": {"rates": [0.5, 0.2]}},
        {"train": {"alpha_train": -0.1}},
        {"train": {"model": {"lthm_mode": "medium"}}},
    ],
)
def test_invalid(raw):
    with pytest.raises(ConfigError):
        config.from_dict(raw)


def test_bad_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        config.load(tmp_path / "c.yaml")


def test_dump_round_trip():
    cfg = config.from_dict({"train": {"ablation": ["no_amgm"], "seed": 9}, "corrupt": {"pattern": "stm"}})
    again = config.from_dict(yaml.safe_load(config.dump(cfg)))
    assert config.to_dict(again) == config.to_dict(cfg)
    assert again.corrupt.pattern == "STM"
