"""key = value configuration files."""

import pytest

from stitchguard import config, model as mdl
from stitchguard.config import ConfigError
from stitchguard.features import FeatureConfig
from stitchguard.pipeline import TrainConfig


def test_parse_with_comments_and_aliases():
    kv = config.parse_kv("# header\ntrain.lr = 0.01  # faster\n\nchunk.overlap=0.7\n")
    assert kv == {"optim.learning_rate": "0.01", "chunk.overlap_ratio": "0.7"}


@pytest.mark.parametrize("text", ["no equals sign", " = 3", "a.b = 1\na.b = 2"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        config.parse_kv(text)


def test_model_config_round_trip():
    cfg = mdl.desk_config("MRH")
    assert config.model_config_from_kv(config.config_to_kv(cfg)) == cfg


def test_feature_config_round_trip():
    cfg = FeatureConfig(kind="llfb", dim=30, nfft=512)
    assert config.feature_config_from_kv(config.feature_config_to_kv(cfg)) == cfg


def test_train_config_sections():
    kv = config.parse_kv("train.epochs = 3\noptim.kind = sgd_momentum\nfocal.gamma = 0\n"
                         "specaug.f = 5\nchunk.chunk_ms = 300\n")
    cfg = config.train_config_from_kv(kv)
    assert cfg.epochs == 3 and cfg.optimizer.kind == "sgd_momentum" and cfg.focal.gamma == 0.0
    assert cfg.spec_augment.f_pct == 5 and cfg.chunk.chunk_ms == 300
    assert cfg.batch_size == TrainConfig().batch_size


@pytest.mark.parametrize("kv", [{"optim.speed": "1"}, {"train.epochs": "many"}, {"model.fc1_dim": "16"},
                                {"optim.kind": "rmsprop"}])
def test_invalid_values(kv):
    with pytest.raises(ConfigError):
        config.train_config_from_kv(kv) if not kv.keys() & {"model.fc1_dim"} else config.model_config_from_kv(kv)


def test_unknown_section():
    with pytest.raises(ConfigError):
        config.check_sections({"gpu.count": "1"})
