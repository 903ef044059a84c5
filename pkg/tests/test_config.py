import numpy as np
import pytest

from tcreid import config as cfgio
from tcreid.config import ConfigError
from tcreid.synth import WorldConfig
from tcreid.trainer import TrainConfig


def test_parse_types_and_comments(tmp_path):
    path = tmp_path / "t.cfg"
    path.write_text("# desk run\ntotal_epochs = 50  # short\nlr=0.5\nuse_src = yes\nsmoothing_sigma = none\n")
    cfg = cfgio.load(TrainConfig, path)
    assert cfg.total_epochs == 50 and cfg.lr == 0.5 and cfg.use_src is True and cfg.smoothing_sigma is None


def test_matrix_values():
    cfg = cfgio.from_mapping(WorldConfig, {"num_cameras": "2", "transit_mean": "0,-300;300,0", "transit_std": "0,40;40,0"})
    assert np.array_equal(cfg.transit_mean, [[0, -300], [300, 0]])


@pytest.mark.parametrize(
    "text, match",
    [
        ("lr 0.1", "expected key = value"),
        ("lr = 0.1\nlr = 0.2", "duplicate key"),
        ("learning_rate = 0.1", "unknown key"),
        ("lr = fast", "bad value for lr"),
        ("use_sac = maybe", "bad value for use_sac"),
        ("total_epochs = 0", "total_epochs"),
    ],
)
def test_parse_errors(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        cfgio.load(TrainConfig, path)


def test_dump_round_trip_and_hash():
    cfg = TrainConfig(lr=0.25, smoothing_sigma=30.0).scaled(20)
    back = cfgio.from_mapping(TrainConfig, cfgio.parse_kv(cfgio.dump(cfg)))
    assert back == cfg
    assert cfgio.config_hash(back) == cfgio.config_hash(cfg)
    assert cfgio.config_hash(TrainConfig(seed=1)) != cfgio.config_hash(TrainConfig(seed=2))
    world = WorldConfig(num_cameras=2)
    again = cfgio.from_mapping(WorldConfig, cfgio.parse_kv(cfgio.dump(world)))
    assert cfgio.dump(again) == cfgio.dump(world)
