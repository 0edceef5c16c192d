import pathlib

import pytest
import numpy as np

import semsec
from semsec.experiment import (
    ExperimentConfig, default_config, load_config, load_dataset, write_config, write_package_config,
)
from semsec.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "experiment.ini"
    path.write_text(text)
    return path


def test_package_config_is_a_dict():
    # The experiment module must not shadow the data directory settings.
    assert isinstance(semsec.config, dict)
    assert isinstance(semsec.config["data_dir"], pathlib.Path)
    return


def test_presets():
    desk = default_config("desk")
    assert (desk.plan.T, desk.plan.K, desk.agent.batch_size) == (60, 5, 16)
    assert (desk.plan.epochs1, desk.plan.epochs5) == (10, 20)
    assert desk.data.source == "synthetic"
    full = default_config("full")
    assert (full.plan.T, full.plan.K, full.agent.batch_size) == (500, 15, 128)
    assert full.plan.epochs4 == 7500
    assert full.agent.gamma == 0.99 and full.agent.tau == 1e-3 and full.agent.buffer_size == 1000
    assert full.data.source == "cifar-10-batches-bin"
    with pytest.raises(ConfigError):
        default_config("laptop")
    return


def test_written_config_loads_back(tmp_path):
    for preset in ("desk", "full"):
        cfg = default_config(preset)
        path = write_config(cfg, tmp_path / f"{preset}.ini")
        assert load_config(path) == cfg
    return


def test_partial_config_keeps_defaults(tmp_path):
    path = write(tmp_path, "[channel]\nsnr_leg_db = 20\n\n[plan]\nT = 7\n")
    cfg = load_config(path)
    assert cfg.channel.snr_leg_db == 20.0
    assert cfg.channel.snr_eve_db == 10.0
    assert cfg.plan.T == 7
    assert cfg.plan.K == 5
    assert isinstance(cfg, ExperimentConfig)
    return


def test_unknown_key_reports_the_line(tmp_path):
    path = write(tmp_path, "[channel]\nn_m = 4\nbogus = 1\n")
    with pytest.raises(ConfigError, match=r":3: channel\.bogus: unknown key"):
        load_config(path)
    return


def test_unknown_section(tmp_path):
    path = write(tmp_path, "[channel]\nn_m = 4\n\n[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match=r":4: extras: unknown section"):
        load_config(path)
    return


def test_mismatched_antennas(tmp_path):
    path = write(tmp_path, "[channel]\nn_m = 4\nn_n = 2\n")
    with pytest.raises(ConfigError, match=r":3: channel\.n_n"):
        load_config(path)
    return


def test_out_of_range_values(tmp_path):
    path = write(tmp_path, "[agent]\ngamma = 1.5\n")
    with pytest.raises(ConfigError, match=r":2: agent\.gamma: must lie in \[0, 1\)"):
        load_config(path)
    path = write(tmp_path, "[agent]\nbatch_size = 64\nbuffer_size = 32\n")
    with pytest.raises(ConfigError, match=r":3: agent\.buffer_size"):
        load_config(path)
    path = write(tmp_path, "[plan]\nlr4 = 0\n")
    with pytest.raises(ConfigError, match=r"plan\.lr4"):
        load_config(path)
    return


def test_unparsable_value(tmp_path):
    path = write(tmp_path, "[code]\ncu = one\n")
    with pytest.raises(ConfigError, match=r":2: code\.cu: can't parse 'one' as int"):
        load_config(path)
    return


def test_indivisible_image_size(tmp_path):
    path = write(tmp_path, "[code]\ncu = 1\n\n[data]\nheight = 30\n")
    with pytest.raises(ConfigError, match=r":2: code\.cu: H\*W\*C"):
        load_config(path)
    return


def test_duplicate_stream_offsets(tmp_path):
    path = write(tmp_path, "[seeds]\noffset_channel = 3\n")
    with pytest.raises(ConfigError, match="offsets must be distinct"):
        load_config(path)
    return


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.ini")
    return


def test_synthetic_dataset_split():
    cfg = default_config("desk")
    cfg.data.n_train, cfg.data.n_test, cfg.data.n_eval = 6, 3, 2
    cfg.data.height = cfg.data.width = 8
    train, test, eval_set = load_dataset(cfg, np.random.default_rng(0))
    assert (train.shape, test.shape, eval_set.shape) == ((6, 8, 8, 3), (3, 8, 8, 3), (2, 8, 8, 3))
    again = load_dataset(cfg, np.random.default_rng(0))
    assert np.array_equal(again[1], test)
    return


def test_file_dataset(tmp_path, monkeypatch):
    records = np.random.default_rng(0).integers(0, 256, size=(10, 3073), dtype=np.uint8)
    (tmp_path / "cifar").mkdir()
    records.tofile(tmp_path / "cifar" / "data_batch_1.bin")
    monkeypatch.setitem(semsec.config, "data_dir", tmp_path)
    cfg = default_config("desk")
    cfg.data.source = "cifar"
    cfg.data.n_train, cfg.data.n_test, cfg.data.n_eval = 5, 3, 2
    train, test, eval_set = load_dataset(cfg, np.random.default_rng(0))
    assert train.shape == (5, 32, 32, 3)
    # Every image is used exactly once across the three sets.
    everything = np.concatenate([train, test, eval_set])
    assert len({x.tobytes() for x in everything}) == 10
    cfg.data.n_train = 50
    with pytest.raises(ConfigError, match="fewer than"):
        load_dataset(cfg, np.random.default_rng(0))
    return


def test_write_package_config(tmp_path, monkeypatch):
    monkeypatch.setattr(semsec, "__file__", str(tmp_path / "__init__.py"))
    monkeypatch.setitem(semsec.config, "data_dir", semsec.config["data_dir"])
    path = write_package_config(tmp_path / "data")
    assert path == tmp_path.resolve() / "config.ini"
    assert (tmp_path / "data").is_dir()
    assert "data_dir" in path.read_text()
    assert semsec.config["data_dir"] == tmp_path / "data"
    return
