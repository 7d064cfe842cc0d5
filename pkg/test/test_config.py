from Script.config import LabConfig
from Script.errors import ConfigError

import pytest


def test_config_reads_seed_and_workers_from_env(monkeypatch):
    monkeypatch.setenv("PARTICLE_LAB_SEED", "17")
    monkeypatch.setenv("PARTICLE_LAB_WORKERS", "4")
    cfg = LabConfig.from_env()
    assert cfg.seed == 17
    assert cfg.workers == 4


def test_config_defaults_when_unset(monkeypatch):
    for name in ("PARTICLE_LAB_SEED", "PARTICLE_LAB_WORKERS", "PARTICLE_LAB_FORMAT", "PARTICLE_LAB_DATA_DIR"):
        monkeypatch.delenv(name, raising=False)
    cfg = LabConfig.from_env()
    assert cfg.workers == 1
    assert cfg.output_format == "csv"
    assert cfg.data_dir == cfg.project_root / "Data"
    assert cfg.pad_factor == 6.0


def test_config_rejects_non_integer_seed(monkeypatch):
    monkeypatch.setenv("PARTICLE_LAB_SEED", "abc")
    with pytest.raises(ConfigError):
        LabConfig.from_env()


def test_config_rejects_unknown_format(monkeypatch):
    monkeypatch.setenv("PARTICLE_LAB_FORMAT", "xml")
    with pytest.raises(ConfigError):
        LabConfig.from_env()


def test_config_rejects_zero_workers():
    with pytest.raises(ConfigError):
        LabConfig(workers=0)


def test_data_dir_override(monkeypatch, tmp_path):
    monkeypatch.setenv("PARTICLE_LAB_DATA_DIR", str(tmp_path))
    cfg = LabConfig.from_env()
    assert cfg.data_dir == tmp_path
