# tests/test_settings.py
import pytest

from src.dsl import ResourceQuota, parse_dsl, resolve_quota
from src.errors import ConfigError
from src.settings import PipelineSettings, load_settings


def test_defaults(tmp_path):
    s = load_settings(tmp_path / "missing.toml", env={})
    assert s == PipelineSettings()
    assert s.max_frame == 1518
    assert s.quota.cam_entries == 4


def test_toml_file(tmp_path):
    path = tmp_path / "pipeline.toml"
    path.write_text('[pipeline]\nmtu = 9000\nreconfig_rate = 2\n\n[pipeline.quota]\ncam_entries = 8\n', encoding="utf-8")
    s = load_settings(path, env={})
    assert (s.mtu, s.reconfig_rate, s.quota.cam_entries) == (9000, 2, 8)


def test_env_beats_toml(tmp_path):
    path = tmp_path / "pipeline.toml"
    path.write_text("[pipeline]\ncookie = 1\nlog_level = \"INFO\"\n", encoding="utf-8")
    s = load_settings(path, env={"PIPE_COOKIE": "0xCAFE", "PIPE_LOG_LEVEL": "DEBUG"})
    assert s.cookie == 0xCAFE
    assert s.log_level == "DEBUG"


def test_invalid_value(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "missing.toml", env={"PIPE_MTU": "64"})


def test_broken_toml(tmp_path):
    path = tmp_path / "pipeline.toml"
    path.write_text("[pipeline\nmtu = ", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_settings(path, env={})


def test_quota_resolution_order(settings):
    prog = parse_dsl("module q;\nquota cam_entries = 2;\n")
    assert resolve_quota(None, prog, settings).cam_entries == 2
    assert resolve_quota({"cam_entries": 6}, prog, settings).cam_entries == 6
    assert resolve_quota(ResourceQuota(cam_entries=9), prog, settings).cam_entries == 9
    with pytest.raises(ConfigError):
        resolve_quota({"cam_entries": 17}, prog, settings)
