import pytest

from src.errors import ConfigError
from src.logger import Logger
from src.utils import config_to_text, fmt, load_config, load_config_from_env, parse_config_text, sanitize_filename
from src.validator import PipelineConfig


def test_parse_config_text():
    config = parse_config_text("""
        # tuning
        seed = 5
        icp_precise_method = point_to_point   # override
        ba_robust = false
        ba_schedule = 8:10,2:20
    """)
    assert config.seed == 5
    assert config.icp_precise_method == "point_to_point"
    assert config.ba_robust is False
    assert config.ba().schedule == [(8.0, 10), (2.0, 20)]


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config_text("seed = 1\nbogus_key = 2\n", source="run.txt")
    assert "run.txt:2" in str(info.value)
    assert info.value.key == "bogus_key"


def test_invalid_value_is_located():
    with pytest.raises(ConfigError) as info:
        parse_config_text("\nransac_iterations = many\n", source="run.txt")
    assert "run.txt:2" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config_text("ba_schedule = 1:5,2:5")
    with pytest.raises(ConfigError):
        parse_config_text("just some words")


def test_config_text_round_trip(small_config):
    assert parse_config_text(config_to_text(small_config)) == small_config
    assert parse_config_text(config_to_text(PipelineConfig())) == PipelineConfig()


def test_load_config(tmp_path):
    assert load_config() == PipelineConfig()
    path = tmp_path / "config.txt"
    path.write_text("sequences = 2\n", encoding="utf-8")
    assert load_config(str(path)).sequences == 2
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.txt"))


def test_load_config_from_env(tmp_path, monkeypatch):
    for name in ("TRAJFORGE_THREADS", "TRAJFORGE_LOG_FILE"):
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)
    env_file = tmp_path / ".env"
    env_file.write_text("TRAJFORGE_THREADS=3\nTRAJFORGE_LOG_FILE=run.log\n", encoding="utf-8")
    assert load_config_from_env(str(env_file)) == {"threads": 3, "log_file": "run.log"}
    monkeypatch.setenv("TRAJFORGE_THREADS", "lots")
    assert load_config_from_env(str(tmp_path / "absent.env"))["threads"] is None


def test_fmt_is_exact_and_stable():
    for value in (0.1, 1.0 / 3.0, 1e-300, -2.5e17, 123456789.0):
        assert float(fmt(value)) == value
        assert fmt(float(fmt(value))) == fmt(value)
    assert fmt(-0.0) == "0"


def test_sanitize_filename():
    assert sanitize_filename("cam0/seq 1:img") == "cam0_seq_1_img"


def test_logger_in_memory():
    logger = Logger()
    assert logger.get_logs() == "No logs yet."
    assert logger.add_log("first") == "Log saved!"
    logger.add_log("second")
    assert logger.get_latest_log().endswith("second")
    assert logger.get_logs().count("\n") == 1


def test_logger_file(tmp_path, capsys):
    path = tmp_path / "logs" / "run.log"
    logger = Logger(str(path), echo=True)
    logger.add_log("slam: 12 nodes")
    assert path.read_text().strip().endswith("slam: 12 nodes")
    assert Logger(str(path)).get_latest_log().endswith("slam: 12 nodes")
    assert "slam: 12 nodes" in capsys.readouterr().err
