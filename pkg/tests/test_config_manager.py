import json
from unittest.mock import patch

import pytest

from desmr.config_manager import ConfigManager
from desmr.experiments import ExperimentConfig


def test_load_config_default(mock_config_manager):
    cm = mock_config_manager
    assert cm.config["m"] == 10
    assert cm.config["noise"] == "cauchy(0,1)"
    assert cm.config["methods"] == ["desmr", "delr"]
    assert cm.config["output_dir"] == "reports"


def test_save_config(temp_config_file):
    cm = ConfigManager(config_file=temp_config_file)
    cm.update_setting("m", 20)
    with open(temp_config_file, "r", encoding="utf-8") as f:
        data = json.load(f)
    assert data["m"] == 20
    assert "last_update" in data


def test_config_file_roundtrip(temp_config_file):
    with open(temp_config_file, "w", encoding="utf-8") as f:
        json.dump({"m": 5, "topology": "ring", "last_update": "2024-01-01"}, f)
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(config_file=temp_config_file)
    assert cm.config["m"] == 5
    assert cm.config["topology"] == "ring"
    assert "last_update" not in cm.config


def test_unknown_keys_reject_file(temp_config_file):
    """Лишние ключи - используем значения по умолчанию"""
    with open(temp_config_file, "w", encoding="utf-8") as f:
        json.dump({"m": 5, "platform_login": "x"}, f)
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(config_file=temp_config_file)
    assert cm.config["m"] == 10


def test_broken_json(temp_config_file):
    with open(temp_config_file, "w", encoding="utf-8") as f:
        f.write("{не json")
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(config_file=temp_config_file)
    assert cm.config == ConfigManager.get_default_config()


def test_invalid_file_values_skipped(temp_config_file):
    with open(temp_config_file, "w", encoding="utf-8") as f:
        json.dump({"m": 1, "n": 50}, f)
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(config_file=temp_config_file)
    assert cm.config["m"] == 10
    assert cm.config["n"] == 50


def test_precedence(temp_config_file):
    """CLI перекрывает файл, переменная окружения - каталог отчетов"""
    with open(temp_config_file, "w", encoding="utf-8") as f:
        json.dump({"m": 5, "n": 50, "output_dir": "from_file"}, f)
    with patch("desmr.config_manager.os.getenv", return_value="/tmp/env_reports"):
        cm = ConfigManager(config_file=temp_config_file, overrides={"m": 7, "p": None})
    assert cm.config["m"] == 7
    assert cm.config["n"] == 50
    assert cm.config["p"] == 100
    assert cm.config["output_dir"] == "/tmp/env_reports"


@pytest.mark.parametrize(
    "key, value",
    [
        ("m", 1),
        ("n", 0),
        ("n", 2.5),
        ("V", True),
        ("p_c", 1.5),
        ("rho", 1.0),
        ("sigma2", -1.0),
        ("noise", "laplace(0,1)"),
        ("methods", "desmr,lasso"),
        ("methods", []),
        ("topology", "star"),
        ("init_mode", "random"),
        ("oracle_s", 0),
        ("subgd_steps", 0),
        ("eta0", 0.0),
        ("bic_form", "aic"),
        ("unknown_key", 1),
    ],
)
def test_invalid_setting_ignored(mock_config_manager, key, value):
    cm = mock_config_manager
    before = dict(cm.config)
    cm.update_setting(key, value)  # Не меняет, log error
    assert cm.config == before


def test_methods_from_string(mock_config_manager):
    cm = mock_config_manager
    cm.update_setting("methods", "desmr, pooled_mr ,d_subgd")
    assert cm.config["methods"] == ["desmr", "pooled_mr", "d_subgd"]


def test_get_config_status(mock_config_manager):
    cm = mock_config_manager
    is_valid, problems = cm.get_config_status()
    assert is_valid
    assert not problems

    cm.config["topology"] = "star"
    is_valid, problems = cm.get_config_status()
    assert not is_valid
    assert problems[0].startswith("topology")


def test_to_experiment_config(mock_config_manager):
    cm = mock_config_manager
    cm.update_setting("V", 0)
    cfg = cm.to_experiment_config()
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.V == 0
    assert cfg.surrogate_config().V == 0


def test_sparsity_zero_allowed(mock_config_manager):
    cm = mock_config_manager
    cm.update_setting("s", 0)
    assert cm.config["s"] == 0
    assert cm.to_experiment_config().s == 0


def test_rejected_override_fails_status():
    """Неверный флаг CLI не подменяется молча значением по умолчанию"""
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(overrides={"m": 1, "n": 50})
    assert cm.config["m"] == 10
    assert cm.config["n"] == 50
    is_valid, problems = cm.get_config_status()
    assert not is_valid
    assert problems[0].startswith("отклонен флаг m=1")
