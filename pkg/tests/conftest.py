"""автоматически настраивать pytest"""

import os
import sys
from unittest.mock import patch

import numpy as np
import pytest

# Добавляем корень проекта в sys.path
sys.path.insert(
    0, os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
)

from desmr.config_manager import ConfigManager
from desmr.datagen import NoiseSpec, gen_network_data, sparse_beta
from desmr.netsim import gen_complete, gen_ring


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: воспроизведение экспериментов в настольном масштабе")


def pytest_collection_modifyitems(config, items):
    if os.getenv("DESMR_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="долгий тест: задайте DESMR_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_config_file(tmp_path):
    """Фикстура для временного config файла"""
    config_file = tmp_path / "experiment.json"
    yield str(config_file)
    if os.path.exists(config_file):
        os.remove(config_file)


@pytest.fixture
def mock_config_manager(temp_config_file):
    """ConfigManager с temp файлом и без переменных окружения"""
    with patch("desmr.config_manager.os.getenv", return_value=None):
        cm = ConfigManager(config_file=temp_config_file)
        yield cm


@pytest.fixture
def mock_requests_get():
    """Mock для requests.Session.get"""
    with patch("requests.Session.get") as mock_get:
        yield mock_get


@pytest.fixture
def small_network():
    """4 узла, n=30, p=8, s=2, нормальный шум"""
    return gen_network_data(4, 30, 8, sparse_beta(8, 2), noise_mode=NoiseSpec("normal"), seed=11)


@pytest.fixture
def ring4():
    return gen_ring(4)


@pytest.fixture
def complete4():
    return gen_complete(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
