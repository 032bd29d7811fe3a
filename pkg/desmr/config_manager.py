"""Управление конфигурацией эксперимента (чтение/запись настроек)"""

import json
import logging
import os
from dataclasses import asdict, fields
from datetime import datetime
from typing import Dict, List, Optional, Tuple

from desmr.baselines import METHODS
from desmr.datagen import NoiseSpec
from desmr.experiments import TOPOLOGIES, ExperimentConfig
from desmr.metrics import BIC_FORMS
from desmr.surrogate import INIT_MODES

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DESMR_OUTPUT_DIR"
META_KEYS = ("last_update",)

COUNT_KEYS = {"n": 1, "p": 1, "s": 0, "T": 1, "repetitions": 1, "m": 2, "grid_size": 2, "V": 0, "n_test": 0}
POSITIVE_KEYS = ("sigma2", "tau", "c0", "init_sigma", "zero_tol", "eta0")
OPTIONAL_COUNT_KEYS = ("oracle_s", "subgd_steps")


class ConfigManager:
    """Менеджер конфигурации эксперимента с сохранением в файл.

    Порядок применения: значения по умолчанию, файл конфигурации, флаги
    CLI, переменная окружения DESMR_OUTPUT_DIR. Отклоненные флаги CLI
    попадают в rejected и делают конфигурацию некорректной.
    """

    def __init__(self, config_file: Optional[str] = None, overrides: Optional[Dict] = None):
        self.config_file = config_file
        self.config = self.get_default_config()
        self.config.update(self.load_config())
        self.rejected: List[str] = []
        for key, value in (overrides or {}).items():
            if value is not None and not self.update_setting(key, value, save=False):
                self.rejected.append(f"{key}={value!r}: {self.validate(key, value)}")
        output_dir = os.getenv(OUTPUT_DIR_ENV)
        if output_dir:
            self.config["output_dir"] = output_dir

    def load_config(self) -> Dict:
        """Загружает настройки из JSON файла; при ошибке возвращает пустой набор"""
        if not self.config_file:
            return {}
        try:
            if os.path.exists(self.config_file):
                with open(self.config_file, "r", encoding="utf-8") as f:
                    config = json.load(f)
                known = set(self.get_default_config()) | set(META_KEYS)
                unknown = sorted(set(config) - known) if isinstance(config, dict) else ["<не объект>"]
                if unknown:
                    logger.error(
                        "Неверная структура конфигурации (лишние ключи %s), используем значения по умолчанию",
                        unknown,
                    )
                    return {}
                loaded = {}
                for key, value in config.items():
                    if key in META_KEYS:
                        continue
                    problem = self.validate(key, value)
                    if problem:
                        logger.error("Настройка %s из файла отклонена: %s", key, problem)
                        continue
                    loaded[key] = self._normalize(key, value)
                logger.info("Конфигурация загружена из %s", self.config_file)
                return loaded
            logger.warning("Файл конфигурации %s не найден", self.config_file)
        except (json.JSONDecodeError, OSError) as e:
            logger.error("Ошибка загрузки конфигурации: %s", e)
        return {}

    @staticmethod
    def get_default_config() -> Dict:
        """Возвращает конфигурацию по умолчанию"""
        return asdict(ExperimentConfig())

    def save_config(self, path: Optional[str] = None):
        """Сохраняет конфигурацию в JSON файл"""
        target = path or self.config_file
        if not target:
            logger.error("Не задан путь для сохранения конфигурации")
            return
        try:
            to_save = dict(self.config, last_update=datetime.now().isoformat())
            directory = os.path.dirname(target)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(target, "w", encoding="utf-8") as f:
                json.dump(to_save, f, indent=2, ensure_ascii=False)
            logger.info("Конфигурация сохранена в %s", target)
        except (TypeError, OSError) as e:
            logger.error("Ошибка сохранения конфигурации: %s", e)

    @staticmethod
    def validate(key: str, value) -> Optional[str]:
        """Текст ошибки или None, если значение допустимо"""
        if key not in ExperimentConfig.__dataclass_fields__:
            return "неизвестный параметр"
        if key in COUNT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int) or value < COUNT_KEYS[key]:
                return f"ожидается целое >= {COUNT_KEYS[key]}"
        elif key in POSITIVE_KEYS:
            if not isinstance(value, (int, float)) or value <= 0:
                return "ожидается положительное число"
        elif key == "p_c":
            if not isinstance(value, (int, float)) or not 0 < value <= 1:
                return "ожидается число в (0, 1]"
        elif key == "rho":
            if not isinstance(value, (int, float)) or not 0 <= value < 1:
                return "ожидается число в [0, 1)"
        elif key == "noise":
            if value != "per_node_random":
                try:
                    NoiseSpec.parse(str(value))
                except ValueError as e:
                    return str(e)
        elif key == "methods":
            names = ConfigManager._normalize(key, value)
            unknown = [name for name in names if name not in METHODS]
            if not names or unknown:
                return f"неизвестные методы {unknown}" if unknown else "пустой список методов"
        elif key == "topology" and value not in TOPOLOGIES:
            return f"ожидается одно из {TOPOLOGIES}"
        elif key == "cov_mode" and value not in ("homogeneous", "per_node_random"):
            return "ожидается homogeneous или per_node_random"
        elif key == "init_mode" and value not in INIT_MODES:
            return f"ожидается одно из {INIT_MODES}"
        elif key in OPTIONAL_COUNT_KEYS and value is not None:
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                return "ожидается целое >= 1"
        elif key == "bic_form" and value not in BIC_FORMS:
            return f"ожидается одно из {BIC_FORMS}"
        return None

    @staticmethod
    def _normalize(key: str, value):
        if key == "methods" and isinstance(value, str):
            return [name.strip() for name in value.split(",") if name.strip()]
        if key == "methods":
            return list(value)
        return value

    def update_setting(self, key: str, value, save: bool = True) -> bool:
        """Обновляет настройку; недопустимое значение логируется и игнорируется"""
        problem = self.validate(key, value)
        if problem:
            logger.error("Неверное значение %s=%r: %s", key, value, problem)
            return False
        self.config[key] = self._normalize(key, value)
        if save and self.config_file:
            self.save_config()
        return True

    def get_config_status(self) -> Tuple[bool, List[str]]:
        """Проверка согласованности конфигурации"""
        problems = [f"отклонен флаг {item}" for item in self.rejected]
        for key, value in self.config.items():
            problem = self.validate(key, value)
            if problem:
                problems.append(f"{key}: {problem}")
        if not problems:
            try:
                self.to_experiment_config()
            except ValueError as e:
                problems.append(str(e))
        return len(problems) == 0, problems

    def to_experiment_config(self) -> ExperimentConfig:
        names = {f.name for f in fields(ExperimentConfig)}
        return ExperimentConfig(**{k: v for k, v in self.config.items() if k in names})
