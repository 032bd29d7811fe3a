#!/usr/bin/env python3
"""Симулятор децентрализованной суррогатной медианной регрессии (deSMR)"""

import logging
import os
import sys

from dotenv import load_dotenv

from desmr.config_manager import ConfigManager
from desmr.simulator_app import SimulatorApp, build_parser, experiment_overrides

logger = logging.getLogger(__name__)


def setup_logging(level_name: str):
    """Настройка логирования: файл desmr.log и консоль"""
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        print(f"❌ Неизвестный уровень логирования: {level_name}")
        sys.exit(1)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler("desmr.log"), logging.StreamHandler()],
    )


def main(argv=None):
    """Основная функция"""
    # Загружаем переменные из .env файла
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or os.getenv("DESMR_LOG_LEVEL", "INFO"))

    config_manager = ConfigManager(config_file=args.config, overrides=experiment_overrides(args))
    ok, problems = config_manager.get_config_status()
    if not ok:
        print("❌ Некорректная конфигурация эксперимента:")
        for problem in problems:
            print(f"  • {problem}")
        sys.exit(1)

    app = SimulatorApp(config_manager)
    try:
        app.run(args)
    except (ValueError, RuntimeError) as e:
        logger.error("Ошибка запуска: %s", e)
        print(f"❌ {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
