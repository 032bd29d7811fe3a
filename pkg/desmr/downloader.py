"""Загрузка таблицы реальных данных по HTTP"""

import logging
import os
from pathlib import Path
from typing import List, Optional

import requests
import requests.adapters

logger = logging.getLogger(__name__)

CRIME_URL_ENV = "DESMR_CRIME_URL"


class DatasetDownloader:
    """Скачивает CSV с повторными попытками и сохраняет его локально"""

    def __init__(self, url: Optional[str] = None, timeout: int = 30):
        self.url = url or os.getenv(CRIME_URL_ENV, "")
        self.timeout = timeout
        self.session = requests.Session()

        retry_strategy = requests.adapters.Retry(
            total=3,
            backoff_factor=1,
            status_forcelist=[429, 500, 502, 503, 504],
        )
        adapter = requests.adapters.HTTPAdapter(max_retries=retry_strategy)
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)

    def download(
        self, destination: str, column_names: Optional[List[str]] = None
    ) -> Optional[Path]:
        """Сохраняет файл в destination; None при сетевой ошибке.

        Если задан column_names, а у файла нет заголовка, он дописывается
        первой строкой.
        """
        if not self.url:
            logger.error("Не задан адрес данных (%s)", CRIME_URL_ENV)
            return None

        try:
            logger.info("Загрузка данных: %s", self.url)
            response = self.session.get(self.url, timeout=self.timeout)
            response.raise_for_status()
        except requests.exceptions.RequestException as e:
            logger.error("❌ Ошибка загрузки данных: %s", e)
            if getattr(e, "response", None) is not None:
                logger.error("HTTP статус: %s", e.response.status_code)
            return None

        text = response.text
        if column_names:
            text = self._with_header(text, column_names)
            if text is None:
                return None

        target = Path(destination)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        except OSError as e:
            logger.error("❌ Не удалось сохранить %s: %s", target, e)
            return None
        logger.info("✅ Данные сохранены в %s", target)
        return target

    @staticmethod
    def _with_header(text: str, column_names: List[str]) -> Optional[str]:
        first_line = text.split("\n", 1)[0]
        first_row = [cell.strip() for cell in first_line.split(",")]
        if first_row == list(column_names):
            return text
        if len(first_row) != len(column_names):
            logger.error(
                "Число столбцов в файле (%d) не совпадает с заголовком (%d)",
                len(first_row),
                len(column_names),
            )
            return None
        return ",".join(column_names) + "\n" + text

    def fetch(self, destination: str, column_names: Optional[List[str]] = None) -> Optional[Path]:
        """Использует уже скачанный файл, иначе загружает его"""
        if os.path.exists(destination):
            logger.info("Используется локальная копия %s", destination)
            return Path(destination)
        return self.download(destination, column_names)
