"""Форматирование отчетов для вывода в консоль и Markdown"""

from typing import Dict, Optional

import pandas as pd

from desmr.experiments import ExperimentReport

METRIC_ORDER = ["l2_error", "recall", "precision", "f1", "rmse", "mae"]


class ReportFormatters:
    """Таблицы агрегатов отчета"""

    def __init__(self, digits: int = 3):
        self.digits = digits

    def summary_table(self, report: ExperimentReport) -> pd.DataFrame:
        """Строки - методы, столбцы - метрики, ячейки "mean (se)" """
        table = report.aggregates()
        if table.empty:
            return pd.DataFrame()
        cells = table.assign(
            cell=[f"{m:.{self.digits}f} ({s:.{self.digits}f})" for m, s in zip(table["mean"], table["se"])]
        )
        wide = cells.pivot(index="method", columns="metric", values="cell")
        ordered = [c for c in METRIC_ORDER if c in wide.columns]
        ordered += [c for c in wide.columns if c not in ordered]
        return wide[ordered].fillna("-")

    def format_plain(self, report: ExperimentReport, title: Optional[str] = None) -> str:
        """Текстовая таблица для консоли"""
        lines = []
        if title:
            lines.append(title)
        table = self.summary_table(report)
        lines.append("Нет результатов" if table.empty else table.to_string())
        lines.extend(self._footer(report))
        return "\n".join(lines)

    def format_markdown(self, report: ExperimentReport, title: Optional[str] = None) -> str:
        """Таблица в разметке Markdown"""
        table = self.summary_table(report)
        lines = [f"### {title}", ""] if title else []
        if table.empty:
            lines.append("_Нет результатов_")
        else:
            header = ["method"] + list(table.columns)
            lines.append("| " + " | ".join(header) + " |")
            lines.append("|" + "---|" * len(header))
            for method, row in table.iterrows():
                lines.append("| " + " | ".join([str(method)] + list(row.values)) + " |")
        lines.extend(self._footer(report))
        return "\n".join(lines)

    @staticmethod
    def _footer(report: ExperimentReport) -> list:
        lines = []
        degradation: Dict[str, float] = report.extra.get("rmse_degradation", {})
        for key, value in sorted(degradation.items()):
            lines.append(f"Рост RMSE {key}: {value:+.1%}")
        gamma = report.extra.get("gamma_hat")
        if gamma is not None:
            r_squared = report.extra.get("r_squared")
            fit = "n/a" if r_squared is None else f"{r_squared:.4f}"
            lines.append(f"Оценка γ: {gamma:.4f} (R^2={fit})")
        if report.failures:
            lines.append(f"❌ Ошибок: {len(report.failures)}")
        return lines
