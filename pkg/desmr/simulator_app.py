"""Приложение командной строки: разбор аргументов и запуск экспериментов"""

import argparse
import logging
import os
import typing
from dataclasses import MISSING, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from desmr.config_manager import ConfigManager
from desmr.datagen import OUTLIER_FRACTION
from desmr.downloader import DatasetDownloader
from desmr.experiments import (
    SCENARIOS,
    ExperimentConfig,
    ExperimentReport,
    RealDataConfig,
    load_column_settings,
    run_experiment,
    run_fixed_total_sweep,
    run_init_sensitivity,
    run_inner_trace,
    run_outer_trace,
    run_realdata,
    run_sweep,
)
from desmr.report_formatters import ReportFormatters

logger = logging.getLogger(__name__)

DESIGNS = ("table", "heterogeneity", "init")
HETEROGENEITY_METHODS = ["desmr", "pooled_mr", "d_subgd"]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _value_type(annotation):
    if annotation is bool:
        return bool
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    if typing.get_origin(annotation) in (list, List):
        return str
    if args:
        return args[0]
    return annotation


def add_experiment_flags(parser: argparse.ArgumentParser):
    """Флаг на каждое поле ExperimentConfig; None означает "не задан" """
    for f in fields(ExperimentConfig):
        value_type = _value_type(f.type)
        if value_type is bool:
            parser.add_argument(_flag(f.name), dest=f.name, action="store_true", default=None)
        else:
            parser.add_argument(_flag(f.name), dest=f.name, type=value_type, default=None)


def parse_sweep(text: str):
    """"m=5,10,20" -> ("m", [5, 10, 20]) с типом поля конфигурации"""
    name, sep, raw = text.partition("=")
    name = name.strip()
    if not sep or name not in ExperimentConfig.__dataclass_fields__:
        raise argparse.ArgumentTypeError(f"Ожидается параметр=значения, получено {text!r}")
    default = ExperimentConfig.__dataclass_fields__[name].default
    cast = type(default) if default is not MISSING and default is not None else str
    try:
        return name, [cast(v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desmr", description="Симулятор децентрализованной медианной регрессии"
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    parser.add_argument("--config", default=None, help="JSON файл конфигурации эксперимента")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="синтетические эксперименты")
    simulate.add_argument("--design", choices=DESIGNS, default="table")
    simulate.add_argument("--sweep", type=parse_sweep, default=None, help="например m=5,10,20")
    simulate.add_argument("--total-n", type=int, default=None, help="фиксированное N для перебора m")
    add_experiment_flags(simulate)

    realdata = commands.add_parser("realdata", help="реальные данные и сценарии выбросов")
    realdata.add_argument("--csv", required=True, help="путь к CSV (скачивается, если нет)")
    realdata.add_argument("--download", action="store_true", help="скачать из DESMR_CRIME_URL")
    realdata.add_argument("--edges", default="data/division_edges.txt")
    realdata.add_argument("--group-map", default="data/state_divisions.csv")
    realdata.add_argument("--columns", default="data/crime_columns.json")
    realdata.add_argument("--scenarios", default=",".join(SCENARIOS))
    realdata.add_argument("--methods", default="desmr,delr")
    realdata.add_argument("--V", dest="V", type=int, default=10)
    realdata.add_argument("--T", dest="T", type=int, default=50)
    realdata.add_argument("--seed", type=int, default=2024)
    realdata.add_argument("--output-dir", default=None)

    trace = commands.add_parser("trace", help="траектории сходимости")
    trace.add_argument("--kind", choices=("outer", "inner"), default="outer")
    trace.add_argument("--t-values", type=_int_list, default=[50, 100], help="T для --kind outer")
    trace.add_argument("--outer-v", type=int, default=50, help="V для --kind outer")
    trace.add_argument("--rho-margin", type=float, default=1.05, help="ρ_j = margin * lambda_max")
    add_experiment_flags(trace)
    return parser


class SimulatorApp:
    """Запуск экспериментов и вывод сводных таблиц"""

    def __init__(self, config_manager: ConfigManager, formatters: Optional[ReportFormatters] = None):
        self.config_manager = config_manager
        self.formatters = formatters or ReportFormatters()
        self.stats = {"reports": 0, "failures": 0}

    @property
    def output_dir(self) -> str:
        return self.config_manager.config["output_dir"]

    def simulate(self, design: str = "table", sweep=None, total_n: Optional[int] = None) -> Dict[str, ExperimentReport]:
        cfg = self.config_manager.to_experiment_config()
        if design == "init":
            return {"init": run_init_sensitivity(cfg)}
        if design == "heterogeneity":
            base = Path(cfg.output_dir)
            covariate = replace(
                cfg, cov_mode="per_node_random", methods=HETEROGENEITY_METHODS,
                output_dir=str(base / "covariate"),
            )
            noise = replace(
                cfg, cov_mode="homogeneous", noise="per_node_random", methods=HETEROGENEITY_METHODS,
                output_dir=str(base / "noise"),
            )
            return {"covariate": run_experiment(covariate), "noise": run_experiment(noise)}
        if sweep is not None:
            name, values = sweep
            if name == "m" and total_n:
                return run_fixed_total_sweep(cfg, total_n, values)
            return run_sweep(cfg, name, values)
        return {"table": run_experiment(cfg)}

    def realdata(self, args: argparse.Namespace) -> Dict[str, ExperimentReport]:
        if args.download or not os.path.exists(args.csv):
            settings = load_column_settings(args.columns)
            if DatasetDownloader().fetch(args.csv, settings.get("column_names")) is None:
                raise RuntimeError("Данные недоступны: задайте --csv или DESMR_CRIME_URL")
        cfg = RealDataConfig(
            csv_path=args.csv,
            edges_path=args.edges,
            group_map_path=args.group_map or None,
            columns_path=args.columns,
            methods=[m.strip() for m in args.methods.split(",") if m.strip()],
            scenarios=[s.strip() for s in args.scenarios.split(",") if s.strip()],
            V=args.V,
            T=args.T,
            seed=args.seed,
            output_dir=args.output_dir or str(Path(self.output_dir) / "realdata"),
        )
        logger.info("Доля выбросов: %.3f", OUTLIER_FRACTION)
        return {"realdata": run_realdata(cfg)}

    def trace(self, kind: str, t_values: Sequence[int], outer_v: int, rho_margin: float) -> Dict[str, ExperimentReport]:
        cfg = self.config_manager.to_experiment_config()
        if kind == "inner":
            return {"inner": run_inner_trace(cfg, rho_margin)}
        return {"outer": run_outer_trace(cfg, t_values, outer_v)}

    def run(self, args: argparse.Namespace) -> Dict[str, ExperimentReport]:
        """Выполняет подкоманду и печатает сводку"""
        ok, problems = self.config_manager.get_config_status()
        if not ok:
            raise ValueError("Некорректная конфигурация: " + "; ".join(problems))

        if args.command == "simulate":
            reports = self.simulate(args.design, args.sweep, args.total_n)
        elif args.command == "realdata":
            reports = self.realdata(args)
        else:
            reports = self.trace(args.kind, args.t_values, args.outer_v, args.rho_margin)

        if args.command != "realdata":
            self.config_manager.save_config(str(Path(self.output_dir) / "config.json"))
        for title, report in reports.items():
            self.stats["reports"] += 1
            self.stats["failures"] += len(report.failures)
            print(self.formatters.format_plain(report, title=title))
        logger.info("Готово: отчетов %d, ошибок %d", self.stats["reports"], self.stats["failures"])
        return reports


def experiment_overrides(args: argparse.Namespace) -> Dict:
    """Значения флагов, заданных явно в командной строке"""
    names = {f.name for f in fields(ExperimentConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}
