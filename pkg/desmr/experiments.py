"""Экспериментальный стенд: конфигурация, повторения, агрегаты и отчеты.

Отчет пишется в три файла: report.csv (длинный формат method, metric,
repetition, value), report.json (агрегаты, эхо конфигурации, сиды, версии,
ошибки) и trace.csv (траектории сходимости); прогон внешних траекторий
добавляет outer_trace.csv с оценками по узлам.
"""

import fcntl
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
import scipy

import desmr
from desmr import baselines
from desmr.baselines import METHODS, MethodResult
from desmr.consensus_admm import AdmmConfig, default_step_lengths, run_inner
from desmr.datagen import (
    CovSpec,
    NetworkDataset,
    NoiseSpec,
    gen_network_data,
    inject_outliers,
    load_csv,
    load_group_map,
    sparse_beta,
)
from desmr.metrics import BIC_FORMS, ZERO_TOL, LambdaRule, Metrics, l2_error, residual_metrics, support_metrics
from desmr.netsim import Topology, gen_complete, gen_erdos_renyi, gen_ring, load_topology, read_edge_list
from desmr.surrogate import (
    INIT_GRID_SIZE,
    SURROGATE_GRID_SIZE,
    SurrogateConfig,
    initial_estimates,
    run_outer_loop,
    select_surrogate_lambda,
    surrogate_responses,
)

logger = logging.getLogger(__name__)

TOPOLOGIES = ("erdos_renyi", "complete", "ring")
SCENARIOS = ("clean", "balanced", "attacker_node")
INIT_STUDY = (
    ("lasso_l2", "lasso_l2", 0.0),
    ("lasso_median", "lasso_median", 0.0),
    ("perturbed_0.1", "truth_perturbed", 0.1),
    ("perturbed_0.5", "truth_perturbed", 0.5),
)
REPORT_COLUMNS = ["method", "metric", "repetition", "value"]
OUTER_COLUMNS = ["method", "repetition", "v", "node", "l2_error", "f_hat", "h_v", "lambda_selected"]
LOCK_NAME = ".report.lock"


@contextmanager
def file_lock(lock_file: str, blocking: bool = True):
    """Контекстный менеджер для файловой блокировки"""
    flags = fcntl.LOCK_EX if blocking else fcntl.LOCK_EX | fcntl.LOCK_NB
    with open(lock_file, "w", encoding="UTF-8") as f:
        try:
            fcntl.flock(f.fileno(), flags)
        except IOError:
            logger.error("Каталог отчетов занят другим запуском (lock file: %s)", lock_file)
            raise RuntimeError(f"Report directory is locked: {lock_file}")
        try:
            yield
        finally:
            fcntl.flock(f.fileno(), fcntl.LOCK_UN)


@dataclass
class ExperimentConfig:
    m: int = 10
    n: int = 200
    p: int = 100
    s: int = 10
    sigma2: float = 1.0
    rho: float = 0.1
    cov_mode: str = "homogeneous"
    noise: str = "cauchy(0,1)"
    topology: str = "erdos_renyi"
    p_c: float = 0.3
    methods: List[str] = field(default_factory=lambda: ["desmr", "delr"])
    V: int = 10
    T: int = 50
    tau: float = 1.0
    c0: float = 0.013
    grid_size: int = SURROGATE_GRID_SIZE
    bic_form: str = "high_dim"
    init_mode: str = "lasso_median"
    init_sigma: float = 0.1
    oracle_s: Optional[int] = None
    eta0: float = baselines.DEFAULT_ETA0
    subgd_steps: Optional[int] = None
    zero_tol: float = ZERO_TOL
    n_test: int = 0
    printed_update: bool = False
    seed: int = 2024
    repetitions: int = 20
    output_dir: str = "reports"

    def __post_init__(self):
        if min(self.m, self.n, self.p, self.repetitions) < 1 or self.m < 2:
            raise ValueError("Нужно m >= 2 и n, p, repetitions >= 1")
        if not 0 <= self.s <= self.p:
            raise ValueError(f"Нужно 0 <= s <= p: s={self.s}, p={self.p}")
        if not 0 < self.p_c <= 1:
            raise ValueError(f"p_c должно быть в (0, 1], получено {self.p_c}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"Неизвестная топология: {self.topology}")
        if self.cov_mode not in ("homogeneous", "per_node_random"):
            raise ValueError(f"Неизвестный режим ковариации: {self.cov_mode}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 должно быть > 0, получено {self.eta0}")
        if self.subgd_steps is not None and self.subgd_steps < 1:
            raise ValueError(f"subgd_steps должно быть >= 1, получено {self.subgd_steps}")
        if self.bic_form not in BIC_FORMS:
            raise ValueError(f"Неизвестная форма BIC: {self.bic_form}")
        unknown = [name for name in self.methods if name not in METHODS]
        if unknown or not self.methods:
            raise ValueError(f"Неизвестные методы: {unknown or 'пустой список'}")
        self.noise_spec()

    def noise_spec(self):
        return self.noise if self.noise == "per_node_random" else NoiseSpec.parse(self.noise)

    def cov_spec(self):
        return self.cov_mode if self.cov_mode == "per_node_random" else CovSpec(self.sigma2, self.rho)

    def surrogate_config(self, seed: Optional[int] = None) -> SurrogateConfig:
        return SurrogateConfig(
            V=self.V,
            T=self.T,
            tau=self.tau,
            c0=self.c0,
            oracle_s=self.oracle_s,
            lambda_rule=LambdaRule(grid_size=self.grid_size, bic_form=self.bic_form),
            init_rule=LambdaRule(grid_size=INIT_GRID_SIZE, bic_form=self.bic_form),
            init_mode=self.init_mode,
            init_sigma=self.init_sigma,
            zero_tol=self.zero_tol,
            printed_update=self.printed_update,
            seed=seed,
        )


@dataclass
class ExperimentReport:
    rows: List[Dict] = field(default_factory=list)
    traces: List[Dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)
    seeds: List[Dict] = field(default_factory=list)
    failures: List[Dict] = field(default_factory=list)
    extra: Dict = field(default_factory=dict)
    outer_rows: List[Dict] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def aggregates(self) -> pd.DataFrame:
        return aggregate_rows(self.frame())

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.traces)

    def mean(self, method: str, metric: str) -> float:
        table = self.aggregates()
        row = table[(table["method"] == method) & (table["metric"] == metric)]
        if row.empty:
            raise KeyError(f"Нет агрегата для {method}/{metric}")
        return float(row["mean"].iloc[0])

    def to_json(self) -> Dict:
        return {
            "aggregates": self.aggregates().to_dict(orient="records"),
            "config": self.config,
            "seeds": self.seeds,
            "failures": self.failures,
            "versions": package_versions(),
            **self.extra,
        }

    def write(self, directory: str) -> Path:
        """Пишет report.csv, report.json и trace.csv под файловой блокировкой"""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with file_lock(str(out / LOCK_NAME)):
            self.frame().to_csv(out / "report.csv", index=False)
            with open(out / "report.json", "w", encoding="utf-8") as f:
                json.dump(self.to_json(), f, indent=2, ensure_ascii=False, default=_json_default)
            self.trace_frame().to_csv(out / "trace.csv", index=False)
            if self.outer_rows:
                pd.DataFrame(self.outer_rows, columns=OUTER_COLUMNS).to_csv(out / "outer_trace.csv", index=False)
        logger.info("Отчет записан в %s", out)
        return out


def _json_default(value):
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Не сериализуется в JSON: {type(value)}")


def package_versions() -> Dict[str, str]:
    return {
        "desmr": desmr.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "networkx": nx.__version__,
    }


def aggregate_rows(frame: pd.DataFrame) -> pd.DataFrame:
    """Среднее, стандартная ошибка и число повторений по (method, metric)"""
    if frame.empty:
        return pd.DataFrame(columns=["method", "metric", "mean", "se", "count"])
    grouped = frame.groupby(["method", "metric"], sort=True)["value"]
    table = grouped.agg(["mean", "sem", "count"]).reset_index()
    return table.rename(columns={"sem": "se"}).fillna({"se": 0.0})


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def repetition_seeds(seed: int, repetitions: int) -> List[Dict[str, int]]:
    """Независимые потоки (данные, топология, инициализация) на каждое повторение"""
    seeds = []
    for child in np.random.SeedSequence(seed).spawn(repetitions):
        data_ss, topo_ss, init_ss = child.spawn(3)
        seeds.append({"data": _seed_int(data_ss), "topology": _seed_int(topo_ss), "init": _seed_int(init_ss)})
    return seeds


def make_topology(cfg: ExperimentConfig, seed: int) -> Topology:
    if cfg.topology == "complete":
        return gen_complete(cfg.m)
    if cfg.topology == "ring":
        return gen_ring(cfg.m)
    return gen_erdos_renyi(cfg.m, cfg.p_c, seed)


def evaluate(result: MethodResult, data: NetworkDataset, zero_tol: float = ZERO_TOL) -> Metrics:
    """Метрики метода: l2 суммарная, носитель - среднее по узлам, прогноз - по всем тестовым строкам"""
    B = result.per_node_beta
    if data.beta_star is not None:
        l2 = l2_error(B, data.beta_star)
        scores = np.array([support_metrics(beta, data.beta_star, zero_tol) for beta in B])
        recall, precision, f1 = (float(v) for v in scores.mean(axis=0))
    else:
        l2 = recall = precision = f1 = float("nan")

    residuals = [
        node.y_test - node.X_test @ B[j]
        for j, node in enumerate(data.nodes)
        if node.X_test is not None and len(node.y_test)
    ]
    rmse = mae = None
    if residuals:
        rmse, mae = residual_metrics(np.concatenate(residuals))
    return Metrics(l2, recall, precision, f1, rmse, mae)


def run_methods(
    methods: Sequence[str],
    data: NetworkDataset,
    topo: Topology,
    scfg: SurrogateConfig,
    eta0: float = baselines.DEFAULT_ETA0,
    subgd_steps: Optional[int] = None,
    on_failure=None,
) -> Dict[str, MethodResult]:
    """Запускает методы на одних и тех же данных и топологии.

    Бюджет раундов D-subGD и deLR равен V*T, как у deSMR. Ошибка метода
    передается в on_failure(method, exc), остальные методы продолжают работу.
    """
    results: Dict[str, MethodResult] = {}
    local: Optional[MethodResult] = None

    def local_estimates() -> MethodResult:
        nonlocal local
        if local is None:
            local = baselines.local_mr(data, scfg.init_rule, scfg.init_tol, scfg.init_max_iter)
        return local

    for name in methods:
        try:
            if name == "desmr":
                results[name] = baselines.desmr(data, topo, scfg)
            elif name == "delr":
                results[name] = baselines.delr(data, topo, scfg)
            elif name == "pooled_mr":
                results[name] = baselines.pooled_mr(data, scfg.lambda_rule)
            elif name == "local_mr":
                results[name] = local_estimates()
            elif name == "avg_mr":
                results[name] = baselines.avg_mr(local_estimates())
            elif name == "d_subgd":
                start = local_estimates()
                lam = float(np.nanmean(start.lambdas)) if start.lambdas else 0.0
                steps = subgd_steps or max(1, scfg.V * scfg.T)
                results[name] = baselines.d_subgd(data, topo, start.per_node_beta, steps, eta0, lam)
            else:
                raise ValueError(f"Неизвестный метод: {name}")
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.error("Метод %s завершился ошибкой: %s", name, e)
            if on_failure is None:
                raise
            on_failure(name, e)
    return results


def _metric_rows(method: str, repetition: int, metrics: Metrics) -> List[Dict]:
    return [
        {"method": method, "metric": name, "repetition": repetition, "value": value}
        for name, value in metrics.as_dict().items()
        if not (isinstance(value, float) and math.isnan(value))
    ]


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Повторения синтетического эксперимента с общими данными для всех методов"""
    report = ExperimentReport(config=asdict(cfg), seeds=repetition_seeds(cfg.seed, cfg.repetitions))
    beta_star = sparse_beta(cfg.p, cfg.s)

    for rep, seeds in enumerate(report.seeds, start=1):
        logger.info("Повторение %d/%d", rep, cfg.repetitions)

        def record(method: str, exc: Exception, rep=rep) -> None:
            report.failures.append({"repetition": rep, "method": method, "error": str(exc)})

        try:
            data = gen_network_data(
                cfg.m, cfg.n, cfg.p, beta_star, cfg.cov_spec(), cfg.noise_spec(), seeds["data"], cfg.n_test
            )
            topo = make_topology(cfg, seeds["topology"])
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.error("Повторение %d пропущено: %s", rep, e)
            record("*", e)
            continue

        results = run_methods(
            cfg.methods, data, topo, cfg.surrogate_config(seeds["init"]), cfg.eta0, cfg.subgd_steps, record
        )
        for name in cfg.methods:
            if name not in results:
                continue
            report.rows.extend(_metric_rows(name, rep, evaluate(results[name], data, cfg.zero_tol)))
            report.traces.extend(
                {"method": name, "repetition": rep, "step": step, "l2_error": value}
                for step, value in enumerate(results[name].trace)
            )

    if write:
        report.write(cfg.output_dir)
    return report


def run_sweep(cfg: ExperimentConfig, name: str, values: Sequence, write: bool = True) -> Dict[str, ExperimentReport]:
    """Серия экспериментов по одному параметру; отчеты в подкаталогах name=value"""
    if name not in ExperimentConfig.__dataclass_fields__:
        raise ValueError(f"Неизвестный параметр для перебора: {name}")
    reports = {}
    for value in values:
        label = f"{name}={value}"
        sub = replace(cfg, **{name: value}, output_dir=str(Path(cfg.output_dir) / label))
        logger.info("Перебор %s", label)
        reports[label] = run_experiment(sub, write)
    return reports


def run_fixed_total_sweep(
    cfg: ExperimentConfig,
    total_n: int,
    node_counts: Sequence[int],
    write: bool = True,
) -> Dict[str, ExperimentReport]:
    """Перебор числа узлов при фиксированном общем объеме выборки N = m * n"""
    reports = {}
    for m in node_counts:
        if total_n % m:
            raise ValueError(f"N={total_n} не делится на m={m}")
        label = f"m={m}"
        sub = replace(cfg, m=m, n=total_n // m, output_dir=str(Path(cfg.output_dir) / label))
        logger.info("Перебор %s, n=%d", label, sub.n)
        reports[label] = run_experiment(sub, write)
    return reports


def run_init_sensitivity(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Четыре способа инициализации, ровно одна внешняя итерация deSMR"""
    report = ExperimentReport(config=asdict(cfg), seeds=repetition_seeds(cfg.seed, cfg.repetitions))
    beta_star = sparse_beta(cfg.p, cfg.s)
    for rep, seeds in enumerate(report.seeds, start=1):
        try:
            data = gen_network_data(
                cfg.m, cfg.n, cfg.p, beta_star, cfg.cov_spec(), cfg.noise_spec(), seeds["data"], cfg.n_test
            )
            topo = make_topology(cfg, seeds["topology"])
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.error("Повторение %d пропущено: %s", rep, e)
            report.failures.append({"repetition": rep, "method": "*", "error": str(e)})
            continue
        for label, mode, sigma in INIT_STUDY:
            scfg = replace(cfg.surrogate_config(seeds["init"]), V=1, init_mode=mode, init_sigma=sigma)
            method = f"desmr_{label}"
            try:
                result = baselines.desmr(data, topo, scfg)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
                logger.error("%s, повторение %d: %s", method, rep, e)
                report.failures.append({"repetition": rep, "method": method, "error": str(e)})
                continue
            report.rows.extend(_metric_rows(method, rep, evaluate(result, data, cfg.zero_tol)))
    if write:
        report.write(cfg.output_dir)
    return report


def run_outer_trace(
    cfg: ExperimentConfig,
    T_values: Sequence[int] = (50, 100),
    V: int = 50,
    write: bool = True,
) -> ExperimentReport:
    """l2-ошибка после каждой внешней итерации для нескольких T"""
    report = ExperimentReport(config=asdict(cfg), seeds=repetition_seeds(cfg.seed, cfg.repetitions))
    beta_star = sparse_beta(cfg.p, cfg.s)
    for rep, seeds in enumerate(report.seeds, start=1):
        try:
            data = gen_network_data(cfg.m, cfg.n, cfg.p, beta_star, cfg.cov_spec(), cfg.noise_spec(), seeds["data"])
            topo = make_topology(cfg, seeds["topology"])
            start, _ = initial_estimates(data, cfg.surrogate_config(seeds["init"]))
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.error("Повторение %d пропущено: %s", rep, e)
            report.failures.append({"repetition": rep, "method": "*", "error": str(e)})
            continue
        for T in T_values:
            scfg = replace(cfg.surrogate_config(seeds["init"]), V=V, T=T)
            try:
                result = run_outer_loop(data, topo, scfg, beta_init=start)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
                logger.error("T=%d, повторение %d: %s", T, rep, e)
                report.failures.append({"repetition": rep, "method": f"desmr_T{T}", "error": str(e)})
                continue
            report.traces.extend(
                {"method": f"desmr_T{T}", "repetition": rep, "step": v, "l2_error": value}
                for v, value in enumerate(result.outer.trace)
            )
            per_node = result.outer.trace_frame()
            per_node.insert(0, "repetition", rep)
            per_node.insert(0, "method", f"desmr_T{T}")
            report.outer_rows.extend(per_node.to_dict(orient="records"))
            metrics = evaluate(baselines.MethodResult(result.outer.beta_hat, f"desmr_T{T}"), data, cfg.zero_tol)
            report.rows.extend(_metric_rows(f"desmr_T{T}", rep, metrics))
    if write:
        report.write(cfg.output_dir)
    return report


def run_inner_trace(cfg: ExperimentConfig, rho_margin: float = 1.05, write: bool = True) -> ExperimentReport:
    """Расстояние |B_t - B̂|_F внутреннего ADMM на первой внешней итерации и оценка γ"""
    seeds = repetition_seeds(cfg.seed, 1)[0]
    data = gen_network_data(
        cfg.m, cfg.n, cfg.p, sparse_beta(cfg.p, cfg.s), cfg.cov_spec(), cfg.noise_spec(), seeds["data"]
    )
    topo = make_topology(cfg, seeds["topology"])
    scfg = cfg.surrogate_config(seeds["init"])
    start, _ = initial_estimates(data, scfg)
    ytilde, _, _ = surrogate_responses(data, start, 0, scfg)
    admm_cfg = AdmmConfig(
        tau=cfg.tau,
        rho=default_step_lengths(data, rho_margin),
        lam=select_surrogate_lambda(data, ytilde, scfg.lambda_rule),
        T=cfg.T,
        track_convergence=True,
        printed_update=cfg.printed_update,
    )
    trace = run_inner(data, ytilde, topo, start, admm_cfg).trace
    report = ExperimentReport(
        config=asdict(cfg),
        seeds=[seeds],
        traces=trace.to_frame().to_dict(orient="records"),
        extra={"gamma_hat": trace.gamma_hat, "slope": trace.slope, "r_squared": trace.r_squared,
               "rho_margin": rho_margin},
    )
    if write:
        report.write(cfg.output_dir)
    return report


@dataclass
class RealDataConfig:
    csv_path: str
    edges_path: str = "data/division_edges.txt"
    group_map_path: Optional[str] = "data/state_divisions.csv"
    columns_path: str = "data/crime_columns.json"
    methods: List[str] = field(default_factory=lambda: ["desmr", "delr"])
    scenarios: List[str] = field(default_factory=lambda: list(SCENARIOS))
    V: int = 10
    T: int = 50
    grid_size: int = SURROGATE_GRID_SIZE
    seed: int = 2024
    output_dir: str = "reports/realdata"

    def __post_init__(self):
        unknown = [s for s in self.scenarios if s not in SCENARIOS]
        if unknown:
            raise ValueError(f"Неизвестные сценарии: {unknown}")
        if "clean" not in self.scenarios:
            self.scenarios = ["clean"] + list(self.scenarios)


def load_column_settings(path: str) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        settings = json.load(f)
    for key in ("response_column", "group_column"):
        if key not in settings:
            raise ValueError(f"В {path} нет ключа {key}")
    return settings


def _group_key(group) -> str:
    """"3.0" и 3 дают один ключ "3" """
    try:
        value = float(group)
    except (TypeError, ValueError):
        return str(group)
    return str(int(value)) if value.is_integer() else str(group)


def division_topology(edges_path: str, groups: Sequence[str]) -> Topology:
    """Топология по списку ребер, ограниченная на присутствующие в данных группы"""
    edges, m = read_edge_list(edges_path)
    index = {_group_key(g): j for j, g in enumerate(groups, start=1)}
    if len(index) == m and all(str(k) in index for k in range(1, m + 1)):
        return load_topology([(index[str(a)], index[str(b)]) for a, b in edges], m)
    kept = [(index[str(a)], index[str(b)]) for a, b in edges if str(a) in index and str(b) in index]
    logger.warning("В данных %d из %d групп, топология сужена", len(index), m)
    return load_topology(kept, len(index))


def run_realdata(cfg: RealDataConfig, write: bool = True) -> ExperimentReport:
    """RMSE/MAE методов на реальных данных при разных сценариях выбросов"""
    settings = load_column_settings(cfg.columns_path)
    group_map = None
    if cfg.group_map_path:
        key_column = settings.get("group_key", settings["group_column"])
        group_map = load_group_map(cfg.group_map_path, key_column, settings.get("group_value", "division"))
    data = load_csv(
        cfg.csv_path,
        settings["response_column"],
        settings["group_column"],
        seed=cfg.seed,
        group_map=group_map,
        drop_columns=settings.get("drop_columns", []),
    )
    topo = division_topology(cfg.edges_path, data.meta["groups"])
    scfg = SurrogateConfig(V=cfg.V, T=cfg.T, lambda_rule=LambdaRule(grid_size=cfg.grid_size), seed=cfg.seed)
    report = ExperimentReport(config=asdict(cfg), seeds=[{"split": cfg.seed}])
    rmse: Dict[Tuple[str, str], float] = {}

    for scenario in cfg.scenarios:
        scenario_data, scenario_topo = inject_outliers(data, scenario, cfg.seed, topo)

        def record(method: str, exc: Exception, scenario=scenario) -> None:
            report.failures.append({"repetition": scenario, "method": method, "error": str(exc)})

        results = run_methods(cfg.methods, scenario_data, scenario_topo, scfg, on_failure=record)
        for name, result in results.items():
            metrics = evaluate(result, scenario_data)
            rmse[(name, scenario)] = metrics.rmse
            for metric in ("rmse", "mae"):
                report.rows.append(
                    {"method": f"{name}:{scenario}", "metric": metric, "repetition": 1, "value": getattr(metrics, metric)}
                )
            logger.info("%s / %s: RMSE=%.4f, MAE=%.4f", name, scenario, metrics.rmse, metrics.mae)

    degradation = {}
    for (name, scenario), value in rmse.items():
        clean = rmse.get((name, "clean"))
        if scenario != "clean" and clean:
            degradation[f"{name}:{scenario}"] = value / clean - 1.0
    report.extra["rmse_degradation"] = degradation
    if write:
        report.write(cfg.output_dir)
    return report
