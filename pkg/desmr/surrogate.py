"""Внешний цикл deSMR: ядерная оценка плотности в нуле, псевдо-отклики,
расписание ширины окна и драйвер алгоритма"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from desmr.consensus_admm import (
    DEFAULT_TAU,
    RHO_MARGIN,
    AdmmConfig,
    ConsensusState,
    ConvergenceTrace,
    default_step_lengths,
    run_inner,
)
from desmr.datagen import NetworkDataset
from desmr.lad_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, fit_lad_lasso, fit_lasso
from desmr.metrics import LambdaRule, l2_error
from desmr.netsim import Topology

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-3
DEFAULT_C0 = 0.013
SURROGATE_GRID_SIZE = 50
INIT_GRID_SIZE = 10
INIT_MODES = ("lasso_median", "lasso_l2", "truth_perturbed")


class DensityError(RuntimeError):
    """Оценка плотности вырождена на большинстве узлов"""


@dataclass(frozen=True)
class KernelFn:
    evaluate: Callable[[np.ndarray], np.ndarray]
    support_radius: float = 1.0
    name: str = "kernel"


def biweight_kernel(u):
    """-(315/64)u^6 + (735/64)u^4 - (525/64)u^2 + 105/64 при |u| < 1, иначе 0"""
    u = np.asarray(u, dtype=float)
    u2 = u * u
    poly = ((-315.0 * u2 + 735.0) * u2 - 525.0) * u2 + 105.0
    return np.where(np.abs(u) < 1.0, poly / 64.0, 0.0)


BIWEIGHT = KernelFn(biweight_kernel, 1.0, "biweight")


def density_at_zero(residuals: np.ndarray, h: float, kernel: KernelFn = BIWEIGHT) -> float:
    """(1/(n h)) sum_i K(r_i / h) без ограничения снизу"""
    residuals = np.asarray(residuals, dtype=float)
    if h <= 0:
        raise ValueError(f"Ширина окна должна быть > 0, получено {h}")
    if residuals.size == 0:
        raise ValueError("Пустой вектор остатков")
    return float(np.sum(kernel.evaluate(residuals / h)) / (residuals.size * h))


def estimate_density(
    residuals: np.ndarray,
    h: float,
    kernel: KernelFn = BIWEIGHT,
    floor: float = DENSITY_FLOOR,
) -> float:
    """Оценка f(0), ограниченная снизу значением floor"""
    value = density_at_zero(residuals, h, kernel)
    if value <= floor:
        logger.warning("Оценка плотности %.3g ниже порога, используется %.3g", value, floor)
        return floor
    return value


def pseudo_response(X: np.ndarray, y: np.ndarray, beta0: np.ndarray, f0: float) -> np.ndarray:
    """ỹ_i = x_i^T β0 - (1/f0) (1[y_i <= x_i^T β0] - 1/2)"""
    if f0 <= 0:
        raise ValueError(f"f0 должно быть > 0, получено {f0}")
    fitted = X @ beta0
    indicator = (y <= fitted).astype(float)
    return fitted - (indicator - 0.5) / f0


@dataclass(frozen=True)
class BandwidthSchedule:
    s_hat: int
    n: int
    m: int
    c0: float = DEFAULT_C0


def bandwidth(v: int, sched: BandwidthSchedule) -> float:
    """h_v = sqrt(s log n / n) + s^(-1/2) (c0 s^2 log n / m)^((v+1)/2), log натуральный"""
    if min(sched.s_hat, sched.n, sched.m) < 1 or v < 0:
        raise ValueError(f"Некорректные параметры расписания: v={v}, {sched}")
    s, log_n = float(sched.s_hat), math.log(sched.n)
    statistical = math.sqrt(s * log_n / sched.n)
    geometric = (sched.c0 * s * s * log_n / sched.m) ** ((v + 1) / 2) / math.sqrt(s)
    return statistical + geometric


@dataclass
class SurrogateConfig:
    V: int = 10
    T: int = 50
    tau: float = DEFAULT_TAU
    rho_margin: float = RHO_MARGIN
    c0: float = DEFAULT_C0
    oracle_s: Optional[int] = None
    lambda_rule: LambdaRule = field(default_factory=lambda: LambdaRule(grid_size=SURROGATE_GRID_SIZE))
    init_rule: LambdaRule = field(default_factory=lambda: LambdaRule(grid_size=INIT_GRID_SIZE))
    init_mode: str = "lasso_median"
    init_sigma: float = 0.1
    init_tol: float = DEFAULT_TOL
    init_max_iter: int = DEFAULT_MAX_ITER
    kernel: KernelFn = BIWEIGHT
    density_floor: float = DENSITY_FLOOR
    zero_tol: float = 1e-4
    printed_update: bool = False
    track_convergence: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if self.V < 0 or self.T < 1:
            raise ValueError(f"Нужно V >= 0 и T >= 1: V={self.V}, T={self.T}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"Неизвестный способ инициализации: {self.init_mode}")


@dataclass
class TraceRow:
    v: int
    node: int
    l2_error: float
    f_hat: float
    h_v: float
    lambda_selected: float


@dataclass
class OuterState:
    v: int
    beta_hat: np.ndarray
    f_hat: np.ndarray
    trace: List[float] = field(default_factory=list)
    rows: List[TraceRow] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    inner_traces: List[ConvergenceTrace] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        columns = ["v", "node", "l2_error", "f_hat", "h_v", "lambda_selected"]
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=columns)


@dataclass
class OuterResult:
    outer: OuterState
    consensus: ConsensusState
    init_lambdas: List[float]
    rounds: int


def fit_local_lad(
    data: NetworkDataset,
    rule: LambdaRule,
    tol: float,
    max_iter: int,
    skip_failures: bool = False,
) -> Tuple[np.ndarray, List[float], List[int], List[str]]:
    """Локальные LAD-lasso оценки на каждом узле (общий путь для Local MR).

    При skip_failures=True ошибка узла записывается в failures, а его оценка
    остается нулевой.
    """
    betas, lambdas, iterations, failures = [], [], [], []
    for j, node in enumerate(data.nodes):
        try:
            lam, report = fit_lad_lasso(node.X, node.y, rule, tol, max_iter)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            if not skip_failures:
                raise
            logger.error("Узел %d: локальная LAD-оценка не удалась: %s", j, e)
            failures.append(f"node {j + 1}: {e}")
            betas.append(np.zeros(data.p))
            lambdas.append(float("nan"))
            iterations.append(0)
            continue
        if not report.converged:
            logger.warning("Узел %d: локальная LAD-оценка не сошлась", j)
        betas.append(report.beta)
        lambdas.append(lam)
        iterations.append(report.iterations)
    return np.vstack(betas), lambdas, iterations, failures


def initial_estimates(data: NetworkDataset, cfg: SurrogateConfig) -> Tuple[np.ndarray, List[float]]:
    """β̂_0^(j) по выбранному способу инициализации"""
    if cfg.init_mode == "lasso_median":
        betas, lambdas, _, _ = fit_local_lad(data, cfg.init_rule, cfg.init_tol, cfg.init_max_iter)
        return betas, lambdas

    if cfg.init_mode == "lasso_l2":
        fits = [fit_lasso(node.X, node.y, cfg.init_rule) for node in data.nodes]
        return np.vstack([report.beta for _, report in fits]), [lam for lam, _ in fits]

    if data.beta_star is None:
        raise ValueError("Инициализация возмущением β* требует известного β*")
    rng = np.random.default_rng(cfg.seed)
    mask = (data.beta_star != 0).astype(float)
    noise = rng.normal(0.0, cfg.init_sigma, size=(data.m, data.p))
    return data.beta_star + mask * noise, [float("nan")] * data.m


def select_surrogate_lambda(data: NetworkDataset, ytilde: List[np.ndarray], rule: LambdaRule) -> float:
    """lambda_{N,v}: BIC по объединенным псевдо-откликам, общая для сети.

    Форма штрафа задается rule.bic_form; по умолчанию df log(N) log(p).
    """
    if rule.mode == "fixed":
        return rule.value
    X = np.vstack([node.X for node in data.nodes])
    if rule.mode == "theory":
        return rule.theory_value(*X.shape)
    lam, _ = fit_lasso(X, np.concatenate(ytilde), rule)
    return lam


def surrogate_responses(
    data: NetworkDataset, beta_hat: np.ndarray, v: int, cfg: SurrogateConfig
) -> Tuple[List[np.ndarray], List[float], List[float]]:
    """Псевдо-отклики, оценки f(0) и ширины окна всех узлов на итерации v"""
    ytilde, f_hat, h_values = [], [], []
    clamped = 0
    for j, node in enumerate(data.nodes):
        s_hat = cfg.oracle_s or max(1, int(np.sum(np.abs(beta_hat[j]) > cfg.zero_tol)))
        h = bandwidth(v, BandwidthSchedule(s_hat, node.n, data.m, cfg.c0))
        raw = density_at_zero(node.y - node.X @ beta_hat[j], h, cfg.kernel)
        if raw <= cfg.density_floor:
            clamped += 1
            logger.warning("v=%d, узел %d: плотность %.3g ограничена снизу", v, j, raw)
        f0 = max(raw, cfg.density_floor)
        ytilde.append(pseudo_response(node.X, node.y, beta_hat[j], f0))
        f_hat.append(f0)
        h_values.append(h)

    if clamped > data.m / 2:
        raise DensityError(f"Плотность ограничена на {clamped} из {data.m} узлов: плохая инициализация")
    return ytilde, f_hat, h_values


def run_outer_loop(
    data: NetworkDataset,
    topo: Topology,
    cfg: SurrogateConfig,
    beta_init: Optional[np.ndarray] = None,
) -> OuterResult:
    """Алгоритм deSMR: инициализация, затем V внешних итераций по T раундов"""
    if topo.m != data.m:
        raise ValueError(f"Топология на {topo.m} узлов, данные на {data.m}")

    if beta_init is None:
        beta_hat, init_lambdas = initial_estimates(data, cfg)
    else:
        beta_hat, init_lambdas = np.array(beta_init, dtype=float), []
    rho = default_step_lengths(data, cfg.rho_margin)

    outer = OuterState(v=0, beta_hat=beta_hat, f_hat=np.full(data.m, np.nan))
    consensus = ConsensusState.start(beta_hat)
    if data.beta_star is not None:
        outer.trace.append(l2_error(beta_hat, data.beta_star))

    for v in range(cfg.V):
        ytilde, f_hat, h_values = surrogate_responses(data, beta_hat, v, cfg)

        lam = select_surrogate_lambda(data, ytilde, cfg.lambda_rule)
        admm_cfg = AdmmConfig(
            tau=cfg.tau,
            rho=rho,
            lam=lam,
            T=cfg.T,
            track_convergence=cfg.track_convergence,
            printed_update=cfg.printed_update,
        )
        inner = run_inner(data, ytilde, topo, beta_hat, admm_cfg)
        beta_hat = inner.state.beta
        consensus = inner.state

        outer.v = v + 1
        outer.beta_hat = beta_hat
        outer.f_hat = np.asarray(f_hat)
        outer.lambdas.append(lam)
        if cfg.track_convergence:
            outer.inner_traces.append(inner.trace)

        if data.beta_star is not None:
            per_node = np.sum((beta_hat - data.beta_star) ** 2, axis=1)
            outer.trace.append(float(per_node.sum()))
            logger.info("v=%d: lambda=%.4g, l2-ошибка=%.4f", v + 1, lam, outer.trace[-1])
        else:
            per_node = np.full(data.m, np.nan)
            logger.info("v=%d: lambda=%.4g", v + 1, lam)
        outer.rows.extend(
            TraceRow(v + 1, j + 1, float(per_node[j]), f_hat[j], h_values[j], lam)
            for j in range(data.m)
        )

    return OuterResult(outer, consensus, init_lambdas, cfg.V * cfg.T)
