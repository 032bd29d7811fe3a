"""Методы сравнения: Pooled MR, Local MR, Avg. MR, D-subGD, deLR и обертка deSMR"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from desmr.consensus_admm import AdmmConfig, DivergenceError, default_step_lengths, run_inner
from desmr.datagen import NetworkDataset
from desmr.lad_solver import fit_lad_lasso, fit_lasso
from desmr.metrics import LambdaRule
from desmr.netsim import Topology, metropolis_weights, run_rounds
from desmr.surrogate import SurrogateConfig, fit_local_lad, run_outer_loop, select_surrogate_lambda

logger = logging.getLogger(__name__)

METHODS = ("desmr", "delr", "d_subgd", "pooled_mr", "local_mr", "avg_mr")
DEFAULT_ETA0 = 0.1
DIVERGENCE_FACTOR = 1e6


@dataclass
class MethodResult:
    per_node_beta: np.ndarray
    method_id: str
    wall_time: float = 0.0
    iterations: int = 0
    lambdas: List[float] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)


def _replicate(beta: np.ndarray, m: int) -> np.ndarray:
    return np.tile(np.asarray(beta, dtype=float), (m, 1))


def pooled_mr(
    data: NetworkDataset,
    lambda_rule: LambdaRule = LambdaRule(),
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> MethodResult:
    """Одна LAD-lasso задача на объединенных данных; оценка копируется на все узлы"""
    started = time.perf_counter()
    X, y = data.pooled()
    lam, report = fit_lad_lasso(X, y, lambda_rule, tol, max_iter)
    if not report.converged:
        logger.warning("Pooled MR: решатель не сошелся, используется лучшая итерация")
    return MethodResult(
        per_node_beta=_replicate(report.beta, data.m),
        method_id="pooled_mr",
        wall_time=time.perf_counter() - started,
        iterations=report.iterations,
        lambdas=[lam],
    )


def local_mr(
    data: NetworkDataset,
    lambda_rule: Optional[LambdaRule] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> MethodResult:
    """Независимые LAD-lasso оценки узлов.

    Значения по умолчанию совпадают с инициализацией deSMR, так что результат
    идентичен начальным оценкам при тех же данных.
    """
    defaults = SurrogateConfig()
    started = time.perf_counter()
    betas, lambdas, iterations, failures = fit_local_lad(
        data,
        lambda_rule or defaults.init_rule,
        tol or defaults.init_tol,
        max_iter or defaults.init_max_iter,
        skip_failures=True,
    )
    return MethodResult(
        per_node_beta=betas,
        method_id="local_mr",
        wall_time=time.perf_counter() - started,
        iterations=max(iterations),
        lambdas=lambdas,
        failures=failures,
    )


def avg_mr(local: MethodResult) -> MethodResult:
    """Каждая строка заменяется средним по узлам"""
    mean = np.mean(local.per_node_beta, axis=0)
    return replace(
        local,
        per_node_beta=_replicate(mean, local.per_node_beta.shape[0]),
        method_id="avg_mr",
        lambdas=list(local.lambdas),
        failures=list(local.failures),
    )


def lad_subgradient(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> np.ndarray:
    """Субградиент (1/n)|y - X β|_1 + lambda |β|_1; в нуле берется 0"""
    return -X.T @ np.sign(y - X @ beta) / X.shape[0] + lam * np.sign(beta)


def d_subgd(
    data: NetworkDataset,
    topo: Topology,
    init: np.ndarray,
    steps: int = 500,
    eta0: float = DEFAULT_ETA0,
    lam: float = 0.0,
    max_workers: Optional[int] = None,
) -> MethodResult:
    """Децентрализованный субградиентный спуск с весами Метрополиса.

    β^(j) <- sum_k W_jk β^(k) - eta_t g^(j), eta_t = eta0 / sqrt(t).
    """
    if topo.m != data.m:
        raise ValueError(f"Топология на {topo.m} узлов, данные на {data.m}")
    if eta0 < 0 or lam < 0:
        raise ValueError(f"Нужно eta0 >= 0 и lambda >= 0: eta0={eta0}, lambda={lam}")

    started = time.perf_counter()
    weights = metropolis_weights(topo)
    init = np.array(init, dtype=float)
    limit = DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(init)))
    trace: List[float] = []

    def make_update(eta: float):
        def update(j: int, own: np.ndarray, neighbors: Dict[int, np.ndarray]) -> np.ndarray:
            mixed = weights[j, j] * own
            for k, beta_k in neighbors.items():
                mixed = mixed + weights[j, k] * beta_k
            node = data.nodes[j]
            return mixed - eta * lad_subgradient(node.X, node.y, own, lam)

        return update

    states = list(init)
    for t in range(1, steps + 1):
        states = run_rounds(topo, states, make_update(eta0 / np.sqrt(t)), 1, max_workers=max_workers)
        B = np.vstack(states)
        norm = float(np.linalg.norm(B))
        if not np.isfinite(norm) or norm > limit:
            raise DivergenceError(f"D-subGD расходится на раунде {t} (|B|={norm:.3e})")
        if data.beta_star is not None:
            trace.append(float(np.sum((B - data.beta_star) ** 2)))
    return MethodResult(
        per_node_beta=np.vstack(states),
        method_id="d_subgd",
        wall_time=time.perf_counter() - started,
        iterations=steps,
        lambdas=[lam],
        trace=trace,
    )


def delr(data: NetworkDataset, topo: Topology, cfg: Optional[SurrogateConfig] = None) -> MethodResult:
    """Децентрализованный lasso: внутренний ADMM на исходных откликах, V*T раундов"""
    cfg = cfg or SurrogateConfig()
    started = time.perf_counter()
    init = np.vstack([fit_lasso(node.X, node.y, cfg.init_rule)[1].beta for node in data.nodes])
    responses = [node.y for node in data.nodes]
    lam = select_surrogate_lambda(data, responses, cfg.lambda_rule)
    rounds = max(1, cfg.V * cfg.T)
    admm_cfg = AdmmConfig(
        tau=cfg.tau,
        rho=default_step_lengths(data, cfg.rho_margin),
        lam=lam,
        T=rounds,
        printed_update=cfg.printed_update,
    )
    inner = run_inner(data, responses, topo, init, admm_cfg)
    logger.info("deLR: lambda=%.4g, раундов %d", lam, rounds)
    return MethodResult(
        per_node_beta=inner.state.beta,
        method_id="delr",
        wall_time=time.perf_counter() - started,
        iterations=rounds,
        lambdas=[lam],
    )


def desmr(data: NetworkDataset, topo: Topology, cfg: Optional[SurrogateConfig] = None) -> MethodResult:
    """deSMR в общем формате результатов методов"""
    cfg = cfg or SurrogateConfig()
    started = time.perf_counter()
    result = run_outer_loop(data, topo, cfg)
    return MethodResult(
        per_node_beta=result.outer.beta_hat,
        method_id="desmr",
        wall_time=time.perf_counter() - started,
        iterations=result.rounds,
        lambdas=list(result.outer.lambdas),
        trace=list(result.outer.trace),
    )
