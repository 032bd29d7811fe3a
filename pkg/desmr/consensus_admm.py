"""Обобщенный консенсусный ADMM для l1-регуляризованных наименьших квадратов.

Узел j хранит β^(j) и накопленную двойственную переменную p^(j). За раунд:

    p^(j) <- p^(j) + tau * sum_{k in N(j)} (β^(j) - β^(k))
    β^(j) <- prox_{θ_j}[ω_j (ρ_j β^(j) - ∇f_j(β^(j)) - p^(j) + tau * sum_k (β^(j) + β^(k)))]

где f_j(β) = |ỹ^(j) - X^(j) β|^2 / (2N), N - общий объем выборки,
ω_j = 1 / (2 tau |N(j)| + ρ_j) и θ_j = (lambda / m) ω_j. Неподвижная точка совпадает с решением
(1/(2N)) |ỹ - X β|^2 + lambda |β|_1 на объединенных данных.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from desmr.datagen import NetworkDataset
from desmr.lad_solver import soft_threshold
from desmr.netsim import Topology, run_rounds

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1.0
RHO_MARGIN = 1.05

# prox(v, threshold) -> вектор; по умолчанию мягкий порог (l1)
ProximalOperator = Callable[[np.ndarray, float], np.ndarray]


class DivergenceError(RuntimeError):
    """Итерации расходятся (рост шага или нечисловые значения)"""


@dataclass
class ConsensusState:
    beta: np.ndarray
    p_dual: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, init_beta: np.ndarray) -> "ConsensusState":
        """Начало внешней итерации: β = β̂_v, p = 0"""
        beta = np.array(init_beta, dtype=float)
        return cls(beta=beta, p_dual=np.zeros_like(beta), t=0)


@dataclass
class AdmmConfig:
    tau: float = DEFAULT_TAU
    rho: Optional[Sequence[float]] = None
    lam: float = 0.0
    T: int = 50
    track_convergence: bool = False
    printed_update: bool = False
    prox: ProximalOperator = soft_threshold
    reference_factor: int = 20
    divergence_window: int = 10
    fit_window: Tuple[int, int] = (10, 60)
    max_workers: Optional[int] = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau должен быть > 0, получено {self.tau}")
        if self.T < 1:
            raise ValueError(f"T должно быть >= 1, получено {self.T}")
        if self.lam < 0:
            raise ValueError(f"lambda должна быть >= 0, получено {self.lam}")


@dataclass
class ConvergenceTrace:
    distances: List[float] = field(default_factory=list)
    consensus_gaps: List[float] = field(default_factory=list)
    slope: Optional[float] = None
    r_squared: Optional[float] = None
    gamma_hat: Optional[float] = None

    def to_frame(self) -> pd.DataFrame:
        rounds = range(len(self.consensus_gaps))
        distances = self.distances or [float("nan")] * len(self.consensus_gaps)
        return pd.DataFrame(
            {
                "round": list(rounds),
                "frobenius_distance": distances,
                "max_pairwise_consensus_gap": self.consensus_gaps,
            }
        )


@dataclass
class InnerResult:
    state: ConsensusState
    trace: ConvergenceTrace


class _NodeState(NamedTuple):
    beta: np.ndarray
    p_dual: np.ndarray


def max_eigenvalue(X: np.ndarray, tol: float = 1e-12, max_iter: int = 10000, seed: int = 0) -> float:
    """Наибольшее собственное значение (1/n) X^T X степенным методом"""
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        raise ValueError("Матрица X нулевая")
    gram = X.T @ X / X.shape[0]
    vec = np.random.default_rng(seed).standard_normal(gram.shape[0])
    vec /= np.linalg.norm(vec)

    value = 0.0
    for _ in range(max_iter):
        nxt = gram @ vec
        norm = np.linalg.norm(nxt)
        if norm == 0:
            break
        new_value = float(vec @ nxt)
        vec = nxt / norm
        if abs(new_value - value) <= tol * abs(new_value):
            return new_value
        value = new_value

    bound = float(np.trace(gram))
    logger.warning("Степенной метод не сошелся, используется оценка сверху trace=%.4g", bound)
    return bound


def default_step_lengths(data: NetworkDataset, margin: float = RHO_MARGIN) -> List[float]:
    """ρ_j = margin * lambda_max((1/n) X^(j)T X^(j))"""
    return [margin * max_eigenvalue(node.X) for node in data.nodes]


def _dual_increment(beta_j: np.ndarray, neighbor_betas: Sequence[np.ndarray]) -> np.ndarray:
    return len(neighbor_betas) * beta_j - np.sum(neighbor_betas, axis=0)


def _beta_update(
    beta_j: np.ndarray,
    neighbor_betas: Sequence[np.ndarray],
    p_new: np.ndarray,
    X: np.ndarray,
    ytilde: np.ndarray,
    rho: float,
    cfg: AdmmConfig,
    m: int,
    total_n: int,
) -> np.ndarray:
    degree = len(neighbor_betas)
    grad = X.T @ (X @ beta_j - ytilde) / total_n
    neighbor_sum = degree * beta_j + np.sum(neighbor_betas, axis=0)
    if cfg.printed_update:
        omega = 1.0 / (cfg.tau * degree + rho)
        threshold = 2.0 * cfg.lam * omega
    else:
        omega = 1.0 / (2.0 * cfg.tau * degree + rho)
        threshold = cfg.lam / m * omega
    updated = cfg.prox(omega * (rho * beta_j - grad - p_new + cfg.tau * neighbor_sum), threshold)
    if not np.all(np.isfinite(updated)):
        raise DivergenceError("Нечисловое обновление β: ρ слишком мало или данные вырождены")
    return updated


def admm_step_p(state: ConsensusState, topo: Topology, tau: float) -> np.ndarray:
    """p^(j)_{t+1} = p^(j)_t + tau * sum_{k in N(j)} (β^(j)_t - β^(k)_t)"""
    p_new = np.empty_like(state.p_dual)
    for j in range(topo.m):
        neighbors = [state.beta[k] for k in topo.neighbors[j]]
        p_new[j] = state.p_dual[j] + tau * _dual_increment(state.beta[j], neighbors)
    return p_new


def admm_step_beta(
    state: ConsensusState,
    j: int,
    X: np.ndarray,
    ytilde: np.ndarray,
    cfg: AdmmConfig,
    topo: Topology,
    total_n: Optional[int] = None,
) -> np.ndarray:
    """Обновление β^(j); state.p_dual уже должен содержать p_{t+1}.

    total_n по умолчанию m * n_j (узлы одного размера).
    """
    if cfg.rho is None:
        raise ValueError("Шаги ρ_j не заданы")
    neighbors = [state.beta[k] for k in topo.neighbors[j]]
    total_n = total_n or topo.m * X.shape[0]
    return _beta_update(state.beta[j], neighbors, state.p_dual[j], X, ytilde, cfg.rho[j], cfg, topo.m, total_n)


def consensus_gap(beta: np.ndarray, topo: Topology) -> float:
    """max по ребрам |β^(j) - β^(k)|_inf"""
    return max(float(np.max(np.abs(beta[j] - beta[k]))) for j, k in topo.edges())


def fit_linear_rate(distances: Sequence[float], window: Tuple[int, int]) -> Tuple[Optional[float], Optional[float]]:
    """Наклон и R^2 линейной регрессии log(distance) от номера раунда"""
    start, stop = window
    points = [(t, d) for t, d in enumerate(distances) if start <= t <= stop and d > 0]
    if len(points) < 3:
        return None, None
    rounds, values = zip(*points)
    fit = stats.linregress(rounds, np.log(values))
    return float(fit.slope), float(fit.rvalue**2)


def run_inner(
    data: NetworkDataset,
    ytilde: Sequence[np.ndarray],
    topo: Topology,
    init_beta: np.ndarray,
    cfg: AdmmConfig,
) -> InnerResult:
    """T синхронных раундов обновления p, затем β на каждом узле"""
    if topo.m != data.m or len(ytilde) != data.m:
        raise ValueError("Число узлов данных, откликов и топологии не совпадает")
    rho = list(cfg.rho) if cfg.rho is not None else default_step_lengths(data)

    def update(j: int, own: _NodeState, neighbors: Dict[int, _NodeState]) -> _NodeState:
        neighbor_betas = [neighbors[k].beta for k in topo.neighbors[j]]
        p_new = own.p_dual + cfg.tau * _dual_increment(own.beta, neighbor_betas)
        beta_new = _beta_update(
            own.beta, neighbor_betas, p_new, data.nodes[j].X, ytilde[j], rho[j], cfg, topo.m, data.total_n
        )
        return _NodeState(beta_new, p_new)

    start = ConsensusState.start(init_beta)
    states = [_NodeState(start.beta[j], start.p_dual[j]) for j in range(topo.m)]
    iterates = [start.beta.copy()]
    steps: List[float] = []

    def watch(round_no: int, current: List[_NodeState]) -> None:
        B = np.vstack([s.beta for s in current])
        steps.append(float(np.linalg.norm(B - iterates[-1])))
        iterates.append(B)
        window = cfg.divergence_window
        if len(steps) > window:
            recent = steps[-window - 1:]
            growing = all(b > a for a, b in zip(recent, recent[1:]))
            if growing and steps[-1] > steps[0]:
                raise DivergenceError(
                    f"Шаг итераций растет {window} раундов подряд (раунд {round_no}, "
                    f"|ΔB|={steps[-1]:.3e})"
                )

    states = run_rounds(topo, states, update, cfg.T, max_workers=cfg.max_workers, on_round=watch)
    state = ConsensusState(
        beta=np.vstack([s.beta for s in states]),
        p_dual=np.vstack([s.p_dual for s in states]),
        t=cfg.T,
    )

    trace = ConvergenceTrace(consensus_gaps=[consensus_gap(B, topo) for B in iterates])
    if cfg.track_convergence:
        reference = run_rounds(topo, states, update, cfg.reference_factor * cfg.T, max_workers=cfg.max_workers)
        B_ref = np.vstack([s.beta for s in reference])
        trace.distances = [float(np.linalg.norm(B - B_ref)) for B in iterates]
        trace.slope, trace.r_squared = fit_linear_rate(trace.distances, cfg.fit_window)
        if trace.slope is not None:
            trace.gamma_hat = float(np.exp(trace.slope))
        logger.info(
            "Внутренний цикл: gamma=%s, R^2=%s",
            "n/a" if trace.gamma_hat is None else f"{trace.gamma_hat:.4f}",
            "n/a" if trace.r_squared is None else f"{trace.r_squared:.4f}",
        )
    return InnerResult(state=state, trace=trace)
