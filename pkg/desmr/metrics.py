"""Метрики качества оценок и выбор lambda по BIC"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-4
LOSS_FLOOR = 1e-300
BIC_FORMS = ("high_dim", "classic")


@dataclass(frozen=True)
class Metrics:
    l2_error: float
    recall: float
    precision: float
    f1: float
    rmse: Optional[float] = None
    mae: Optional[float] = None

    def as_dict(self) -> Dict[str, float]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class LambdaRule:
    """Правило выбора lambda: bic (по сетке), fixed или theory.

    theory: lambda = theory_constant * sqrt(log p / N).
    bic_form: high_dim - штраф df log(n) log(p), classic - df log(n).
    """

    mode: str = "bic"
    value: float = 0.0
    grid_size: int = 20
    theory_constant: float = 1.0
    bic_form: str = "high_dim"

    def __post_init__(self):
        if self.mode not in ("bic", "fixed", "theory"):
            raise ValueError(f"Неизвестное правило выбора lambda: {self.mode}")
        if self.grid_size < 2:
            raise ValueError("Размер сетки lambda должен быть >= 2")
        if self.bic_form not in BIC_FORMS:
            raise ValueError(f"Неизвестная форма BIC: {self.bic_form}")

    def theory_value(self, n: int, p: int) -> float:
        return self.theory_constant * math.sqrt(math.log(max(p, 2)) / n)

    def bic_dim(self, p: int) -> Optional[int]:
        """Размерность для штрафа BIC или None для классической формы"""
        return p if self.bic_form == "high_dim" else None


@dataclass
class BicResult:
    lam: float
    beta: np.ndarray
    scores: List[Tuple[float, float]] = field(default_factory=list)


def support_metrics(
    beta_hat: np.ndarray, beta_star: np.ndarray, zero_tol: float = ZERO_TOL
) -> Tuple[float, float, float]:
    """(recall, precision, f1) восстановления носителя"""
    beta_hat, beta_star = np.asarray(beta_hat), np.asarray(beta_star)
    if beta_hat.shape != beta_star.shape:
        raise ValueError(f"Разные длины: {beta_hat.shape} и {beta_star.shape}")
    estimated = np.abs(beta_hat) > zero_tol
    true = beta_star != 0
    hits = int(np.sum(estimated & true))
    n_est, n_true = int(estimated.sum()), int(true.sum())

    recall = hits / n_true if n_true else 1.0
    if n_est:
        precision = hits / n_est
    else:
        precision = 1.0 if n_true == 0 else 0.0
    if precision + recall == 0:
        return recall, precision, 0.0
    return recall, precision, 2 * precision * recall / (precision + recall)


def l2_error(per_node_beta: np.ndarray, beta_star: np.ndarray) -> float:
    """Сумма по узлам квадратов евклидовых расстояний до β*"""
    B = np.atleast_2d(per_node_beta)
    if B.shape[1] != len(beta_star):
        raise ValueError(f"Размеры не совпадают: {B.shape} и {len(beta_star)}")
    return float(np.sum((B - beta_star) ** 2))


def prediction_metrics(beta: np.ndarray, X_test: np.ndarray, y_test: np.ndarray) -> Tuple[float, float]:
    """(rmse, mae) на тестовой выборке"""
    if len(y_test) == 0:
        raise ValueError("Пустая тестовая выборка")
    residuals = y_test - X_test @ beta
    return residual_metrics(residuals)


def residual_metrics(residuals: np.ndarray) -> Tuple[float, float]:
    residuals = np.asarray(residuals, dtype=float)
    return float(np.sqrt(np.mean(residuals**2))), float(np.mean(np.abs(residuals)))


def bic_score(residuals: np.ndarray, df: int, loss: str = "squared", dim: Optional[int] = None) -> float:
    """n log(mean loss) + df log(n), при заданном dim штраф умножается на max(1, log dim)"""
    n = len(residuals)
    values = residuals**2 if loss == "squared" else np.abs(residuals)
    penalty = math.log(n)
    if dim is not None:
        penalty *= max(1.0, math.log(dim))
    return n * math.log(max(float(np.mean(values)), LOSS_FLOOR)) + df * penalty


def bic_select(
    lambda_grid: Sequence[float],
    fit_fn: Callable[[float, Optional[np.ndarray]], np.ndarray],
    residual_fn: Callable[[np.ndarray], np.ndarray],
    loss: str = "squared",
    zero_tol: float = ZERO_TOL,
    dim: Optional[int] = None,
) -> BicResult:
    """Выбирает lambda с минимальным BIC; при равенстве - большее lambda.

    fit_fn(lam, warm_start) проходит по сетке по убыванию lambda, предыдущее
    решение передается как теплый старт.
    """
    if len(lambda_grid) == 0:
        raise ValueError("Пустая сетка lambda")
    if loss not in ("squared", "absolute"):
        raise ValueError(f"Неизвестная функция потерь: {loss}")

    best: Optional[BicResult] = None
    best_score = math.inf
    scores = []
    warm = None
    for lam in sorted(lambda_grid, reverse=True):
        try:
            beta = fit_fn(float(lam), warm)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
            logger.warning("Подгонка при lambda=%.3g не удалась: %s", lam, e)
            continue
        warm = beta
        df = int(np.sum(np.abs(beta) > zero_tol))
        score = bic_score(residual_fn(beta), df, loss, dim)
        scores.append((float(lam), score))
        # Строгое сравнение: при равенстве остается большее lambda
        if score < best_score:
            best_score = score
            best = BicResult(float(lam), beta)

    if best is None:
        raise RuntimeError("Все подгонки по сетке lambda завершились ошибкой")
    best.scores = scores
    logger.debug("BIC выбрал lambda=%.4g (score=%.3f)", best.lam, best_score)
    return best
