"""Централизованные решатели: LAD-lasso (медианная регрессия с l1) и lasso"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from desmr.metrics import LambdaRule, bic_select

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 5000
GRID_RATIO = 1e-3
ADAPT_LIMIT = 50
BALANCE_RATIO = 10.0


class SolverError(RuntimeError):
    """Нечисловые значения в итерациях решателя"""


@dataclass(frozen=True)
class LadLassoProblem:
    """min (1/n)|y - X β|_1 + lambda |β|_1"""

    X: np.ndarray
    y: np.ndarray
    lam: float

    def __post_init__(self):
        X, y = np.asarray(self.X, dtype=float), np.asarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValueError(f"Несогласованные размеры: X {X.shape}, y {y.shape}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda должна быть конечной и >= 0, получено {self.lam}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def objective(self, beta: np.ndarray) -> float:
        return lad_lasso_objective(self.X, self.y, beta, self.lam)


@dataclass
class SolverReport:
    beta: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    objective: float = float("nan")


def soft_threshold(v, t: float) -> np.ndarray:
    """S_t(v)_i = sign(v_i) * max(|v_i| - t, 0)"""
    if t < 0:
        raise ValueError(f"Порог должен быть >= 0, получено {t}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lad_lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    return float(np.mean(np.abs(y - X @ beta)) + lam * np.sum(np.abs(beta)))


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return float(r @ r / (2 * len(y)) + lam * np.sum(np.abs(beta)))


def solve_lad_lasso(
    prob: LadLassoProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    penalty: float = 1.0,
    beta0: Optional[np.ndarray] = None,
    adapt_every: int = 10,
    adapt_limit: int = ADAPT_LIMIT,
) -> SolverReport:
    """ADMM для LAD-lasso с расщеплением r = y - X β и z = β.

    Ограничение z = β умножено на c = sqrt(n), поэтому шаг β решает
    (X^T X + n I) β = X^T (y - r - u) + c (c z - w) с закэшированным
    разложением Холецкого. Шаг r - покоординатный prox от (1/n)|.|_1, шаг z -
    сжатие l1, затем масштабированный двойственный подъем.

    penalty задается в масштабе цели: sigma = penalty / n. Штраф балансирует
    нормированные невязки (прямую по |y|, двойственную по |sigma X^T u|,
    |sigma c w|) и меняется не более adapt_limit раз.
    """
    if tol <= 0:
        raise ValueError(f"tol должен быть > 0, получено {tol}")
    if penalty <= 0:
        raise ValueError(f"Штраф должен быть > 0, получено {penalty}")
    X, y, lam = prob.X, prob.y, prob.lam
    n, p = X.shape
    c2 = float(n)
    c = np.sqrt(c2)

    factor = linalg.cho_factor(X.T @ X + c2 * np.eye(p))
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    z = beta.copy()
    r = y - X @ beta
    u = np.zeros(n)
    w = np.zeros(p)
    sigma = penalty / n
    changes = 0

    best_beta, best_obj = z.copy(), prob.objective(z)
    primal = dual = np.inf
    y_scale = max(1.0, float(np.linalg.norm(y)))
    dual_floor = 1.0 / np.sqrt(n)

    for it in range(1, max_iter + 1):
        beta = linalg.cho_solve(factor, X.T @ (y - r - u) + c * (c * z - w))
        Xb = X @ beta

        r_old, z_old = r, z
        r = soft_threshold(y - Xb - u, 1.0 / (n * sigma))
        z = soft_threshold(beta + w / c, lam / (sigma * c2))

        res_fit = Xb + r - y
        res_copy = c * (beta - z)
        u = u + res_fit
        w = w + res_copy

        primal_abs = np.sqrt(res_fit @ res_fit + res_copy @ res_copy)
        dual_abs = sigma * np.linalg.norm(X.T @ (r - r_old) - c2 * (z - z_old))
        dual_scale = sigma * max(float(np.linalg.norm(X.T @ u)), c * float(np.linalg.norm(w)))
        primal = primal_abs / y_scale
        dual = dual_abs / max(dual_scale, dual_floor)

        if not (np.isfinite(primal) and np.isfinite(dual)):
            raise SolverError(f"Нечисловые невязки на итерации {it}")

        obj = prob.objective(z)
        if obj < best_obj:
            best_obj, best_beta = obj, z.copy()

        if max(primal, dual) < tol:
            return SolverReport(z, it, primal, dual, True, obj)

        if changes < adapt_limit and it % adapt_every == 0:
            if primal > BALANCE_RATIO * dual:
                scale = 2.0
            elif dual > BALANCE_RATIO * primal:
                scale = 0.5
            else:
                scale = 1.0
            if scale != 1.0:
                sigma *= scale
                u /= scale
                w /= scale
                changes += 1

    logger.warning(
        "LAD-lasso не сошелся за %d итераций (primal=%.2e, dual=%.2e)",
        max_iter,
        primal,
        dual,
    )
    return SolverReport(best_beta, max_iter, primal, dual, False, best_obj)


def lambda_grid(X: np.ndarray, y: np.ndarray, k: int = 20) -> np.ndarray:
    """Убывающая логарифмическая сетка lambda для LAD-lasso.

    lambda_max = |X^T sign(y - median(y))|_inf / (2n), с защитой
    |X^T sign(y)|_inf / (2n), при которой β = 0 гарантированно оптимально;
    голова сетки равна 2 * lambda_max, хвост - 1e-3 от головы.

    Без свободного члена β = 0 оптимально только при lambda >= |X^T sign(y)|_inf / n,
    поэтому голова может быть больше, чем дает формула через медиану
    (при k = 2 сетка тогда не равна [2 lambda_med, 2e-3 lambda_med]).
    """
    if k < 2:
        raise ValueError(f"Размер сетки должен быть >= 2, получено {k}")
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    n = len(y)
    lam_max = max(
        np.max(np.abs(X.T @ np.sign(y - np.median(y)))),
        np.max(np.abs(X.T @ np.sign(y))),
    ) / (2 * n)
    head = 2.0 * max(lam_max, np.finfo(float).tiny)
    return np.geomspace(head, head * GRID_RATIO, k)


def lasso_lambda_grid(X: np.ndarray, y: np.ndarray, k: int = 20) -> np.ndarray:
    """Сетка для квадратичных потерь: голова |X^T y|_inf / n обнуляет решение"""
    if k < 2:
        raise ValueError(f"Размер сетки должен быть >= 2, получено {k}")
    head = max(float(np.max(np.abs(X.T @ y))) / len(y), np.finfo(float).tiny)
    return np.geomspace(head, head * GRID_RATIO, k)


def solve_lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 10000,
    beta0: Optional[np.ndarray] = None,
) -> SolverReport:
    """Покоординатный спуск для (1/(2n))|y - X β|^2 + lambda |β|_1.

    Работает на ковариационных обновлениях: G = X^T X / n, c = X^T y / n.
    """
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    n, p = X.shape
    gram = X.T @ X / n
    corr = X.T @ y / n
    diag = np.diag(gram).copy()
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    grad_part = gram @ beta

    delta = np.inf
    for sweep in range(1, max_iter + 1):
        delta = 0.0
        for i in range(p):
            if diag[i] == 0:
                continue
            old = beta[i]
            rho_i = corr[i] - grad_part[i] + diag[i] * old
            new = np.sign(rho_i) * max(abs(rho_i) - lam, 0.0) / diag[i]
            if new != old:
                grad_part += gram[:, i] * (new - old)
                beta[i] = new
                delta = max(delta, abs(new - old))
        if not np.isfinite(delta):
            raise SolverError("Нечисловые значения в покоординатном спуске")
        if delta < tol:
            return SolverReport(beta, sweep, delta, 0.0, True, lasso_objective(X, y, beta, lam))

    logger.warning("Покоординатный спуск не сошелся: max|Δβ|=%.2e", delta)
    return SolverReport(beta, max_iter, delta, 0.0, False, lasso_objective(X, y, beta, lam))


def fit_lad_lasso(
    X: np.ndarray,
    y: np.ndarray,
    rule: LambdaRule,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Tuple[float, SolverReport]:
    """LAD-lasso с lambda по правилу; BIC считается по абсолютным остаткам"""
    if rule.mode == "fixed":
        lam = rule.value
    elif rule.mode == "theory":
        lam = rule.theory_value(*X.shape)
    else:
        reports = {}

        def fit(lam: float, warm: Optional[np.ndarray]) -> np.ndarray:
            report = solve_lad_lasso(LadLassoProblem(X, y, lam), tol, max_iter, beta0=warm)
            reports[lam] = report
            return report.beta

        chosen = bic_select(
            lambda_grid(X, y, rule.grid_size),
            fit,
            lambda b: y - X @ b,
            loss="absolute",
            dim=rule.bic_dim(X.shape[1]),
        )
        return chosen.lam, reports[chosen.lam]
    return lam, solve_lad_lasso(LadLassoProblem(X, y, lam), tol, max_iter)


def fit_lasso(
    X: np.ndarray,
    y: np.ndarray,
    rule: LambdaRule,
    tol: float = 1e-8,
    max_iter: int = 10000,
) -> Tuple[float, SolverReport]:
    """Lasso (квадратичные потери) с lambda по правилу"""
    if rule.mode == "fixed":
        lam = rule.value
    elif rule.mode == "theory":
        lam = rule.theory_value(*X.shape)
    else:
        reports = {}

        def fit(lam: float, warm: Optional[np.ndarray]) -> np.ndarray:
            report = solve_lasso_cd(X, y, lam, tol, max_iter, beta0=warm)
            reports[lam] = report
            return report.beta

        chosen = bic_select(
            lasso_lambda_grid(X, y, rule.grid_size), fit, lambda b: y - X @ b, dim=rule.bic_dim(X.shape[1])
        )
        return chosen.lam, reports[chosen.lam]
    return lam, solve_lasso_cd(X, y, lam, tol, max_iter)
