"""Генерация синтетических данных, внедрение выбросов и загрузка CSV"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from desmr.netsim import Topology, add_hub_node

logger = logging.getLogger(__name__)

OUTLIER_RESPONSE = 12.0
OUTLIER_FRACTION = 1.0 / 9.0
NOISE_FAMILIES = ("normal", "exponential", "cauchy", "student_t")
HETERO_SIGMA2 = (1.0, 3.0)
HETERO_RHO = (0.1, 0.3)


@dataclass
class NodeDataset:
    """Локальные данные одного узла"""

    X: np.ndarray
    y: np.ndarray
    X_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"Размеры X {self.X.shape} и y {self.y.shape} не согласованы")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("Данные узла содержат нечисловые значения")
        if self.X_test is not None:
            self.X_test = np.asarray(self.X_test, dtype=float)
            self.y_test = np.asarray(self.y_test, dtype=float)
            if self.X_test.shape[1] != self.X.shape[1]:
                raise ValueError("Ширина тестовой выборки не совпадает с обучающей")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class NetworkDataset:
    """Данные всей сети; beta_star известен только для синтетики"""

    nodes: List[NodeDataset]
    beta_star: Optional[np.ndarray] = None
    support: Optional[Tuple[int, ...]] = None
    feature_names: Optional[List[str]] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("Сеть без узлов")
        widths = {node.p for node in self.nodes}
        if len(widths) != 1:
            raise ValueError(f"Размерность p различается между узлами: {sorted(widths)}")
        if self.beta_star is not None:
            self.beta_star = np.asarray(self.beta_star, dtype=float)
            if self.beta_star.shape != (self.p,):
                raise ValueError("Длина beta_star не совпадает с p")
            self.support = tuple(int(i) for i in np.flatnonzero(self.beta_star))

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def p(self) -> int:
        return self.nodes[0].p

    @property
    def total_n(self) -> int:
        return sum(node.n for node in self.nodes)

    def pooled(self) -> Tuple[np.ndarray, np.ndarray]:
        """Все обучающие строки, сложенные в одну выборку"""
        return (
            np.vstack([node.X for node in self.nodes]),
            np.concatenate([node.y for node in self.nodes]),
        )


@dataclass(frozen=True)
class CovSpec:
    """Ковариация AR(1): Σ_ij = sigma2 * rho^|i-j|"""

    sigma2: float = 1.0
    rho: float = 0.1

    def __post_init__(self):
        if self.sigma2 <= 0 or not 0.0 <= self.rho < 1.0:
            raise ValueError(f"Некорректная ковариация: sigma2={self.sigma2}, rho={self.rho}")

    def matrix(self, p: int) -> np.ndarray:
        return self.sigma2 * linalg.toeplitz(self.rho ** np.arange(p))


@dataclass(frozen=True)
class NoiseSpec:
    """Распределение шума: normal(loc, scale), exponential(rate),
    cauchy(loc, scale), student_t(df)"""

    family: str = "normal"
    loc: float = 0.0
    scale: float = 1.0
    rate: float = 1.0
    df: float = 1.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"Неизвестное семейство шума: {self.family}")
        if self.scale < 0 or self.rate <= 0 or self.df <= 0:
            raise ValueError(f"Недопустимые параметры шума: {self}")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Разбирает строки вида `normal`, `cauchy(0,1)`, `t(1)`, `exp(1)`, `zero`"""
        name, _, args = text.strip().lower().partition("(")
        values = [float(a) for a in args.rstrip(")").split(",") if a.strip()]
        aliases = {"exp": "exponential", "t": "student_t", "student": "student_t"}
        name = aliases.get(name, name)
        if name == "zero":
            return cls("normal", 0.0, 0.0)
        if name in ("normal", "cauchy"):
            loc, scale = (values + [0.0, 1.0][len(values):])[:2]
            return cls(name, loc=loc, scale=scale)
        if name == "exponential":
            return cls(name, rate=values[0] if values else 1.0)
        if name == "student_t":
            return cls(name, df=values[0] if values else 1.0)
        raise ValueError(f"Неизвестное семейство шума: {text}")


# Четыре семейства, используемые при неоднородном шуме
HETERO_NOISES = (
    NoiseSpec("normal"),
    NoiseSpec("exponential"),
    NoiseSpec("cauchy"),
    NoiseSpec("student_t", df=1.0),
)

CovMode = Union[CovSpec, str]
NoiseMode = Union[NoiseSpec, str]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_covariates(n: int, p: int, cov: CovSpec, seed=None) -> np.ndarray:
    """Строки i.i.d. N(0, Σ) через разложение Холецкого Σ = L L^T"""
    if n < 1 or p < 1:
        raise ValueError(f"n и p должны быть >= 1: n={n}, p={p}")
    try:
        lower = linalg.cholesky(cov.matrix(p), lower=True)
    except linalg.LinAlgError as e:
        raise ValueError(f"Ковариация не положительно определена: {cov}") from e
    z = _rng(seed).standard_normal((n, p))
    return z @ lower.T


def sample_noise(spec: NoiseSpec, n: int, seed=None) -> np.ndarray:
    """i.i.d. шум.

    Коши: loc + scale * Z1 / Z2 (отношение двух стандартных нормальных).
    t(1) совпадает с Коши и генерируется обратной функцией распределения
    tan(pi * (U - 1/2)); для df != 1 используется Z / sqrt(chi2_df / df).
    """
    if n < 1:
        raise ValueError(f"n должно быть >= 1, получено {n}")
    rng = _rng(seed)
    if spec.family == "normal":
        return spec.loc + spec.scale * rng.standard_normal(n)
    if spec.family == "exponential":
        return rng.exponential(1.0 / spec.rate, n)
    if spec.family == "cauchy":
        ratio = rng.standard_normal(n) / rng.standard_normal(n)
        return spec.loc + spec.scale * ratio
    if spec.df == 1.0:
        return np.tan(np.pi * (rng.random(n) - 0.5))
    return rng.standard_normal(n) / np.sqrt(rng.chisquare(spec.df, n) / spec.df)


def sparse_beta(p: int, s: int = 10) -> np.ndarray:
    """β* = (1, 2, ..., s, 0, ..., 0)"""
    beta = np.zeros(p)
    beta[: min(s, p)] = np.arange(1, min(s, p) + 1)
    return beta


def gen_network_data(
    m: int,
    n: int,
    p: int,
    beta_star: np.ndarray,
    cov_mode: CovMode = CovSpec(),
    noise_mode: NoiseMode = NoiseSpec(),
    seed: Optional[int] = None,
    n_test: int = 0,
) -> NetworkDataset:
    """Синтетическая сеть: y = X β* + ε на каждом узле.

    cov_mode / noise_mode - либо спецификация (однородный режим), либо
    строка "per_node_random". Потоки ГСЧ узлов выводятся из (seed, j).
    """
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape != (p,):
        raise ValueError(f"Длина beta_star {beta_star.shape} не совпадает с p={p}")

    streams = np.random.SeedSequence(seed).spawn(m)
    nodes = []
    node_specs = []
    for j, stream in enumerate(streams):
        choice_rng, x_rng, noise_rng = (np.random.default_rng(s) for s in stream.spawn(3))

        if isinstance(cov_mode, CovSpec):
            cov = cov_mode
        elif cov_mode == "per_node_random":
            cov = CovSpec(
                sigma2=float(choice_rng.choice(HETERO_SIGMA2)),
                rho=float(choice_rng.choice(HETERO_RHO)),
            )
        else:
            raise ValueError(f"Неизвестный режим ковариации: {cov_mode}")

        if isinstance(noise_mode, NoiseSpec):
            noise = noise_mode
        elif noise_mode == "per_node_random":
            noise = HETERO_NOISES[int(choice_rng.integers(len(HETERO_NOISES)))]
        else:
            raise ValueError(f"Неизвестный режим шума: {noise_mode}")

        X = gen_covariates(n + n_test, p, cov, x_rng)
        eps = sample_noise(noise, n + n_test, noise_rng)
        y = X @ beta_star + eps
        nodes.append(
            NodeDataset(
                X[:n],
                y[:n],
                X[n:] if n_test else None,
                y[n:] if n_test else None,
            )
        )
        node_specs.append({"sigma2": cov.sigma2, "rho": cov.rho, "noise": noise.family})
        logger.debug("Узел %d: %s", j, node_specs[-1])

    return NetworkDataset(
        nodes=nodes,
        beta_star=beta_star,
        meta={"seed": seed, "node_specs": node_specs},
    )


def inject_outliers(
    data: NetworkDataset,
    scenario: str,
    seed=None,
    topology: Optional[Topology] = None,
    fraction: float = OUTLIER_FRACTION,
    response: float = OUTLIER_RESPONSE,
) -> Tuple[NetworkDataset, Optional[Topology]]:
    """Внедряет выбросы: ковариаты N(0, 1), отклик равен `response`.

    balanced - каждому узлу добавляется ceil(n_j * fraction) строк;
    attacker_node - новый узел с ceil(N * fraction) строками, соединенный со
    всеми узлами (возвращается расширенная топология). Входные данные не
    изменяются.
    """
    rng = _rng(seed)
    p = data.p

    def outliers(count: int) -> Tuple[np.ndarray, np.ndarray]:
        return rng.standard_normal((count, p)), np.full(count, response)

    if scenario == "clean" or fraction == 0:
        return replace(data, nodes=list(data.nodes)), topology

    if scenario == "balanced":
        nodes = []
        for node in data.nodes:
            X_out, y_out = outliers(math.ceil(node.n * fraction))
            nodes.append(
                NodeDataset(
                    np.vstack([node.X, X_out]),
                    np.concatenate([node.y, y_out]),
                    node.X_test,
                    node.y_test,
                )
            )
        logger.info("Добавлены выбросы на каждый из %d узлов", data.m)
        return replace(data, nodes=nodes), topology

    if scenario == "attacker_node":
        X_out, y_out = outliers(math.ceil(data.total_n * fraction))
        nodes = list(data.nodes) + [NodeDataset(X_out, y_out)]
        augmented = add_hub_node(topology) if topology is not None else None
        logger.info("Добавлен атакующий узел с %d строками", len(y_out))
        return replace(data, nodes=nodes), augmented

    raise ValueError(f"Неизвестный сценарий выбросов: {scenario}")


def load_group_map(path: str, key_column: str, value_column: str = "division") -> Dict:
    """Таблица соответствия группа -> узел (например, штат -> округ)"""
    table = pd.read_csv(path, dtype={key_column: str})
    return dict(zip(table[key_column].astype(str).str.strip(), table[value_column]))


def load_csv(
    path: str,
    response_column: str,
    group_column: str,
    drop_missing: bool = True,
    standardize: bool = True,
    seed=None,
    group_map: Optional[Dict] = None,
    drop_columns: Sequence[str] = (),
    max_missing_fraction: float = 0.5,
    test_fraction: float = 0.2,
    standardize_response: bool = True,
) -> NetworkDataset:
    """Загружает CSV с заголовком и разбивает строки на узлы по группе.

    Столбцы с долей пропусков выше max_missing_fraction удаляются, затем
    удаляются строки с пропусками. Стандартизация использует статистики
    обучающей части (80/20 на каждом узле).
    """
    try:
        frame = pd.read_csv(path, na_values=["?"], skipinitialspace=True)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ValueError(f"Не удалось прочитать {path}: {e}") from e

    for column in (response_column, group_column):
        if column not in frame.columns:
            raise ValueError(f"Столбец {column} отсутствует в {path}")

    frame = frame.drop(columns=[c for c in drop_columns if c in frame.columns])
    if group_map is not None:
        keys = frame[group_column].astype(str).str.strip()
        unknown = sorted(set(keys) - set(group_map))
        if unknown:
            logger.warning("Группы без соответствия отброшены: %s", unknown)
        frame = frame.assign(**{group_column: keys.map(group_map)})
        frame = frame[frame[group_column].notna()]

    if drop_missing:
        missing = frame.isna().mean()
        sparse_columns = [c for c in missing.index if missing[c] > max_missing_fraction]
        frame = frame.drop(columns=sparse_columns).dropna()
        logger.info(
            "Удалено столбцов с пропусками: %d, осталось строк: %d",
            len(sparse_columns),
            len(frame),
        )

    predictors = [c for c in frame.columns if c not in (response_column, group_column)]
    non_numeric = [c for c in predictors if not pd.api.types.is_numeric_dtype(frame[c])]
    if non_numeric:
        raise ValueError(f"Нечисловые предикторы: {non_numeric}")

    rng = _rng(seed)
    splits = []
    for group in sorted(frame[group_column].unique()):
        rows = frame[frame[group_column] == group]
        if len(rows) < 2:
            raise ValueError(f"Пустой узел для группы {group}")
        perm = rng.permutation(len(rows))
        n_test = int(round(len(rows) * test_fraction))
        splits.append((group, rows.iloc[perm[n_test:]], rows.iloc[perm[:n_test]]))

    train = pd.concat([s[1] for s in splits])
    std = train[predictors].std(ddof=0)
    constant = [c for c in predictors if not std[c] > 0]
    if constant:
        logger.warning("Столбцы с нулевой дисперсией удалены: %s", constant)
        predictors = [c for c in predictors if c not in constant]

    mean_x, std_x = train[predictors].mean(), train[predictors].std(ddof=0)
    mean_y, std_y = train[response_column].mean(), train[response_column].std(ddof=0)
    scale_y = standardize and standardize_response and std_y > 0

    def convert(part: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
        X = part[predictors].to_numpy(dtype=float)
        y = part[response_column].to_numpy(dtype=float)
        if standardize:
            X = (X - mean_x.to_numpy()) / std_x.to_numpy()
        if scale_y:
            y = (y - mean_y) / std_y
        return X, y

    nodes = []
    for group, train_rows, test_rows in splits:
        X, y = convert(train_rows)
        X_test, y_test = convert(test_rows) if len(test_rows) else (None, None)
        nodes.append(NodeDataset(X, y, X_test, y_test))
        logger.debug("Узел %s: %d обучающих, %d тестовых строк", group, len(y), len(test_rows))

    return NetworkDataset(
        nodes=nodes,
        feature_names=predictors,
        meta={"groups": [str(s[0]) for s in splits], "source": str(path)},
    )


def save_dataset(data: NetworkDataset, directory: str, seed=None) -> Path:
    """Сохраняет сеть: CSV на каждый узел и manifest.json"""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    columns = data.feature_names or [f"x{i + 1}" for i in range(data.p)]
    for j, node in enumerate(data.nodes, start=1):
        parts = [("train", node.X, node.y)]
        if node.X_test is not None:
            parts.append(("test", node.X_test, node.y_test))
        frame = pd.concat(
            [pd.DataFrame(X, columns=columns).assign(y=y, split=split) for split, X, y in parts]
        )
        frame.to_csv(out / f"node_{j:03d}.csv", index=False)

    manifest = {
        "m": data.m,
        "n": [node.n for node in data.nodes],
        "p": data.p,
        "beta_star": None if data.beta_star is None else data.beta_star.tolist(),
        "seed": seed if seed is not None else data.meta.get("seed"),
        "feature_names": columns,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
    logger.info("Данные сохранены в %s", out)
    return out


def load_dataset(directory: str) -> NetworkDataset:
    """Обратная операция к save_dataset"""
    src = Path(directory)
    with open(src / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    columns = manifest["feature_names"]
    nodes = []
    for j in range(1, manifest["m"] + 1):
        frame = pd.read_csv(src / f"node_{j:03d}.csv")
        train, test = frame[frame["split"] == "train"], frame[frame["split"] == "test"]
        has_test = len(test) > 0
        nodes.append(
            NodeDataset(
                train[columns].to_numpy(dtype=float),
                train["y"].to_numpy(dtype=float),
                test[columns].to_numpy(dtype=float) if has_test else None,
                test["y"].to_numpy(dtype=float) if has_test else None,
            )
        )
    beta_star = manifest.get("beta_star")
    return NetworkDataset(
        nodes=nodes,
        beta_star=None if beta_star is None else np.asarray(beta_star),
        feature_names=columns,
        meta={"seed": manifest.get("seed")},
    )
