"""Топологии сети и синхронное (bulk-synchronous) выполнение раундов"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

S = TypeVar("S")

MAX_RESAMPLE_ATTEMPTS = 1000


class TopologyError(ValueError):
    """Некорректная топология (петли, несвязность, неверные индексы)"""


@dataclass(frozen=True)
class Topology:
    """Неориентированный граф из m узлов.

    Индексы узлов внутри всегда 0-based; перевод из 1-based выполняется
    только при чтении внешних файлов.
    """

    m: int
    adjacency: np.ndarray
    neighbors: Tuple[Tuple[int, ...], ...]
    degrees: Tuple[int, ...]

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> "Topology":
        """Создает топологию из матрицы смежности с полной проверкой"""
        adj = np.asarray(adjacency, dtype=bool).copy()
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise TopologyError(f"Матрица смежности должна быть квадратной: {adj.shape}")
        m = adj.shape[0]
        if m < 2:
            raise TopologyError(f"Нужно минимум 2 узла, получено {m}")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("Матрица смежности несимметрична")
        if adj.diagonal().any():
            raise TopologyError("Петли (W_jj = 1) не допускаются")

        adj.flags.writeable = False
        neighbors = tuple(tuple(int(k) for k in np.flatnonzero(adj[j])) for j in range(m))
        degrees = tuple(len(nb) for nb in neighbors)
        topology = cls(m=m, adjacency=adj, neighbors=neighbors, degrees=degrees)

        if not is_connected(topology):
            raise TopologyError("Граф несвязный")
        return topology

    def to_networkx(self) -> nx.Graph:
        """Представление в виде графа networkx"""
        return nx.from_numpy_array(self.adjacency.astype(int))

    def edges(self) -> List[Tuple[int, int]]:
        """Список ребер (j, k), j < k"""
        return [(j, k) for j in range(self.m) for k in self.neighbors[j] if j < k]


def is_connected(t: Topology) -> bool:
    """Проверка связности обходом в ширину из узла 0"""
    graph = nx.from_numpy_array(np.asarray(t.adjacency, dtype=int))
    return len(nx.node_connected_component(graph, 0)) == t.m


def gen_erdos_renyi(
    m: int,
    p_c: float,
    seed: Optional[int] = None,
    max_attempts: int = MAX_RESAMPLE_ATTEMPTS,
) -> Topology:
    """Граф Эрдёша-Реньи; перегенерируется целиком, пока не станет связным"""
    if m < 2:
        raise TopologyError(f"Нужно минимум 2 узла, получено {m}")
    if not 0.0 < p_c <= 1.0:
        raise TopologyError(f"Вероятность ребра должна быть в (0, 1], получено {p_c}")

    rng = np.random.default_rng(seed)
    for attempt in range(1, max_attempts + 1):
        graph = nx.gnp_random_graph(m, p_c, seed=int(rng.integers(2**31 - 1)))
        adjacency = nx.to_numpy_array(graph, nodelist=range(m), dtype=int) > 0
        if len(nx.node_connected_component(graph, 0)) == m:
            logger.debug("Связный граф получен с попытки %d", attempt)
            return Topology.from_adjacency(adjacency)

    logger.error("Не удалось получить связный граф: m=%d, p_c=%s", m, p_c)
    raise TopologyError(
        f"Связный граф не получен за {max_attempts} попыток, p_c={p_c} слишком мало для m={m}"
    )


def gen_complete(m: int) -> Topology:
    """Полный граф на m узлах"""
    if m < 2:
        raise TopologyError(f"Нужно минимум 2 узла, получено {m}")
    adjacency = ~np.eye(m, dtype=bool)
    return Topology.from_adjacency(adjacency)


def gen_ring(m: int) -> Topology:
    """Кольцо на m узлах"""
    if m < 2:
        raise TopologyError(f"Нужно минимум 2 узла, получено {m}")
    graph = nx.cycle_graph(m) if m > 2 else nx.path_graph(2)
    return Topology.from_adjacency(nx.to_numpy_array(graph, nodelist=range(m)) > 0)


def load_topology(edge_list: Sequence[Tuple[int, int]], m: int) -> Topology:
    """Топология из списка ребер с 1-based индексами"""
    adjacency = np.zeros((m, m), dtype=bool)
    for j, k in edge_list:
        j, k = int(j), int(k)
        if not (1 <= j <= m and 1 <= k <= m):
            raise TopologyError(f"Ребро ({j}, {k}) вне диапазона узлов 1..{m}")
        if j == k:
            raise TopologyError(f"Петля ({j}, {k}) не допускается")
        # Повторные ребра принимаются идемпотентно
        adjacency[j - 1, k - 1] = adjacency[k - 1, j - 1] = True
    return Topology.from_adjacency(adjacency)


def read_edge_list(path: str) -> Tuple[List[Tuple[int, int]], int]:
    """Читает файл ребер: пары `j k` по строке, `#` - комментарии.

    Число узлов берется из строки `# m = <число>`, если она есть, иначе
    как максимальный индекс.
    """
    edges = []
    m = 0
    with open(Path(path), "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line, _, comment = raw.partition("#")
            comment = comment.strip().replace(" ", "")
            if comment.startswith("m="):
                m = max(m, int(comment[2:]))
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TopologyError(f"{path}:{line_no}: ожидалась пара `j k`, получено {raw!r}")
            j, k = int(parts[0]), int(parts[1])
            edges.append((j, k))
            m = max(m, j, k)
    return edges, m


def add_hub_node(t: Topology) -> Topology:
    """Добавляет узел, соединенный со всеми существующими узлами"""
    adjacency = np.zeros((t.m + 1, t.m + 1), dtype=bool)
    adjacency[: t.m, : t.m] = t.adjacency
    adjacency[t.m, : t.m] = True
    adjacency[: t.m, t.m] = True
    return Topology.from_adjacency(adjacency)


def metropolis_weights(t: Topology) -> np.ndarray:
    """Дважды стохастическая матрица смешивания по правилу Метрополиса-Гастингса"""
    weights = np.zeros((t.m, t.m))
    for j, k in t.edges():
        w = 1.0 / (1.0 + max(t.degrees[j], t.degrees[k]))
        weights[j, k] = weights[k, j] = w
    weights[np.diag_indices(t.m)] = 1.0 - weights.sum(axis=1)
    return weights


def run_rounds(
    t: Topology,
    states: Sequence[S],
    update: Callable[[int, S, Dict[int, S]], S],
    rounds: int,
    order: Optional[Sequence[int]] = None,
    max_workers: Optional[int] = None,
    on_round: Optional[Callable[[int, List[S]], None]] = None,
) -> List[S]:
    """Выполняет `rounds` синхронных раундов.

    `update(j, own_state, {k: neighbor_state})` обязан быть чистой функцией:
    раунд t+1 читает только снимок состояний раунда t, поэтому результат не
    зависит от порядка `order` и от параллельности.
    """
    if len(states) != t.m:
        raise ValueError(f"Ожидалось {t.m} состояний узлов, получено {len(states)}")
    order = list(range(t.m)) if order is None else list(order)
    if sorted(order) != list(range(t.m)):
        raise ValueError("order должен быть перестановкой узлов")

    current = list(states)
    executor = ThreadPoolExecutor(max_workers=max_workers) if max_workers else None
    try:
        for round_no in range(1, rounds + 1):
            snapshot = tuple(current)

            def node_step(j: int, snap=snapshot):
                return update(j, snap[j], {k: snap[k] for k in t.neighbors[j]})

            following: List[Optional[S]] = [None] * t.m
            if executor is not None:
                for j, result in zip(order, executor.map(node_step, order)):
                    following[j] = result
            else:
                for j in order:
                    following[j] = node_step(j)
            current = following
            if on_round is not None:
                on_round(round_no, current)
    finally:
        if executor is not None:
            executor.shutdown()
    return current
