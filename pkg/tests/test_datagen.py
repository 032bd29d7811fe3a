import math

import numpy as np
import pandas as pd
import pytest

from desmr.datagen import (
    OUTLIER_RESPONSE,
    CovSpec,
    NetworkDataset,
    NodeDataset,
    NoiseSpec,
    gen_covariates,
    gen_network_data,
    inject_outliers,
    load_csv,
    load_dataset,
    sample_noise,
    save_dataset,
    sparse_beta,
)
from desmr.netsim import gen_ring


def test_cov_spec_matrix():
    """Σ_ij = sigma2 * rho^|i-j|"""
    cov = CovSpec(2.0, 0.5).matrix(4)
    assert cov[0, 0] == pytest.approx(2.0)
    assert cov[0, 2] == pytest.approx(0.5)
    assert cov[3, 1] == pytest.approx(0.5)


@pytest.mark.parametrize(
    "text, family, attr, value",
    [
        ("cauchy(0,1)", "cauchy", "scale", 1.0),
        ("normal(0,3)", "normal", "scale", 3.0),
        ("t(1)", "student_t", "df", 1.0),
        ("exp(2)", "exponential", "rate", 2.0),
        ("zero", "normal", "scale", 0.0),
    ],
)
def test_noise_spec_parse(text, family, attr, value):
    spec = NoiseSpec.parse(text)
    assert spec.family == family
    assert getattr(spec, attr) == value


def test_noise_spec_unknown():
    with pytest.raises(ValueError):
        NoiseSpec.parse("laplace(0,1)")


def test_covariates_empirical_covariance():
    X = gen_covariates(20000, 3, CovSpec(1.0, 0.3), seed=1)
    empirical = np.cov(X, rowvar=False)
    assert np.allclose(empirical, CovSpec(1.0, 0.3).matrix(3), atol=0.05)


def test_cauchy_median_and_quartiles():
    """У Коши(0, 1) медиана 0, квартили ±1"""
    eps = sample_noise(NoiseSpec("cauchy"), 40000, seed=3)
    assert abs(np.median(eps)) < 0.05
    q1, q3 = np.quantile(eps, [0.25, 0.75])
    assert q1 == pytest.approx(-1.0, abs=0.06)
    assert q3 == pytest.approx(1.0, abs=0.06)


def test_exponential_noise_positive():
    eps = sample_noise(NoiseSpec("exponential", rate=2.0), 20000, seed=4)
    assert (eps >= 0).all()
    assert np.mean(eps) == pytest.approx(0.5, rel=0.05)


def test_sparse_beta():
    beta = sparse_beta(100)
    assert beta[:10].tolist() == list(range(1, 11))
    assert not beta[10:].any()


def test_network_data_zero_noise():
    """При нулевом шуме y = X β* на каждом узле"""
    beta = sparse_beta(6, 2)
    data = gen_network_data(3, 20, 6, beta, noise_mode=NoiseSpec.parse("zero"), seed=5)
    assert data.m == 3 and data.p == 6 and data.total_n == 60
    assert data.support == (0, 1)
    for node in data.nodes:
        assert np.allclose(node.y, node.X @ beta)


def test_network_data_deterministic():
    beta = sparse_beta(5, 2)
    first = gen_network_data(3, 10, 5, beta, seed=9)
    second = gen_network_data(3, 10, 5, beta, seed=9)
    other = gen_network_data(3, 10, 5, beta, seed=10)
    for a, b, c in zip(first.nodes, second.nodes, other.nodes):
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.X, c.X)


def test_network_data_node_streams_independent():
    """Данные узла j не зависят от числа узлов"""
    beta = sparse_beta(5, 2)
    small = gen_network_data(2, 10, 5, beta, seed=21)
    large = gen_network_data(4, 10, 5, beta, seed=21)
    assert np.array_equal(small.nodes[1].X, large.nodes[1].X)


def test_per_node_random_specs():
    data = gen_network_data(
        12, 10, 4, sparse_beta(4, 2), cov_mode="per_node_random", noise_mode="per_node_random", seed=2
    )
    specs = data.meta["node_specs"]
    assert len(specs) == 12
    assert {s["sigma2"] for s in specs} <= {1.0, 3.0}
    assert {s["rho"] for s in specs} <= {0.1, 0.3}
    assert {s["noise"] for s in specs} <= {"normal", "exponential", "cauchy", "student_t"}


def test_network_data_test_split():
    data = gen_network_data(2, 10, 3, sparse_beta(3, 1), seed=1, n_test=5)
    assert data.nodes[0].X_test.shape == (5, 3)
    assert data.nodes[0].n == 10


def test_node_dataset_validation():
    with pytest.raises(ValueError):
        NodeDataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        NodeDataset(np.array([[np.nan, 1.0]]), np.ones(1))
    with pytest.raises(ValueError):
        NetworkDataset([NodeDataset(np.ones((2, 2)), np.ones(2)), NodeDataset(np.ones((2, 3)), np.ones(2))])


def test_balanced_outliers(small_network):
    """balanced: ceil(n/9) строк на узел, отклик 12, исходные данные не меняются"""
    before = [node.n for node in small_network.nodes]
    injected, topo = inject_outliers(small_network, "balanced", seed=1)
    assert topo is None
    for node, n in zip(injected.nodes, before):
        assert node.n == n + math.ceil(n / 9)
        assert np.all(node.y[n:] == OUTLIER_RESPONSE)
    assert [node.n for node in small_network.nodes] == before


def test_attacker_node_outliers(small_network, ring4):
    injected, topo = inject_outliers(small_network, "attacker_node", seed=1, topology=ring4)
    assert injected.m == small_network.m + 1
    assert injected.nodes[-1].n == math.ceil(small_network.total_n / 9)
    assert topo.m == 5 and topo.degrees[-1] == 4


def test_clean_and_unknown_scenarios(small_network):
    clean, _ = inject_outliers(small_network, "clean")
    assert clean.total_n == small_network.total_n
    with pytest.raises(ValueError):
        inject_outliers(small_network, "poisoned")


def _write_table(path, rows=60):
    rng = np.random.default_rng(0)
    frame = pd.DataFrame(
        {
            "state": ["NJ", "NY", "CA"] * (rows // 3),
            "x1": rng.normal(size=rows),
            "x2": rng.normal(size=rows),
            "const": np.ones(rows),
            "sparse": [np.nan] * (rows - 1) + [1.0],
            "target": rng.normal(size=rows),
        }
    )
    frame.loc[3, "x1"] = np.nan
    frame.to_csv(path, index=False)
    return frame


def test_load_csv_groups_and_standardization(tmp_path):
    """Разбиение по группам, удаление пропусков, стандартизация по обучающей части"""
    path = tmp_path / "table.csv"
    _write_table(path)
    data = load_csv(
        str(path), "target", "state", seed=0, group_map={"NJ": 2, "NY": 2, "CA": 9}
    )
    assert data.m == 2
    assert data.meta["groups"] == ["2", "9"]
    assert data.feature_names == ["x1", "x2"]
    X, y = data.pooled()
    assert np.allclose(X.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(X.std(axis=0), 1.0)
    assert np.mean(y) == pytest.approx(0.0, abs=1e-10)
    total = sum(node.n + len(node.y_test) for node in data.nodes)
    assert total == 59


def test_load_csv_missing_column(tmp_path):
    path = tmp_path / "table.csv"
    _write_table(path)
    with pytest.raises(ValueError):
        load_csv(str(path), "missing", "state")


def test_save_and_load_dataset(tmp_path):
    data = gen_network_data(3, 8, 4, sparse_beta(4, 2), seed=6, n_test=2)
    save_dataset(data, str(tmp_path / "ds"))
    loaded = load_dataset(str(tmp_path / "ds"))
    assert loaded.m == 3
    assert np.allclose(loaded.beta_star, data.beta_star)
    assert np.allclose(loaded.nodes[2].X, data.nodes[2].X)
    assert np.allclose(loaded.nodes[1].y_test, data.nodes[1].y_test)


def test_outliers_keep_topology_untouched():
    topo = gen_ring(4)
    data = gen_network_data(4, 10, 3, sparse_beta(3, 1), seed=0)
    _, augmented = inject_outliers(data, "attacker_node", seed=0, topology=topo)
    assert topo.m == 4 and augmented.m == 5
