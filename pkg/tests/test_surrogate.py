import math

import numpy as np
import pytest
from scipy import integrate

from desmr.datagen import NoiseSpec, gen_network_data, sparse_beta
from desmr.lad_solver import fit_lasso
from desmr.metrics import LambdaRule
from desmr.surrogate import (
    DENSITY_FLOOR,
    BandwidthSchedule,
    DensityError,
    SurrogateConfig,
    bandwidth,
    biweight_kernel,
    density_at_zero,
    estimate_density,
    initial_estimates,
    pseudo_response,
    run_outer_loop,
    surrogate_responses,
)


def test_biweight_kernel_values():
    assert biweight_kernel(0.0) == pytest.approx(105 / 64)
    assert biweight_kernel(1.0) == pytest.approx(0.0)
    assert np.all(biweight_kernel(np.array([-3.0, 1.5, 1.0001])) == 0.0)
    assert biweight_kernel(0.5) == pytest.approx(biweight_kernel(-0.5))


def test_biweight_kernel_integrates_to_one():
    value, _ = integrate.quad(biweight_kernel, -1.0, 1.0, epsabs=1e-13)
    assert abs(value - 1.0) < 1e-10


def test_density_at_zero():
    """Все остатки нулевые: f(0) = K(0) / h"""
    assert density_at_zero(np.zeros(10), 0.5) == pytest.approx(105 / 64 / 0.5)
    assert density_at_zero(np.array([0.0, 10.0]), 1.0) == pytest.approx(105 / 128)
    with pytest.raises(ValueError):
        density_at_zero(np.zeros(3), 0.0)


def test_density_of_normal_residuals():
    residuals = np.random.default_rng(0).standard_normal(50000)
    assert density_at_zero(residuals, 0.3) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=0.05)


@pytest.mark.parametrize("c", [0.5, 2.0, 3.0])
def test_estimate_density_scale_consistent(rng, c):
    """Остатки и ширина окна умножены на c - оценка делится на c"""
    residuals = rng.normal(size=400)
    assert estimate_density(c * residuals, c * 0.4) == pytest.approx(estimate_density(residuals, 0.4) / c, rel=1e-12)


def test_estimate_density_clamps():
    assert estimate_density(np.full(5, 100.0), 0.1) == DENSITY_FLOOR
    assert estimate_density(np.full(5, 100.0), 0.1, floor=0.01) == 0.01


def test_pseudo_response_distance_identity(rng):
    """|ỹ_i - x_i^T β0| = 1 / (2 f0)"""
    X = rng.normal(size=(25, 4))
    y = rng.normal(size=25)
    beta0 = rng.normal(size=4)
    ytilde = pseudo_response(X, y, beta0, 0.8)
    assert np.allclose(np.abs(ytilde - X @ beta0), 1 / 1.6)
    below = y <= X @ beta0
    assert np.all(ytilde[below] < (X @ beta0)[below])
    with pytest.raises(ValueError):
        pseudo_response(X, y, beta0, 0.0)


def test_bandwidth_formula():
    sched = BandwidthSchedule(s_hat=10, n=200, m=10, c0=0.013)
    log_n = math.log(200)
    expected = math.sqrt(10 * log_n / 200) + (0.013 * 100 * log_n / 10) ** 0.5 / math.sqrt(10)
    assert bandwidth(0, sched) == pytest.approx(expected)
    values = [bandwidth(v, sched) for v in range(6)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] > math.sqrt(10 * log_n / 200)


@pytest.mark.parametrize("v, s_hat", [(-1, 5), (0, 0)])
def test_bandwidth_invalid(v, s_hat):
    with pytest.raises(ValueError):
        bandwidth(v, BandwidthSchedule(s_hat, 100, 5))


def test_config_validation():
    with pytest.raises(ValueError):
        SurrogateConfig(V=-1)
    with pytest.raises(ValueError):
        SurrogateConfig(T=0)
    with pytest.raises(ValueError):
        SurrogateConfig(init_mode="random")


def test_zero_outer_iterations_returns_initializer(small_network, ring4):
    cfg = SurrogateConfig(V=0)
    expected, _ = initial_estimates(small_network, cfg)
    result = run_outer_loop(small_network, ring4, cfg)
    assert np.array_equal(result.outer.beta_hat, expected)
    assert result.rounds == 0
    assert len(result.outer.trace) == 1


def test_one_iteration_without_penalty_is_pooled_least_squares(small_network, complete4):
    """V=1, lambda=0: консенсус сходится к МНК на объединенных псевдо-откликах"""
    cfg = SurrogateConfig(V=1, T=5000, lambda_rule=LambdaRule("fixed", value=0.0))
    start, _ = initial_estimates(small_network, cfg)
    ytilde, _, _ = surrogate_responses(small_network, start, 0, cfg)
    X = np.vstack([node.X for node in small_network.nodes])
    expected, *_ = np.linalg.lstsq(X, np.concatenate(ytilde), rcond=None)

    result = run_outer_loop(small_network, complete4, cfg, beta_init=start)
    for row in result.outer.beta_hat:
        assert np.allclose(row, expected, atol=1e-6)


def test_outer_trace_rows(small_network, ring4):
    cfg = SurrogateConfig(V=2, T=20)
    result = run_outer_loop(small_network, ring4, cfg)
    frame = result.outer.trace_frame()
    assert list(frame.columns) == ["v", "node", "l2_error", "f_hat", "h_v", "lambda_selected"]
    assert len(frame) == 2 * small_network.m
    assert frame["v"].tolist() == [1] * 4 + [2] * 4
    assert len(result.outer.trace) == 3
    assert len(result.outer.lambdas) == 2
    assert (frame["f_hat"] >= DENSITY_FLOOR).all()
    assert result.outer.trace[-1] == pytest.approx(frame[frame["v"] == 2]["l2_error"].sum())


def test_density_error_on_bad_start(small_network, ring4):
    """Плотность вырождена на всех узлах"""
    far = np.full((4, small_network.p), 1000.0)
    with pytest.raises(DensityError):
        run_outer_loop(small_network, ring4, SurrogateConfig(V=1, T=5), beta_init=far)


def test_topology_mismatch(small_network):
    from desmr.netsim import gen_ring

    with pytest.raises(ValueError):
        run_outer_loop(small_network, gen_ring(3), SurrogateConfig(V=1))


def test_init_truth_perturbed_touches_support_only(small_network):
    cfg = SurrogateConfig(init_mode="truth_perturbed", init_sigma=0.5, seed=3)
    betas, _ = initial_estimates(small_network, cfg)
    off_support = small_network.beta_star == 0
    assert np.array_equal(betas[:, off_support], np.zeros((4, int(off_support.sum()))))
    assert not np.allclose(betas[:, ~off_support], small_network.beta_star[~off_support])
    again, _ = initial_estimates(small_network, cfg)
    assert np.array_equal(betas, again)


def test_init_truth_perturbed_needs_truth(small_network):
    from dataclasses import replace

    unknown = replace(small_network, beta_star=None)
    with pytest.raises(ValueError):
        initial_estimates(unknown, SurrogateConfig(init_mode="truth_perturbed"))


def test_init_lasso_l2(small_network):
    cfg = SurrogateConfig(init_mode="lasso_l2")
    betas, lambdas = initial_estimates(small_network, cfg)
    node = small_network.nodes[2]
    lam, report = fit_lasso(node.X, node.y, cfg.init_rule)
    assert lambdas[2] == lam
    assert np.array_equal(betas[2], report.beta)


def test_desmr_improves_on_cauchy_noise():
    """Несколько внешних итераций не ухудшают локальные оценки при шуме Коши"""
    data = gen_network_data(5, 100, 10, sparse_beta(10, 3), noise_mode=NoiseSpec("cauchy"), seed=4)
    from desmr.netsim import gen_complete

    result = run_outer_loop(data, gen_complete(5), SurrogateConfig(V=4, T=50))
    assert result.outer.trace[-1] < result.outer.trace[0]
