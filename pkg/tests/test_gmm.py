import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phaseflow.errors import DataError
from phaseflow.gmm import (GaussianMixture, GmmFitConfig, gmm_fit, gmm_fit_trace, gmm_log_density,
                           gmm_log_density_batch)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_single_gaussian_mle():
    g = gmm_fit(np.array([[0.0], [2.0]]), GmmFitConfig(K=1))
    assert g.means[0, 0] == 1.0
    assert g.variances[0, 0] == 1.0
    assert g.weights.tolist() == [1.0]


def test_constant_data_hits_variance_floor():
    g = gmm_fit(np.full((10, 1), 5.0), GmmFitConfig(K=1))
    assert g.means[0, 0] == 5.0
    assert g.variances[0, 0] == 1e-6


def test_two_cluster_recovery():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(-10, 1, 100), rng.normal(10, 1, 100)])[:, None]
    g = gmm_fit(X, GmmFitConfig(K=2, seed=0))
    order = np.argsort(g.means[:, 0])
    np.testing.assert_allclose(g.means[order, 0], [-10, 10], atol=0.5)
    np.testing.assert_allclose(g.weights[order], [0.5, 0.5], atol=0.1)


def test_fewer_distinct_points_than_k(caplog):
    X = np.array([[0.0], [0.0], [1.0], [1.0], [1.0], [0.0]])
    with caplog.at_level(logging.WARNING):
        g = gmm_fit(X, GmmFitConfig(K=5))
    assert g.K == 2
    assert "reducing K" in caplog.text


def test_fit_errors():
    with pytest.raises(DataError):
        gmm_fit(np.zeros((3, 2)), GmmFitConfig(K=5))
    with pytest.raises(DataError):
        gmm_fit(np.array([[0.0], [np.nan], [1.0]]), GmmFitConfig(K=1))


def test_standard_normal_peak():
    g = GaussianMixture([1.0], [[0.0]], [[1.0]])
    assert gmm_log_density(g, [0.0]) == pytest.approx(-HALF_LOG_2PI, abs=1e-12)
    assert gmm_log_density(g, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)


def test_identical_components_collapse():
    one = GaussianMixture([1.0], [[0.3, -1.0]], [[2.0, 0.5]])
    two = GaussianMixture([0.5, 0.5], [[0.3, -1.0]] * 2, [[2.0, 0.5]] * 2)
    for x in ([0.0, 0.0], [1.0, -2.0]):
        assert gmm_log_density(two, x) == pytest.approx(gmm_log_density(one, x), abs=1e-12)


def test_symmetric_two_component_value():
    g = GaussianMixture([0.3, 0.7], [[0.0], [4.0]], [[1.0], [1.0]])
    assert gmm_log_density(g, [2.0]) == pytest.approx(math.log(0.0539909665), abs=1e-9)
    assert gmm_log_density(g, [2.0]) == pytest.approx(-2.9189385, abs=1e-7)


def test_density_dimension_mismatch():
    g = GaussianMixture([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(DataError):
        gmm_log_density(g, [0.0])


def test_density_finite_far_from_all_components():
    g = GaussianMixture([0.5, 0.5], [[0.0], [1.0]], [[1e-6], [1e-6]])
    assert np.isfinite(gmm_log_density(g, [1e3]))


@pytest.mark.parametrize("K", [1, 2, 3])
def test_density_integrates_to_one(K):
    rng = np.random.default_rng(K)
    w = rng.dirichlet(np.ones(K))
    g = GaussianMixture(w, rng.uniform(-5, 5, (K, 1)), rng.uniform(0.2, 4, (K, 1)))
    grid = np.arange(-50, 50 + 1e-3 / 2, 1e-3)[:, None]
    dens = np.exp(gmm_log_density_batch(g, grid))
    assert np.trapezoid(dens, grid[:, 0]) == pytest.approx(1.0, abs=1e-3)


def test_single_dims_share_one_gaussian():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.concatenate([rng.normal(-5, 1, 100), rng.normal(5, 1, 100)]),
                         rng.integers(0, 2, 200).astype(float)])
    g = gmm_fit(X, GmmFitConfig(K=2, single_dims=(1,)))
    assert g.K == 2
    assert g.means[0, 1] == g.means[1, 1] == pytest.approx(X[:, 1].mean())
    assert g.variances[0, 1] == g.variances[1, 1] == pytest.approx(X[:, 1].var())
    assert abs(g.means[0, 0] - g.means[1, 0]) > 8


def test_fit_is_deterministic_per_seed():
    X = np.random.default_rng(1).normal(size=(120, 3))
    assert gmm_fit(X, GmmFitConfig(K=3, seed=4)) == gmm_fit(X, GmmFitConfig(K=3, seed=4))


def test_weights_and_floor_invariants():
    X = np.random.default_rng(1).normal(size=(60, 2))
    X[:20] = 3.0      # a block of duplicates collapses one component
    g = gmm_fit(X, GmmFitConfig(K=4, seed=0))
    assert abs(g.weights.sum() - 1) <= 1e-12 and np.all(g.weights >= 0)
    assert np.all(g.variances >= 1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 200), st.integers(1, 8), st.integers(1, 5))
def test_em_log_likelihood_is_monotone(seed, N, M, K):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, size=(K, M))
    X = centers[rng.integers(0, K, N)] + rng.normal(size=(N, M)) * rng.uniform(0.1, 2)
    _, trace = gmm_fit_trace(X, GmmFitConfig(K=K, seed=seed))
    assert np.all(np.diff(trace) >= -1e-9)
