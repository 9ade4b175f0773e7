import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from gencs.latentprior import (GmmFitError, GmmModel, fit_em, load_gmm, log_density, log_density_grad, sample,
                               save_gmm)


def random_gmm(rng, K=3, k=4):
    A = rng.standard_normal((K, k, k))
    covs = A @ np.swapaxes(A, 1, 2) + 0.5 * np.eye(k)
    w = rng.random(K) + 0.1
    return GmmModel.from_covariances(w / w.sum(), rng.standard_normal((K, k)) * 2, covs)


def scipy_log_density(g, z):
    dens = sum(w * multivariate_normal(m, c).pdf(z) for w, m, c in zip(g.weights, g.means, g.covariances))
    return np.log(dens)


def test_standard_normal_normalizer():
    for k in (1, 2, 5):
        g = GmmModel.from_covariances([1.0], np.zeros((1, k)), np.eye(k)[None])
        assert log_density(g, np.zeros(k)) == pytest.approx(-0.5 * k * np.log(2 * np.pi), rel=1e-14)


def test_matches_scipy():
    rng = np.random.default_rng(0)
    g = random_gmm(rng)
    Z = rng.standard_normal((20, 4))
    np.testing.assert_allclose(log_density(g, Z), scipy_log_density(g, Z), rtol=1e-10)


def test_far_out_is_finite():
    g = random_gmm(np.random.default_rng(1))
    v = log_density(g, np.full(4, 1e4))
    assert np.isfinite(v) and v < -1e6
    assert np.all(np.isfinite(log_density_grad(g, np.full(4, 1e4))))


def test_symmetric_mixture_midpoint():
    g = GmmModel.from_covariances([0.5, 0.5], np.array([[-3.0, 0.0], [3.0, 0.0]]), np.stack([np.eye(2)] * 2))
    np.testing.assert_allclose(log_density_grad(g, np.zeros(2)), 0.0, atol=1e-14)
    assert log_density_grad(g, np.array([0.1, 0.0]))[0] > 0  # pulled toward the closer mode


def test_quadrature_integrates_to_one():
    g = GmmModel.from_covariances([0.3, 0.7], np.array([[-1.0, 0.5], [1.0, -0.5]]),
                                  np.array([[[1.0, 0.3], [0.3, 0.5]], [[0.7, -0.2], [-0.2, 1.2]]]))
    rng = np.random.default_rng(2)
    lo, hi = -8.0, 8.0  # box reaches past 6 sigma of both components
    Z = rng.uniform(lo, hi, size=(200_000, 2))
    est = np.mean(np.exp(log_density(g, Z))) * (hi - lo) ** 2
    assert abs(est - 1.0) <= 0.02


def test_grad_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        g = random_gmm(rng)
        z = rng.standard_normal(4) * 2
        h = 1e-5
        fd = np.array([(log_density(g, z + h * e) - log_density(g, z - h * e)) / (2 * h) for e in np.eye(4)])
        worst = max(worst, np.linalg.norm(log_density_grad(g, z) - fd) / np.linalg.norm(fd))
    assert worst <= 1e-6


def test_batch_equals_rows():
    rng = np.random.default_rng(4)
    g = random_gmm(rng)
    Z = rng.standard_normal((5, 4))
    np.testing.assert_allclose(log_density(g, Z), [log_density(g, z) for z in Z], rtol=1e-14)
    np.testing.assert_allclose(log_density_grad(g, Z), [log_density_grad(g, z) for z in Z], rtol=1e-14)


def test_model_validation():
    with pytest.raises(ValueError):
        GmmModel([0.6, 0.6], np.zeros((2, 2)), np.stack([np.eye(2)] * 2))
    with pytest.raises(ValueError):
        GmmModel([1.0], np.zeros((1, 2)), np.array([[[1.0, 1.0], [0.0, 1.0]]]))


# -- sampling -----------------------------------------------------------------

def test_point_mass_weights():
    g = GmmModel.from_covariances([1.0, 0.0], np.array([[0.0, 0.0], [100.0, 100.0]]), np.stack([np.eye(2)] * 2))
    assert np.all(np.abs(sample(g, 500, 0)) < 10)


def test_sampling_moments():
    g = GmmModel.from_covariances([1.0], np.zeros((1, 3)), np.eye(3)[None])
    Z = sample(g, 100_000, 1)
    assert np.abs(Z.mean(axis=0)).max() <= 0.02
    assert np.linalg.norm(np.cov(Z.T) - np.eye(3)) <= 0.05 * np.linalg.norm(np.eye(3))


def test_mixture_sampling_moments():
    rng = np.random.default_rng(5)
    g = random_gmm(rng, K=2, k=2)
    Z = sample(g, 200_000, 2)
    mean = g.weights @ g.means
    cov = sum(w * (c + np.outer(m - mean, m - mean)) for w, m, c in zip(g.weights, g.means, g.covariances))
    np.testing.assert_allclose(Z.mean(axis=0), mean, atol=0.05)
    assert np.linalg.norm(np.cov(Z.T) - cov) <= 0.05 * np.linalg.norm(cov)


def test_sampling_deterministic():
    g = random_gmm(np.random.default_rng(6))
    assert np.array_equal(sample(g, 10, 3), sample(g, 10, 3))


# -- EM -------------------------------------------------------------------

def test_single_gaussian_moments():
    rng = np.random.default_rng(7)
    A = np.array([[1.0, 0.0, 0.0], [0.5, 2.0, 0.0], [-0.3, 0.2, 0.7]])
    X = rng.standard_normal((5000, 3)) @ A.T + np.array([1.0, -2.0, 0.5])
    g = fit_em(X, K=1, seed=0)
    se = X.std(axis=0) / np.sqrt(len(X))
    assert np.all(np.abs(g.means[0] - X.mean(axis=0)) <= 3 * se)
    S = np.cov(X.T, bias=True)
    assert np.linalg.norm(g.covariances[0] - S) <= 0.1 * np.linalg.norm(S)


def test_two_separated_clusters():
    rng = np.random.default_rng(8)
    centers = np.array([[0.0, 0.0], [20.0, 0.0]])
    X = np.concatenate([rng.standard_normal((1000, 2)) + c for c in centers])
    g = fit_em(X, K=2, seed=1)
    order = np.argsort(g.means[:, 0])
    np.testing.assert_allclose(g.means[order], centers, atol=0.1)
    np.testing.assert_allclose(g.weights, 0.5, atol=0.05)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 20), K=st.integers(1, 5))
def test_em_objective_monotone(seed, K):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.standard_normal((60, 3)) * rng.random() + rng.standard_normal(3) * 3 for _ in range(3)])
    _, trace = fit_em(X, K=K, seed=seed, max_iters=50, return_trace=True)
    obj = np.array(trace.objective)
    assert np.all(np.diff(obj) >= -1e-9 * np.abs(obj[:-1]))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 20), K=st.integers(1, 3))
def test_em_plain_loglik_monotone_without_ridge(seed, K):
    # without the ridge every component must stay well populated, hence K <= number of blobs
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.standard_normal((60, 3)) + rng.standard_normal(3) * 3 for _ in range(3)])
    _, trace = fit_em(X, K=K, seed=seed, max_iters=50, reg=0.0, return_trace=True)
    ll = np.array(trace.log_likelihood)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))


def test_em_covariance_floor():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((200, 2)) * [1.0, 1e-9]  # nearly flat along one axis
    g = fit_em(X, K=2, seed=0)
    floor = 1e-6 * np.trace(np.cov(X.T)) / 2
    # the ridge is n * floor / N_i >= floor for every component
    for c in g.covariances:
        assert np.linalg.eigvalsh(c).min() >= floor * (1 - 1e-9)


def test_em_errors():
    with pytest.raises(GmmFitError):
        fit_em(np.random.default_rng(0).standard_normal((3, 2)), K=5)
    with pytest.raises(GmmFitError):
        # two points per component in 3-D: singular covariances without the ridge
        fit_em(np.random.default_rng(1).standard_normal((4, 3)), K=2, reg=0.0)
    with pytest.raises(GmmFitError):
        fit_em(np.ones((50, 2)), K=1)


def test_em_deterministic():
    X = np.random.default_rng(10).standard_normal((300, 3))
    a, b = fit_em(X, K=3, seed=4), fit_em(X, K=3, seed=4)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.chol, b.chol)


def test_checkpoint_round_trip(tmp_path):
    g = random_gmm(np.random.default_rng(11))
    save_gmm(g, tmp_path / "g.gmm")
    back = load_gmm(tmp_path / "g.gmm")
    for a, b in [(g.weights, back.weights), (g.means, back.means), (g.chol, back.chol)]:
        assert a.tobytes() == b.tobytes()
