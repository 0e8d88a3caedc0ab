import numpy as np
import pytest

from flowuq import (
    AffinePath,
    Checkerboard,
    GaussianMixture,
    SingularTimeError,
    TwoMoons,
    cond_velocity,
    interpolate,
    marginal_velocity_oracle,
    ring_mixture,
)
from flowuq.train import minibatch_marginal_velocity


@pytest.fixture
def linear():
    return AffinePath("linear")


def test_single_mode_sample_mean_converges():
    dataset = GaussianMixture(means=np.zeros((1, 2)), sigmas=np.array([1.0]))
    points, labels = dataset.draw(100_000, np.random.default_rng(0))
    assert labels is None
    assert np.all(np.abs(points.mean(axis=0)) < 0.02)


def test_draw_is_deterministic():
    dataset = ring_mixture()
    a, la = dataset.draw(64, np.random.default_rng(5))
    b, lb = dataset.draw(64, np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert np.array_equal(la, lb)


def test_ring_labels_partition_by_nearest_mode():
    # separation over 8 sigma: label = nearest mode almost surely
    dataset = ring_mixture(n_modes=8, radius=4.0, sigma=0.3)
    separation = np.linalg.norm(dataset.means[0] - dataset.means[1])
    assert separation > 8 * 0.3
    points, labels = dataset.draw(100_000, np.random.default_rng(1))
    distances = np.linalg.norm(points[:, None, :] - dataset.means[None, :, :], axis=2)
    nearest = np.argmin(distances, axis=1)
    mismatch = np.mean(dataset.labels[nearest] != labels)
    assert mismatch < 1e-3


def test_two_moons_shapes_and_classes():
    dataset = TwoMoons(noise=0.05)
    points, labels = dataset.draw(512, np.random.default_rng(2))
    assert points.shape == (512, 2)
    assert set(np.unique(labels)) == {0, 1}


def test_checkerboard_within_bounds_and_unlabeled():
    dataset = Checkerboard(cells=4)
    points, labels = dataset.draw(512, np.random.default_rng(3))
    assert labels is None
    assert np.all(points >= -2.0) and np.all(points <= 2.0)
    side = 4.0 / dataset.cells
    cells = np.floor((points + 2.0) / side).astype(int)
    assert np.all((cells[:, 0] + cells[:, 1]) % 2 == 0)


def test_restrict_to_label():
    dataset = ring_mixture(n_modes=4, labeled=True)
    sub = dataset.restrict_to_label(2)
    assert sub.means.shape == (1, 2)
    assert np.allclose(sub.means[0], dataset.means[2])


def _single_gaussian_velocity(linear, mu, sigma, x, t):
    # closed form for one Gaussian mode: posterior over x1 is Gaussian
    c = linear.coeffs(t)
    alpha, beta = float(c.alpha), float(c.beta)
    marg = alpha**2 * sigma**2 + beta**2
    m_post = (mu * beta**2 + alpha * sigma**2 * x) / marg
    # u = c1 x1 + c0 x with c1 = 1/beta, c0 = -1/beta on the linear path
    return (m_post - x) / beta


def test_oracle_single_mode_matches_closed_form(linear):
    mu = np.array([1.5, -0.5])
    sigma = 0.7
    dataset = GaussianMixture(means=mu[None, :], sigmas=np.array([sigma]))
    rng = np.random.default_rng(4)
    for t in (0.1, 0.5, 0.9):
        x = rng.standard_normal(2)
        u, var_u = marginal_velocity_oracle(dataset, linear, x, t)
        assert np.allclose(u, _single_gaussian_velocity(linear, mu, sigma, x, t), atol=1e-10)
        c = linear.coeffs(t)
        alpha, beta = float(c.alpha), float(c.beta)
        s_post2 = sigma**2 * beta**2 / (alpha**2 * sigma**2 + beta**2)
        assert np.allclose(var_u, s_post2 / beta**2, atol=1e-10)


def test_oracle_symmetric_two_modes_zero_velocity_at_origin(linear):
    dataset = GaussianMixture(
        means=np.array([[2.0, 0.0], [-2.0, 0.0]]), sigmas=np.array([0.5, 0.5])
    )
    u, _ = marginal_velocity_oracle(dataset, linear, np.zeros(2), 0.4)
    assert np.allclose(u, 0.0, atol=1e-12)


def test_oracle_variance_peaks_between_far_modes(linear):
    dataset = GaussianMixture(
        means=np.array([[3.0, 0.0], [-3.0, 0.0]]), sigmas=np.array([0.3, 0.3])
    )
    t = 0.5
    _, var_mid = marginal_velocity_oracle(dataset, linear, np.zeros(2), t)
    at_mode = float(linear.coeffs(t).alpha) * dataset.means[0]
    _, var_mode = marginal_velocity_oracle(dataset, linear, at_mode, t)
    assert var_mid[0] > var_mode[0]


def test_oracle_rejects_singular_time(linear):
    dataset = ring_mixture()
    with pytest.raises(SingularTimeError):
        marginal_velocity_oracle(dataset, linear, np.zeros(2), 1.0)


def test_oracle_matches_posterior_weighted_monte_carlo(linear):
    # brute force: sample x1 from the mixture, weight by p_t(x_t | x1)
    dataset = GaussianMixture(
        means=np.array([[2.0, 1.0], [-1.0, -2.0], [0.0, 2.5]]),
        sigmas=np.array([0.4, 0.8, 0.5]),
    )
    rng = np.random.default_rng(6)
    draws, _ = dataset.draw(1_000_000, rng)
    probe_rng = np.random.default_rng(7)
    for _ in range(20):
        t = probe_rng.uniform(0.15, 0.85)
        idx = probe_rng.integers(0, len(draws))
        x_t = interpolate(linear, draws[idx], probe_rng.standard_normal(2), t)
        c = linear.coeffs(t)
        alpha, beta = float(c.alpha), float(c.beta)
        logw = -np.sum((x_t - alpha * draws) ** 2, axis=1) / (2 * beta**2)
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        u_all = cond_velocity(linear, np.broadcast_to(x_t, draws.shape), draws, t)
        mc_u = w @ u_all
        mc_var = w @ (u_all**2) - mc_u**2
        ess = 1.0 / np.sum(w**2)
        u, var_u = marginal_velocity_oracle(dataset, linear, x_t, t)
        se_u = np.sqrt(mc_var / ess)
        assert np.all(np.abs(u - mc_u) <= 3.0 * se_u + 1e-9)


def test_oracle_is_large_batch_limit_of_minibatch_estimator(linear):
    dataset = ring_mixture(n_modes=8, radius=4.0, sigma=0.3)
    rng = np.random.default_rng(8)
    batch, _ = dataset.draw(4096, rng)
    concentrated_rels = []
    for _ in range(12):
        t = rng.uniform(0.2, 0.8)
        x1, _ = dataset.draw(1, rng)
        x_t = interpolate(linear, x1[0], rng.standard_normal(2), t)
        u_oracle, _ = marginal_velocity_oracle(dataset, linear, x_t, t)
        u_batch = minibatch_marginal_velocity(linear, batch, x_t, t)
        # self-normalized importance-sampling standard error from the weights
        c = linear.coeffs(t)
        logw = -np.sum((x_t - float(c.alpha) * batch) ** 2, axis=1) / (
            2 * float(c.beta) ** 2
        )
        w = np.exp(logw - logw.max())
        w /= w.sum()
        u_all = cond_velocity(linear, np.broadcast_to(x_t, batch.shape), batch, t)
        var_w = w @ (u_all - u_batch) ** 2
        ess = 1.0 / np.sum(w**2)
        stderr = np.sqrt(var_w / ess)
        assert np.all(np.abs(u_batch - u_oracle) <= 3.0 * stderr + 1e-9)
        if t > 0.4:  # posterior concentrated: the estimator is tight here
            rel = np.linalg.norm(u_batch - u_oracle) / max(np.linalg.norm(u_oracle), 1e-6)
            concentrated_rels.append(rel)
    assert np.median(concentrated_rels) < 0.02


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixture(means=np.zeros((2, 2)), sigmas=np.array([0.5, 0.0]))
    with pytest.raises(ValueError, match="one class per mode"):
        GaussianMixture(means=np.zeros((2, 2)), sigmas=0.5, labels=np.array([0]))
    with pytest.raises(TypeError):
        marginal_velocity_oracle(TwoMoons(), AffinePath("linear"), np.zeros(2), 0.5)
