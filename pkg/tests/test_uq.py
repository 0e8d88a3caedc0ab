import numpy as np
import pytest

from flowuq import (
    AffinePath,
    FlowState,
    HutchinsonJVP,
    MonteCarloCov,
    SamplerConfig,
    UqConfig,
    ZeroCov,
    aggregate_score,
    au_baseline_score,
    hutchinson_diag,
    propagate_variance,
    sample,
)
from flowuq.uq import UqDiagnostics

from conftest import LinearToyModel, randomized_model


def test_hutchinson_exact_for_diagonal_jacobian():
    model = LinearToyModel(np.diag([2.0, 3.0]))
    var_x = np.array([1.0, 4.0])
    for seed in range(5):  # any probe: r^2 = 1 element-wise
        rng = np.random.default_rng(seed)
        est = hutchinson_diag(model, np.zeros(2), 0.5, None, var_x, 1, rng)
        assert np.allclose(est, [2.0, 12.0], atol=1e-12)


def test_hutchinson_zero_variance_gives_zero():
    model = LinearToyModel(np.diag([2.0, 3.0]))
    rng = np.random.default_rng(0)
    est = hutchinson_diag(model, np.zeros(2), 0.5, None, np.zeros(2), 3, rng)
    assert np.array_equal(est, np.zeros(2))


def test_hutchinson_dense_jacobian_within_three_standard_errors():
    rng = np.random.default_rng(42)
    matrix = rng.standard_normal((8, 8))
    model = LinearToyModel(matrix)
    var_x = rng.uniform(0.5, 2.0, size=8)
    exact = np.diag(matrix) * var_x
    probes = 10_000
    probe_rng = np.random.default_rng(7)
    draws = np.empty((probes, 8))
    for i in range(probes):
        r = probe_rng.integers(0, 2, size=8) * 2.0 - 1.0
        v = np.sqrt(var_x) * r
        draws[i] = v * model.jvp_mean(None, None, None, v)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(probes)
    est = hutchinson_diag(
        model, np.zeros(8), 0.5, None, var_x, probes, np.random.default_rng(7)
    )
    assert np.all(np.abs(est - exact) <= 3.0 * stderr + 1e-12)


def test_hutchinson_unbiased_with_root_s_error_decay():
    # RMS error over repetitions scales like 1/sqrt(S)
    rng = np.random.default_rng(3)
    matrix = rng.standard_normal((6, 6))
    model = LinearToyModel(matrix)
    var_x = np.ones(6)
    exact = np.diag(matrix)
    repetitions = 30
    rms = {}
    for s in (1, 10, 100, 10_000):
        sq = 0.0
        for rep in range(repetitions):
            est = hutchinson_diag(
                model, np.zeros(6), 0.5, None, var_x, s,
                np.random.default_rng(1000 * s + rep),
            )
            sq += np.mean((est - exact) ** 2)
        rms[s] = np.sqrt(sq / repetitions)
    assert rms[10_000] < 0.05
    # consecutive decades: expect ~sqrt(10) ~ 3.16 per decade
    for a, b in ((1, 100), (100, 10_000)):
        ratio = rms[a] / rms[b]
        assert 5.0 < ratio < 20.0  # 10 within sampling slack


def _propagate_manual(model, cov_option, steps, dt, sigma):
    state = FlowState(t=0.0, mean=np.zeros(2), var=np.zeros(2))
    config = UqConfig(cov=cov_option)
    rng = np.random.default_rng(0)
    for k in range(steps):
        state = propagate_variance(state, model, None, dt, config, rng)
        state = FlowState(t=state.t + dt, mean=state.mean, var=state.var)
    return state


def test_sigma_zero_cov_zero_leaves_variance_unchanged():
    model = LinearToyModel(np.diag([1.0, -1.0]), sigma=0.0)
    state = FlowState(t=0.2, mean=np.zeros(2), var=np.array([0.4, 0.6]))
    out = propagate_variance(
        state, model, None, 0.05, UqConfig(cov=ZeroCov()), np.random.default_rng(0)
    )
    assert np.allclose(out.var, state.var, atol=1e-300)


def test_constant_field_accumulates_sigma_squared_steps():
    sigma = 0.3
    model = LinearToyModel(np.zeros((2, 2)), sigma=sigma)  # zero Jacobian
    steps, dt = 7, 0.1
    state = _propagate_manual(model, HutchinsonJVP(1), steps, dt, sigma)
    assert np.allclose(state.var, steps * (sigma * dt) ** 2, rtol=1e-12)


def test_linear_field_variance_matches_trajectory_ensemble():
    # u(x) = A x + sigma * eps with diagonal A: brute-force Euler ensemble
    diag = np.array([0.5, -0.3, 1.0])
    sigma = 0.5
    model = LinearToyModel(np.diag(diag), sigma=sigma)
    steps, dt = 50, 1.0 / 50
    state = FlowState(t=0.0, mean=np.zeros(3), var=np.zeros(3))
    config = UqConfig(cov=HutchinsonJVP(1))
    rng = np.random.default_rng(0)
    for _ in range(steps):
        state = propagate_variance(state, model, None, dt, config, rng)
        state = FlowState(t=state.t + dt, mean=state.mean, var=state.var)

    ensemble_rng = np.random.default_rng(123)
    x = np.zeros((100_000, 3))
    for _ in range(steps):
        noise = ensemble_rng.standard_normal(x.shape)
        x = x + (x * diag + sigma * noise) * dt
    empirical = x.var(axis=0, ddof=1)
    assert np.all(np.abs(state.var - empirical) / empirical < 0.05)


def test_monte_carlo_cov_close_to_jvp_on_linear_model():
    model = LinearToyModel(np.diag([1.0, 2.0]), sigma=0.1)
    state = FlowState(t=0.1, mean=np.array([0.5, -0.5]), var=np.array([0.2, 0.3]))
    jvp = propagate_variance(
        state, model, None, 0.02, UqConfig(cov=HutchinsonJVP(1)), np.random.default_rng(1)
    )
    mc = propagate_variance(
        state, model, None, 0.02, UqConfig(cov=MonteCarloCov(4000)), np.random.default_rng(2)
    )
    assert np.allclose(mc.var, jvp.var, rtol=0.15)


def test_variance_floored_at_zero_and_counted():
    # strongly contracting field drives the covariance term negative
    model = LinearToyModel(np.diag([-50.0, -50.0]), sigma=0.0)
    state = FlowState(t=0.1, mean=np.zeros(2), var=np.array([0.5, 0.5]))
    diagnostics = UqDiagnostics()
    out = propagate_variance(
        state, model, None, 0.1, UqConfig(cov=HutchinsonJVP(1)),
        np.random.default_rng(0), diagnostics=diagnostics,
    )
    assert np.all(out.var >= 0.0)
    assert diagnostics.floored_elements == 2


def test_zero_cov_propagation_is_monotone():
    model = randomized_model(dim=2, hidden=(6, 6), seed=3, scale=0.5)
    state = FlowState(t=0.05, mean=np.array([0.2, -0.1]), var=np.zeros(2))
    config = UqConfig(cov=ZeroCov())
    rng = np.random.default_rng(0)
    previous = state.var
    for k in range(12):
        state = propagate_variance(state, model, None, 0.05, config, rng)
        assert np.all(state.var >= previous - 1e-15)
        previous = state.var
        state = FlowState(t=state.t + 0.05, mean=state.mean, var=state.var)


def test_include_mean_spread_var_adds_spread_term():
    # linear mean: Var(u(x)) over x ~ N(mean, var) is exactly diag(A)^2 var
    diag = np.array([2.0, -1.0])
    model = LinearToyModel(np.diag(diag), sigma=0.1)
    state = FlowState(t=0.1, mean=np.zeros(2), var=np.array([0.3, 0.4]))
    dt = 0.05
    base = propagate_variance(
        state, model, None, dt, UqConfig(cov=ZeroCov()), np.random.default_rng(5)
    )
    with_spread = propagate_variance(
        state, model, None, dt,
        UqConfig(cov=ZeroCov(), include_mean_spread_var=True, mean_spread_samples=4000),
        np.random.default_rng(5),
    )
    extra = (with_spread.var - base.var) / dt**2
    assert np.allclose(extra, diag**2 * state.var, rtol=0.15)


def test_aggregate_score_examples():
    assert aggregate_score(np.arange(1.0, 11.0), 0.1) == pytest.approx(10.0)
    values = np.array([3.0, 1.0, 2.0])
    assert aggregate_score(values, 1.0) == pytest.approx(values.mean())
    assert aggregate_score(np.array([4.0, 4.0, 1.0, 1.0]), 0.5) == pytest.approx(4.0)


def test_aggregate_score_rejects_bad_input():
    with pytest.raises(ValueError):
        aggregate_score(np.array([]), 0.1)
    with pytest.raises(ValueError):
        aggregate_score(np.ones(3), 0.0)


def test_au_baseline_zero_for_constant_mean_head():
    model = LinearToyModel(np.zeros((2, 2)), offset=np.array([0.3, -0.3]), sigma=0.2)
    trajectory = sample(model, SamplerConfig(steps=12), np.array([0.5, 0.5]))
    path = AffinePath("linear")
    score = au_baseline_score(model, trajectory, path, 8, np.random.default_rng(0))
    assert np.allclose(score, 0.0, atol=1e-20)


def test_au_baseline_rejects_single_renoise():
    model = LinearToyModel(np.zeros((2, 2)))
    trajectory = sample(model, SamplerConfig(steps=4), np.zeros(2))
    with pytest.raises(ValueError, match=">= 2"):
        au_baseline_score(model, trajectory, AffinePath("linear"), 1, np.random.default_rng(0))


def test_au_baseline_identity_head_matches_closed_form():
    # u(x) = x at a fixed time: re-noised states are alpha x1 + beta eps,
    # so the per-element velocity variance is exactly beta^2
    model = LinearToyModel(np.eye(2))
    path = AffinePath("linear")
    t = 0.62
    state = FlowState(t=t, mean=np.array([0.4, -0.2]), var=np.zeros(2))
    trajectory = [state, FlowState(t=0.99, mean=state.mean, var=state.var)]
    m = 10_000
    score = au_baseline_score(
        model, trajectory, path, m, np.random.default_rng(8), late_window=1.0
    )
    beta2 = float(path.coeffs(t).beta) ** 2
    stderr = beta2 * np.sqrt(2.0 / (m - 1))
    assert np.all(np.abs(score - beta2) <= 3.0 * stderr)


def test_cov_option_validation():
    with pytest.raises(ValueError):
        HutchinsonJVP(probes=0)
    with pytest.raises(ValueError):
        MonteCarloCov(samples=0)
    with pytest.raises(ValueError):
        UqConfig(cadence=0).validate()
    with pytest.raises(ValueError):
        UqConfig(cov="jvp").validate()
