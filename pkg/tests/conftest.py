"""Shared fixtures: tiny randomized models and session-scoped trained models.

The trained fixtures are the expensive part of the suite (minutes, not
seconds); they are built once per session and reused by the sampling,
guidance, evaluation and acceptance tests.
"""

import time

import numpy as np
import pytest

from flowuq import AffinePath, ModelOutput, TrainConfig, VelocityModel, ring_mixture, train


@pytest.fixture
def path():
    return AffinePath("linear")


class LinearToyModel:
    """Velocity-model stand-in with mean A x + b and constant sigma.

    Implements the same inference protocol as VelocityModel (forward,
    jvp_mean, var_input_grad) with an exactly known Jacobian, so estimators
    can be checked against closed forms.
    """

    n_classes = 0

    def __init__(self, matrix, offset=None, sigma=0.0):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.dim = self.matrix.shape[0]
        self.offset = np.zeros(self.dim) if offset is None else np.asarray(offset)
        self.sigma = float(sigma)

    def forward(self, x, t, cond=None, want_cache=False):
        x = np.asarray(x, dtype=np.float64)
        mean = x @ self.matrix.T + self.offset
        var = np.full_like(mean, max(self.sigma, 1e-300) ** 2)
        out = ModelOutput(mean=mean, var=var)
        return (out, None) if want_cache else out

    def jvp_mean(self, x, t, cond, v):
        return np.asarray(v, dtype=np.float64) @ self.matrix.T

    def var_input_grad(self, x, t, cond, d_var):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


def randomized_model(dim=3, hidden=(6, 5), n_classes=0, seed=7, scale=0.4):
    """Small model with nonzero heads so Jacobians and variances vary."""
    model = VelocityModel(dim, hidden=hidden, n_classes=n_classes, seed=seed)
    rng = np.random.default_rng(seed + 1)
    model.set_flat(rng.standard_normal(model.n_parameters) * scale)
    if model.cond_table is not None:
        model.cond_table[model.n_classes] = 0.0
    return model


@pytest.fixture
def small_model():
    return randomized_model()


@pytest.fixture(scope="session")
def toy_mixture():
    return ring_mixture(n_modes=8, radius=4.0, sigma=0.4, labeled=True)


# The toy models are trained without the mini-batch correction term: in
# high dimension the anchor endpoint dominates the conditional-density
# weights and the correction is numerically inert, so the variance a
# full-scale model actually learns matches the naive conditional NLL.  In
# 2-D the correction is active and cancels exactly the posterior-variance
# signal these experiments probe for.


TRAIN_SECONDS = {}


@pytest.fixture(scope="session")
def trained_unconditional(toy_mixture):
    model = VelocityModel(2, hidden=(64, 64, 64), n_classes=0, seed=11)
    config = TrainConfig(
        steps=15_000, batch_size=128, learning_rate=2e-3, seed=11, use_correction=False
    )
    started = time.perf_counter()
    result = train(model, toy_mixture, config)
    TRAIN_SECONDS["unconditional"] = time.perf_counter() - started
    return result


@pytest.fixture(scope="session")
def trained_conditional(toy_mixture):
    # deliberately mid-strength: guidance experiments need precision headroom
    model = VelocityModel(2, hidden=(48, 48), n_classes=toy_mixture.n_classes, seed=13)
    config = TrainConfig(
        steps=5_000, batch_size=128, learning_rate=1e-3, seed=13, use_correction=False
    )
    started = time.perf_counter()
    result = train(model, toy_mixture, config)
    TRAIN_SECONDS["conditional"] = time.perf_counter() - started
    return result
