"""Element-wise variance propagation through the sampling ODE.

Per Euler step the state variance gains an injected-noise term
(sigma(x_bar) * dt)^2 and a coupling term 2 dt Cov(x, u).  The covariance is
approximated one of three ways: dropped, estimated from Jacobian-vector
products with Rademacher probes, or estimated by Monte Carlo around the mean
state.  Scores for filtering aggregate the final variance map, and an
alternative aleatoric baseline scores samples by re-noising the recovered
data estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFiniteError, SingularTimeError
from .paths import AffinePath, recover_x1
from .sample import FlowState


@dataclass(frozen=True)
class ZeroCov:
    """Drop the state-velocity covariance term."""


@dataclass(frozen=True)
class HutchinsonJVP:
    """Diagonal-Jacobian covariance via Rademacher probes and JVPs."""

    probes: int = 1

    def __post_init__(self):
        if self.probes < 1:
            raise ValueError("probe count must be >= 1")


@dataclass(frozen=True)
class MonteCarloCov:
    """Covariance from sample moments of states drawn around the mean."""

    samples: int = 10

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")


@dataclass(frozen=True)
class UqConfig:
    cov: object = HutchinsonJVP(probes=1)
    cadence: int = 1
    include_mean_spread_var: bool = False
    mean_spread_samples: int = 10

    def validate(self):
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if not isinstance(self.cov, (ZeroCov, HutchinsonJVP, MonteCarloCov)):
            raise ValueError(f"unknown covariance option {self.cov!r}")
        if self.include_mean_spread_var and self.mean_spread_samples < 2:
            raise ValueError("mean_spread_samples must be >= 2 when enabled")


@dataclass
class UqDiagnostics:
    floored_elements: int = 0


def _per_sample_normal(rng, batch, dim, count=None):
    """Draw standard normals, one independent stream per sample if given."""
    shape = (batch, dim) if count is None else (count, batch, dim)
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    draws = [
        r.standard_normal((dim,) if count is None else (count, dim)) for r in rng
    ]
    stacked = np.stack(draws)  # (batch, ...) leading axis
    return stacked if count is None else np.swapaxes(stacked, 0, 1)


def _per_sample_rademacher(rng, batch, dim):
    if isinstance(rng, np.random.Generator):
        return rng.integers(0, 2, size=(batch, dim)) * 2.0 - 1.0
    return np.stack([r.integers(0, 2, size=dim) * 2.0 - 1.0 for r in rng])


def _as_batch(state_mean, state_var):
    mean = np.atleast_2d(np.asarray(state_mean, dtype=np.float64))
    var = np.atleast_2d(np.asarray(state_var, dtype=np.float64))
    return mean, var


def hutchinson_diag(model, x, t, cond, var_x, probes, rng):
    """Estimate diag(J) * var_x with Rademacher probes and mean-head JVPs.

    Each probe contributes (sigma_x * r) * J (sigma_x * r); the average over
    probes is an unbiased estimate of the diagonal product, and is exact in
    one probe when J is diagonal.
    """
    x_b, var_b = _as_batch(x, var_x)
    if np.any(var_b < 0.0):
        raise ValueError("state variance must be non-negative")
    sigma_x = np.sqrt(var_b)
    batch, dim = x_b.shape
    acc = np.zeros_like(x_b)
    for _ in range(probes):
        r = _per_sample_rademacher(rng, batch, dim)
        v = sigma_x * r
        acc += v * model.jvp_mean(x_b, t, cond, v)
    result = acc / probes
    return result[0] if np.ndim(x) == 1 else result


def _covariance(model, x_b, t, cond, var_b, option, rng):
    if isinstance(option, ZeroCov):
        return np.zeros_like(x_b)
    if isinstance(option, HutchinsonJVP):
        return hutchinson_diag(model, x_b, t, cond, var_b, option.probes, rng)
    # Monte Carlo: first moments of x * u(x) around the propagated mean
    draws = _per_sample_normal(rng, x_b.shape[0], x_b.shape[1], count=option.samples)
    x_i = x_b[None, :, :] + np.sqrt(var_b)[None, :, :] * draws
    u_i = np.stack(
        [model.forward(x_i[i], t, cond).mean for i in range(option.samples)]
    )
    return (x_i * u_i).mean(axis=0) - x_b * u_i.mean(axis=0)


def propagate_variance(state: FlowState, model, cond, dt, config: UqConfig, rng,
                       diagnostics: UqDiagnostics | None = None):
    """Advance the variance channel of ``state`` across one effective step.

    var <- var + (sigma(x_bar) dt)^2 + 2 dt Cov(x, u), floored at zero
    element-wise; the covariance follows ``config.cov``.  When
    ``include_mean_spread_var`` is set, the injected-noise term additionally
    carries a Monte Carlo estimate of the spread-induced velocity variance.
    """
    config.validate()
    mean_b, var_b = _as_batch(state.mean, state.var)
    output = model.forward(mean_b, state.t, cond)
    noise_var = output.var
    if config.include_mean_spread_var:
        draws = _per_sample_normal(
            rng, mean_b.shape[0], mean_b.shape[1], count=config.mean_spread_samples
        )
        x_i = mean_b[None, :, :] + np.sqrt(var_b)[None, :, :] * draws
        u_i = np.stack(
            [model.forward(x_i[i], state.t, cond).mean
             for i in range(config.mean_spread_samples)]
        )
        noise_var = noise_var + u_i.var(axis=0, ddof=1)
    cov = _covariance(model, mean_b, state.t, cond, var_b, config.cov, rng)
    new_var = var_b + noise_var * dt**2 + 2.0 * dt * cov
    if np.any(~np.isfinite(new_var)):
        raise NonFiniteError(f"propagated variance is not finite at t={state.t}")
    below = new_var < 0.0
    if diagnostics is not None:
        diagnostics.floored_elements += int(below.sum())
    new_var = np.where(below, 0.0, new_var)
    if np.ndim(state.var) == 1:
        new_var = new_var[0]
    return replace(state, var=new_var)


def aggregate_score(var_final, top_fraction=0.1):
    """Mean of the top-fraction highest-uncertainty elements of one map."""
    var_final = np.asarray(var_final, dtype=np.float64).ravel()
    if var_final.size == 0:
        raise ValueError("uncertainty map is empty")
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    count = int(np.ceil(top_fraction * var_final.size))
    top = np.sort(var_final)[::-1][:count]
    return float(top.mean())


def au_baseline_score(model, trajectory, path: AffinePath, m_renoise, rng,
                      late_window=0.25, cond=None):
    """Aleatoric-uncertainty baseline map from re-noised data estimates.

    Over the late portion of the trajectory, the data endpoint implied by the
    model's velocity is recovered, re-noised ``m_renoise`` times along the
    path, and the element-wise variance of the velocity predictions over the
    re-noisings is averaged across the window.
    """
    if m_renoise < 2:
        raise ValueError("m_renoise must be >= 2 (a single draw has no variance)")
    if not 0.0 < late_window <= 1.0:
        raise ValueError("late_window must lie in (0, 1]")
    # exclude the final state: its velocity is not queried during sampling
    states = trajectory[:-1] if len(trajectory) > 1 else trajectory
    start = int(np.floor(len(states) * (1.0 - late_window)))
    window = states[start:]
    maps = []
    for state in window:
        mean_b, _ = _as_batch(state.mean, state.var)
        u = model.forward(mean_b, state.t, cond).mean
        try:
            x1_hat = recover_x1(path, mean_b, u, state.t)
        except SingularTimeError:
            warnings.warn(f"skipping singular time t={state.t} in AU window")
            continue
        c = path.coeffs(state.t)
        draws = _per_sample_normal(rng, mean_b.shape[0], mean_b.shape[1], count=m_renoise)
        x_t_i = c.alpha * x1_hat[None, :, :] + c.beta * draws
        u_i = np.stack(
            [model.forward(x_t_i[i], state.t, cond).mean for i in range(m_renoise)]
        )
        maps.append(u_i.var(axis=0, ddof=1))
    if not maps:
        raise SingularTimeError("every step in the AU window was singular")
    result = np.mean(maps, axis=0)
    return result[0] if np.ndim(trajectory[0].mean) == 1 else result
