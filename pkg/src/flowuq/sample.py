"""Deterministic ODE integration of the mean flow dynamics.

Steppers advance only the mean state; the variance channel of a
:class:`FlowState` is carried along untouched and is advanced separately by
the uncertainty-propagation module.  Time runs on a uniform grid clamped to
[eps, 1-eps] so the model is never queried at the path endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFiniteError


@dataclass(frozen=True)
class FlowState:
    """Propagated mean and element-wise variance of the state at time t."""

    t: float
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var must share a shape")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    method: str = "heun"  # "euler" | "heun"
    time_eps: float = 1e-3

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.method not in ("euler", "heun"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if not 0.0 < self.time_eps < 0.5:
            raise ValueError("time_eps must lie in (0, 0.5)")


def _checked_velocity(velocity, x, t):
    u = np.asarray(velocity(x, t), dtype=np.float64)
    if np.any(~np.isfinite(u)):
        raise NonFiniteError(f"velocity is not finite at t={t}")
    return u


def step_euler(state: FlowState, velocity, dt):
    """One explicit Euler step of the mean; variance is untouched."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if state.t + dt > 1.0 + 1e-12:
        raise ValueError("step would leave the time interval [0, 1]")
    u = _checked_velocity(velocity, state.mean, state.t)
    return replace(state, t=state.t + dt, mean=state.mean + u * dt)


def step_heun(state: FlowState, velocity, dt):
    """One Heun (explicit trapezoid) step: Euler predictor, averaged slopes."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if state.t + dt > 1.0 + 1e-12:
        raise ValueError("step would leave the time interval [0, 1]")
    k1 = _checked_velocity(velocity, state.mean, state.t)
    predictor = state.mean + k1 * dt
    k2 = _checked_velocity(velocity, predictor, state.t + dt)
    return replace(state, t=state.t + dt, mean=state.mean + 0.5 * dt * (k1 + k2))


_STEPPERS = {"euler": step_euler, "heun": step_heun}


def time_grid(config: SamplerConfig):
    """Uniform grid from eps to 1-eps with ``steps`` intervals."""
    return np.linspace(config.time_eps, 1.0 - config.time_eps, config.steps + 1)


def integrate(velocity, x0, config: SamplerConfig, callback=None):
    """Drive the mean ODE across the full grid, returning the trajectory.

    ``velocity(x, t) -> u`` supplies the field.  ``callback(step, state, dt)``
    runs before each step (this is where variance propagation hooks in) and
    may return a replacement state.  Non-finite velocities abort with the
    offending step index.
    """
    config.validate()
    grid = time_grid(config)
    x0 = np.asarray(x0, dtype=np.float64)
    state = FlowState(t=float(grid[0]), mean=x0, var=np.zeros_like(x0))
    stepper = _STEPPERS[config.method]
    trajectory = [state]
    for step in range(config.steps):
        dt = float(grid[step + 1] - grid[step])
        if callback is not None:
            updated = callback(step, state, dt)
            if updated is not None:
                state = updated
        try:
            state = stepper(state, lambda x, t: velocity(x, t, step), dt)
        except NonFiniteError as err:
            raise NonFiniteError(f"{err} (sampling step {step})") from err
        trajectory.append(state)
    return trajectory


def sample(model, config: SamplerConfig, x0, cond=None):
    """Integrate the model's mean field from noise to data.

    ``x0`` is the caller-drawn base sample (or a batch of them); the returned
    trajectory retains every intermediate state for diagnostics and for
    uncertainty propagation.
    """

    def velocity(x, t, step):
        return model.forward(x, t, cond).mean

    return integrate(velocity, x0, config)
