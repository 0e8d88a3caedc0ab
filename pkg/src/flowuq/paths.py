"""Affine probability paths between a Gaussian base and the data.

A path interpolates x_t = alpha_t * x1 + beta_t * x0 with alpha_0 = 0 and
beta_1 = 0, so time runs from noise (t=0) to data (t=1).  The module also
provides the conditional velocity of the interpolant, the classifier-guidance
time coefficient b_t, and recovery of the data endpoint from a velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, SingularTimeError


@dataclass(frozen=True)
class PathCoeffs:
    """Schedule values (alpha, beta) and their time derivatives at t."""

    alpha: np.ndarray
    beta: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray


def _linear_coeffs(t: np.ndarray) -> PathCoeffs:
    # alpha_t = t, beta_t = 1 - t (rectified-flow schedule)
    one = np.ones_like(t)
    return PathCoeffs(alpha=t, beta=1.0 - t, d_alpha=one, d_beta=-one)


_SCHEDULES = {"linear": _linear_coeffs}


@dataclass(frozen=True)
class AffinePath:
    """An affine schedule, selected by name.

    Only ``"linear"`` is implemented; the registry keeps the type open for
    other affine schedules.
    """

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in _SCHEDULES:
            raise ValueError(
                f"unknown path kind {self.kind!r}; available: {sorted(_SCHEDULES)}"
            )

    def coeffs(self, t):
        """Evaluate (alpha, beta, d_alpha, d_beta) at scalar or array t."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("path time must lie in [0, 1]")
        return _SCHEDULES[self.kind](t)


def _broadcast(coef, x):
    """Align a per-time coefficient with a possibly batched state array."""
    coef = np.asarray(coef, dtype=np.float64)
    if x.ndim == 2 and coef.ndim == 1:
        return coef[:, None]
    return coef


def _check_same_shape(a, b, names):
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}"
        )


def interpolate(path: AffinePath, x1, x0, t):
    """Point on the path: alpha_t * x1 + beta_t * x0."""
    x1 = np.asarray(x1, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    _check_same_shape(x1, x0, ("x1", "x0"))
    c = path.coeffs(t)
    return _broadcast(c.alpha, x1) * x1 + _broadcast(c.beta, x1) * x0


def cond_velocity(path: AffinePath, x_t, x1, t):
    """Velocity of the interpolant given its data endpoint.

    For an affine path this is d_alpha * x1 + (d_beta / beta) * (x_t -
    alpha * x1); on the linear schedule it reduces to (x1 - x_t)/(1 - t).
    Undefined where beta_t = 0.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _check_same_shape(x_t, x1, ("x_t", "x1"))
    c = path.coeffs(t)
    if np.any(c.beta == 0.0):
        raise SingularTimeError(f"conditional velocity is undefined where beta_t = 0 (t={t})")
    ratio = _broadcast(c.d_beta / c.beta, x_t)
    return _broadcast(c.d_alpha, x_t) * x1 + ratio * (x_t - _broadcast(c.alpha, x_t) * x1)


def cg_coefficient(path: AffinePath, t):
    """Classifier-guidance coefficient b_t = -(d_beta*beta*alpha - d_alpha*beta^2)/alpha.

    On the linear schedule b_t = (1-t)/t.  Undefined at alpha_t = 0, so
    callers must skip guidance at t = 0.
    """
    c = path.coeffs(t)
    if np.any(c.alpha == 0.0):
        raise SingularTimeError(f"guidance coefficient is undefined where alpha_t = 0 (t={t})")
    return -(c.d_beta * c.beta * c.alpha - c.d_alpha * c.beta**2) / c.alpha


def recover_x1(path: AffinePath, x_t, u, t):
    """Invert the conditional velocity: the data endpoint implied by (x_t, u).

    Returns (-d_beta * x_t + beta * u) / (d_alpha * beta - d_beta * alpha).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_same_shape(x_t, u, ("x_t", "u"))
    c = path.coeffs(t)
    denom = c.d_alpha * c.beta - c.d_beta * c.alpha
    if np.any(denom == 0.0):
        raise SingularTimeError(f"data recovery denominator vanishes (t={t})")
    denom = _broadcast(denom, x_t)
    return (-_broadcast(c.d_beta, x_t) * x_t + _broadcast(c.beta, x_t) * u) / denom
