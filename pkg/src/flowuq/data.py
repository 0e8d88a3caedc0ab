"""Seeded synthetic datasets with analytically known structure.

The Gaussian mixture is the workhorse: with a standard-normal base and an
affine path, both the marginal velocity and the posterior velocity variance
have closed forms, so trained mean/variance heads can be checked against
exact oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularTimeError
from .paths import AffinePath


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian modes with optional per-mode class labels."""

    means: np.ndarray  # (M, n)
    sigmas: np.ndarray  # (M,)
    weights: np.ndarray | None = None  # uniform when None
    labels: np.ndarray | None = None  # (M,) ints covering all modes

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if means.shape[0] == 0:
            raise ValueError("mixture needs at least one mode")
        object.__setattr__(self, "means", means)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if sigmas.ndim == 0:
            sigmas = np.full(means.shape[0], float(sigmas))
        object.__setattr__(self, "sigmas", sigmas)
        if np.any(sigmas <= 0.0):
            raise ValueError("mode sigmas must be positive")
        if self.weights is None:
            object.__setattr__(
                self, "weights", np.full(means.shape[0], 1.0 / means.shape[0])
            )
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            object.__setattr__(self, "weights", w / w.sum())
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (means.shape[0],):
                raise ValueError("labels must assign one class per mode")
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def draw(self, count, rng):
        modes = rng.choice(self.means.shape[0], size=count, p=self.weights)
        points = self.means[modes] + self.sigmas[modes, None] * rng.standard_normal(
            (count, self.dim)
        )
        labels = None if self.labels is None else self.labels[modes]
        return points, labels

    def restrict_to_label(self, label):
        """Sub-mixture of the modes carrying one class label."""
        if self.labels is None:
            raise ValueError("mixture has no labels")
        keep = self.labels == label
        if not np.any(keep):
            raise ValueError(f"no mode has label {label}")
        return GaussianMixture(
            means=self.means[keep],
            sigmas=self.sigmas[keep],
            weights=self.weights[keep],
            labels=None,
        )


@dataclass(frozen=True)
class TwoMoons:
    """Two interleaving half circles in 2-D; classes are the two moons."""

    noise: float = 0.1

    dim = 2
    n_classes = 2

    def draw(self, count, rng):
        theta = rng.uniform(0.0, np.pi, size=count)
        labels = rng.integers(0, 2, size=count)
        x = np.where(labels == 0, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(labels == 0, np.sin(theta), 0.5 - np.sin(theta))
        points = np.stack([x, y], axis=1)
        points += self.noise * rng.standard_normal(points.shape)
        return points, labels


@dataclass(frozen=True)
class Checkerboard:
    """Uniform draws over the dark squares of a cells x cells board on [-2, 2]^2."""

    cells: int = 4

    dim = 2
    n_classes = 0

    def draw(self, count, rng):
        side = 4.0 / self.cells
        dark = [
            (i, j)
            for i in range(self.cells)
            for j in range(self.cells)
            if (i + j) % 2 == 0
        ]
        picks = rng.integers(0, len(dark), size=count)
        offsets = rng.uniform(0.0, side, size=(count, 2))
        corners = np.array([(-2.0 + i * side, -2.0 + j * side) for i, j in dark])
        return corners[picks] + offsets, None


def ring_mixture(n_modes=8, radius=4.0, sigma=0.3, labeled=True):
    """Equal-weight isotropic modes spaced uniformly on a circle."""
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = np.arange(n_modes) if labeled else None
    return GaussianMixture(means=means, sigmas=np.full(n_modes, sigma), labels=labels)


def marginal_velocity_oracle(dataset: GaussianMixture, path: AffinePath, x_t, t):
    """Exact marginal velocity and element-wise posterior velocity variance.

    The posterior over the data endpoint given x_t is itself a Gaussian
    mixture (component m contributes N(m_post, s_post^2 I) with weight
    proportional to w_m N(x_t; alpha mu_m, (alpha^2 sigma_m^2 + beta^2) I)).
    The conditional velocity is affine in the endpoint, so its posterior
    mean and variance follow from the mixture moments.
    """
    if not isinstance(dataset, GaussianMixture):
        raise TypeError("the velocity oracle requires a Gaussian mixture dataset")
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    c = path.coeffs(t)
    alpha = float(c.alpha)
    beta = float(c.beta)
    if beta == 0.0:
        raise SingularTimeError("oracle is undefined where beta_t = 0")
    d_alpha = float(c.d_alpha)
    d_beta = float(c.d_beta)
    n = dataset.dim
    sig2 = dataset.sigmas**2  # (M,)
    marg_var = alpha**2 * sig2 + beta**2  # variance of x_t given each mode
    diff = x[:, None, :] - alpha * dataset.means[None, :, :]  # (B, M, n)
    log_resp = (
        np.log(dataset.weights)[None, :]
        - 0.5 * n * np.log(2.0 * np.pi * marg_var)[None, :]
        - np.sum(diff**2, axis=2) / (2.0 * marg_var[None, :])
    )
    log_resp -= log_resp.max(axis=1, keepdims=True)
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)  # (B, M)

    # per-mode posterior of x1 given x_t
    s_post2 = sig2 * beta**2 / marg_var  # (M,)
    m_post = (
        dataset.means[None, :, :] * (beta**2 / marg_var)[None, :, None]
        + (alpha * sig2 / marg_var)[None, :, None] * x[:, None, :]
    )  # (B, M, n)

    # u(x_t | x1) = c1 * x1 + c0 * x_t with the affine-path coefficients
    c1 = (d_alpha * beta - d_beta * alpha) / beta
    c0 = d_beta / beta

    e_x1 = np.einsum("bm,bmn->bn", resp, m_post)
    e_x1_sq = np.einsum("bm,bmn->bn", resp, m_post**2 + s_post2[None, :, None])
    var_x1 = e_x1_sq - e_x1**2

    u = c1 * e_x1 + c0 * x
    var_u = c1**2 * var_x1
    if np.ndim(x_t) == 1:
        return u[0], var_u[0]
    return u, var_u
