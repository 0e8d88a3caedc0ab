"""Heteroscedastic flow-matching training.

The objective is a Gaussian NLL on the velocity with an optional correction
term built from a reweighted mini-batch estimate of the marginal velocity,
plus beta-NLL loss scaling.  A two-stage schedule first fits the mean with a
plain squared-error flow-matching loss, then switches to the full objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError
from .model import VelocityModel
from .paths import AffinePath, cond_velocity

# Raw log-densities below this are treated as total underflow; the
# estimator then falls back to the anchor's conditional velocity.
LOG_WEIGHT_FLOOR = -700.0


@dataclass
class TrainConfig:
    batch_size: int = 64
    beta: float = 1.0
    learning_rate: float = 1e-3
    steps: int = 6000
    ema_decay: float = 0.999
    use_correction: bool = True
    label_dropout: float = 0.1
    seed: int = 0
    pretrain_fraction: float = 0.7
    time_eps: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if not 0.0 <= self.pretrain_fraction <= 1.0:
            raise ValueError("pretrain_fraction must lie in [0, 1]")
        if not 0.0 <= self.label_dropout < 1.0:
            raise ValueError("label_dropout must lie in [0, 1)")


@dataclass
class LossBreakdown:
    total: float
    nll_term: float
    correction_term: float
    elements: np.ndarray | None = None


@dataclass
class TrainResult:
    model: VelocityModel
    ema_model: VelocityModel
    history: list = field(default_factory=list)  # rows (step, total, nll, correction)


def _gauss_log_density(path: AffinePath, x1_pool, x_t, t):
    """log N(x_t; alpha_t x1_b, beta_t^2 I) for every (query, pool) pair.

    Returns an (M, B) matrix for M queries against a pool of B endpoints.
    """
    c = path.coeffs(t)
    alpha = np.atleast_1d(c.alpha)[:, None, None]
    diff = x_t[:, None, :] - alpha * x1_pool[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    n = x_t.shape[1]
    beta2 = np.atleast_1d(c.beta)[:, None] ** 2
    return -0.5 * n * np.log(2.0 * np.pi * beta2) - sq / (2.0 * beta2)


def minibatch_marginal_velocity(path: AffinePath, batch_x1, x_t, t, anchor_velocity=None):
    """Density-reweighted mini-batch estimate of the marginal velocity.

    ``batch_x1`` is the (B, n) mini-batch of data endpoints; ``x_t`` is one
    query state or an (M, n) batch with per-query times ``t``.  Each
    endpoint's conditional velocity is weighted by the conditional Gaussian
    density of x_t given that endpoint, normalized in log space with max
    subtraction.  Queries whose raw log-weights all underflow fall back to
    ``anchor_velocity`` (by default the conditional velocity under the first
    batch endpoint), matching the single-endpoint semantics.
    """
    batch_x1 = np.asarray(batch_x1, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    if single:
        x_t = x_t[None, :]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x_t.shape[0],))
    logp = _gauss_log_density(path, batch_x1, x_t, t_arr)
    # conditional velocity of every query under every pool endpoint
    c = path.coeffs(t_arr)
    ratio = (c.d_beta / c.beta)[:, None, None]
    u_all = (
        c.d_alpha[:, None, None] * batch_x1[None, :, :]
        + ratio * (x_t[:, None, :] - c.alpha[:, None, None] * batch_x1[None, :, :])
    )
    peak = logp.max(axis=1)
    weights = np.exp(logp - peak[:, None])
    weights /= weights.sum(axis=1, keepdims=True)
    estimate = np.einsum("mb,mbn->mn", weights, u_all)
    underflow = peak < LOG_WEIGHT_FLOOR
    if np.any(underflow):
        if anchor_velocity is None:
            anchor_velocity = cond_velocity(
                path, x_t, np.broadcast_to(batch_x1[0], x_t.shape), t_arr
            )
        estimate[underflow] = anchor_velocity[underflow]
    return estimate[0] if single else estimate


def correction_term(u_estimate, u_cond):
    """Element-wise u_estimate^2 - u_cond^2."""
    u_estimate = np.asarray(u_estimate, dtype=np.float64)
    u_cond = np.asarray(u_cond, dtype=np.float64)
    return u_estimate**2 - u_cond**2


def conditional_nll(output, u_cond, u_estimate, beta=1.0, use_correction=True,
                    return_elements=False):
    """Heteroscedastic Gaussian NLL on the conditional velocity target.

    Per element: sg[var^beta] * (U/(2 var) + residual^2/(2 var) + log sigma),
    averaged over all elements, where U is the squared-velocity correction
    built from the mini-batch marginal estimate (included only when
    ``use_correction``).  The beta-NLL factor is a stop-gradient and only
    rescales values here.
    """
    mean = np.atleast_2d(output.mean)
    var = np.atleast_2d(output.var)
    u_cond = np.atleast_2d(np.asarray(u_cond, dtype=np.float64))
    u_estimate = np.atleast_2d(np.asarray(u_estimate, dtype=np.float64))
    residual = mean - u_cond
    log_sigma = 0.5 * np.log(var)
    scale = var**beta
    nll_el = scale * (residual**2 / (2.0 * var) + log_sigma)
    if use_correction:
        corr_el = scale * (correction_term(u_estimate, u_cond) / (2.0 * var))
    else:
        corr_el = np.zeros_like(nll_el)
    elements = nll_el + corr_el
    total = float(elements.mean())
    if not np.isfinite(total):
        bad = {
            "nll_term": float(nll_el.mean()),
            "correction_term": float(corr_el.mean()),
        }
        raise NonFiniteError(f"loss is not finite: {bad}")
    return LossBreakdown(
        total=total,
        nll_term=float(nll_el.mean()),
        correction_term=float(corr_el.mean()),
        elements=elements if return_elements else None,
    )


def conditional_nll_adjoints(output, u_cond, u_estimate, beta=1.0, use_correction=True):
    """Adjoints of the mean-over-elements loss w.r.t. (mean, clamped log sigma)."""
    mean = np.atleast_2d(output.mean)
    var = np.atleast_2d(output.var)
    u_cond = np.atleast_2d(np.asarray(u_cond, dtype=np.float64))
    u_estimate = np.atleast_2d(np.asarray(u_estimate, dtype=np.float64))
    residual = mean - u_cond
    scale = var**beta  # stop-gradient factor, applied as a constant
    numer = residual**2
    if use_correction:
        numer = numer + correction_term(u_estimate, u_cond)
    inv_count = 1.0 / mean.size
    d_mean = scale * residual / var * inv_count
    d_logsig = scale * (1.0 - numer / var) * inv_count
    return d_mean, d_logsig


def _plain_fm_adjoints(output, u_cond):
    """Stage-1 objective: mean squared velocity error / 2, no variance fit."""
    mean = np.atleast_2d(output.mean)
    u_cond = np.atleast_2d(np.asarray(u_cond, dtype=np.float64))
    residual = mean - u_cond
    value = float((residual**2).mean() / 2.0)
    return value, residual / mean.size


class AdamOptimizer:
    """Adam over a flat parameter vector with bias-corrected moments."""

    def __init__(self, n_params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def update(self, params, grads):
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _as_draw_fn(dataset):
    """Normalize a dataset argument into draw(count, rng) -> (X, labels)."""
    if hasattr(dataset, "draw"):
        return dataset.draw
    if isinstance(dataset, tuple):
        points, labels = dataset
    else:
        points, labels = dataset, None
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("dataset is empty")
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)

    def draw(count, rng):
        idx = rng.integers(0, points.shape[0], size=count)
        return points[idx], (None if labels is None else labels[idx])

    return draw


def train(model: VelocityModel, dataset, config: TrainConfig, path=None):
    """Run the full optimization loop; deterministic for a fixed seed.

    Each step samples times uniformly in [eps, 1-eps], draws base noise and a
    data batch (with label dropout for conditional models), forms the
    interpolated states and the mini-batch velocity estimate, and applies one
    Adam update.  An EMA copy of the parameters is maintained throughout.
    """
    config.validate()
    path = path or AffinePath("linear")
    draw = _as_draw_fn(dataset)
    rng = np.random.default_rng(config.seed)
    flat = model.get_flat()
    ema = flat.copy()
    optimizer = AdamOptimizer(
        flat.size,
        config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    pretrain_steps = int(round(config.pretrain_fraction * config.steps))
    history = []
    eps = config.time_eps
    for step in range(config.steps):
        t = rng.uniform(eps, 1.0 - eps, size=config.batch_size)
        x1, labels = draw(config.batch_size, rng)
        x0 = rng.standard_normal(x1.shape)
        cond = None
        if model.n_classes > 0 and labels is not None:
            cond = labels.copy()
            if config.label_dropout > 0.0:
                dropped = rng.random(config.batch_size) < config.label_dropout
                cond[dropped] = model.null_class
        c = path.coeffs(t)
        x_t = c.alpha[:, None] * x1 + c.beta[:, None] * x0
        u_cond = cond_velocity(path, x_t, x1, t)
        output, cache = model.forward(x_t, t, cond, want_cache=True)
        if step < pretrain_steps:
            total, d_mean = _plain_fm_adjoints(output, u_cond)
            breakdown = LossBreakdown(total=total, nll_term=total, correction_term=0.0)
            d_logsig = None
        else:
            u_estimate = minibatch_marginal_velocity(
                path, x1, x_t, t, anchor_velocity=u_cond
            )
            breakdown = conditional_nll(
                output, u_cond, u_estimate,
                beta=config.beta, use_correction=config.use_correction,
            )
            d_mean, d_logsig = conditional_nll_adjoints(
                output, u_cond, u_estimate,
                beta=config.beta, use_correction=config.use_correction,
            )
        if not np.isfinite(breakdown.total):
            raise NonFiniteError(f"training diverged at step {step}: {breakdown}")
        grads, _ = model.backward(cache, d_mean=d_mean, d_logsig=d_logsig)
        flat = optimizer.update(flat, grads)
        model.set_flat(flat)
        ema = config.ema_decay * ema + (1.0 - config.ema_decay) * flat
        history.append(
            (step, breakdown.total, breakdown.nll_term, breakdown.correction_term)
        )
    ema_model = model.copy()
    ema_model.set_flat(ema)
    return TrainResult(model=model, ema_model=ema_model, history=history)


def write_loss_csv(history, file):
    """Emit the loss curve as CSV rows (step, total, nll_term, correction_term)."""
    file.write("step,total,nll_term,correction_term\n")
    for step, total, nll, corr in history:
        file.write(f"{step},{total!r},{nll!r},{corr!r}\n")
