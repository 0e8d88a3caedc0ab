"""Uncertainty-aware guidance, composed as velocity-field decorators.

Classifier-style guidance nudges the mean velocity along the gradient of a
pseudo-likelihood that rewards low predicted variance.  Classifier-free
guidance extrapolates conditional and null predictions with a scale
chosen per step to minimize the predicted variance of the extrapolated
velocity, clamped by a maximum scale; a fixed scale reproduces standard CFG.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularTimeError
from .paths import AffinePath, cg_coefficient

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 0.0
    cg_cadence: int = 2
    lambda_max: float = 0.0
    cfg_enabled: bool = False
    cg_enabled: bool = False
    fixed_lambda: float | None = None

    def validate(self):
        if self.w < 0.0:
            raise ValueError("w must be >= 0")
        if self.lambda_max < 0.0:
            raise ValueError("lambda_max must be >= 0")
        if self.cg_cadence < 1:
            raise ValueError("cg_cadence must be >= 1")
        if self.fixed_lambda is not None and self.fixed_lambda < 0.0:
            raise ValueError("fixed_lambda must be >= 0")


@dataclass(frozen=True)
class GuidedOutput:
    mean: np.ndarray
    var: np.ndarray
    lambda_used: np.ndarray | float | None = None


def pseudo_likelihood_f(var):
    """Negative squared mean of the element-wise variances.

    Larger (closer to zero) at low uncertainty; row-wise over a batch.
    """
    var = np.asarray(var, dtype=np.float64)
    m = var.mean(axis=-1)
    out = -(m**2)
    return float(out) if out.ndim == 0 else out


def _pseudo_likelihood_dvar(var):
    # d/dvar_i of -(mean(var))^2 = -2 mean(var) / n
    var = np.asarray(var, dtype=np.float64)
    n = var.shape[-1]
    return np.broadcast_to(-2.0 * var.mean(axis=-1, keepdims=True) / n, var.shape).copy()


def grad_pseudo_likelihood(model, x, t, cond, lambda_used=None):
    """Gradient w.r.t. x of f applied to the (possibly guided) variance.

    With ``lambda_used`` given, the variance is the squared extrapolation
    (1+lambda) sigma_y - lambda sigma_null and the gradient is chained
    through both conditional and null variance heads, holding lambda fixed.
    """
    if lambda_used is None:
        out = model.forward(x, t, cond)
        return model.var_input_grad(x, t, cond, _pseudo_likelihood_dvar(out.var))
    lam = np.atleast_1d(np.asarray(lambda_used, dtype=np.float64))[:, None]
    out_y = model.forward(x, t, cond)
    out_null = model.forward(x, t, None)
    sigma_y = np.sqrt(np.atleast_2d(out_y.var))
    sigma_null = np.sqrt(np.atleast_2d(out_null.var))
    sd = (1.0 + lam) * sigma_y - lam * sigma_null
    d_var_guided = _pseudo_likelihood_dvar(sd**2)
    d_sd = d_var_guided * 2.0 * sd
    d_var_y = (1.0 + lam) * d_sd / (2.0 * sigma_y)
    d_var_null = -lam * d_sd / (2.0 * sigma_null)
    grad = model.var_input_grad(x, t, cond, d_var_y)
    grad = grad + model.var_input_grad(x, t, None, d_var_null)
    return grad


def cg_correct(mean, x, t, model, cond, path: AffinePath, w, lambda_used=None):
    """Add the uncertainty-classifier correction b_t * w * grad f(sigma^2)."""
    grad = grad_pseudo_likelihood(model, x, t, cond, lambda_used=lambda_used)
    b_t = cg_coefficient(path, t)
    return mean + b_t * w * grad


def lambda_opt(sigma_y, sigma_null):
    """Unconstrained-then-clamped minimizer of ||sigma_y + lambda d||^2.

    d = sigma_y - sigma_null; returns max(0, -d.sigma_y / d.d), or 0 when the
    direction vanishes (the objective is then constant in lambda).
    Vectorized over leading batch rows.
    """
    sigma_y = np.atleast_2d(np.asarray(sigma_y, dtype=np.float64))
    sigma_null = np.atleast_2d(np.asarray(sigma_null, dtype=np.float64))
    if sigma_y.shape != sigma_null.shape:
        raise ValueError("sigma vectors must share a shape")
    d = sigma_y - sigma_null
    dd = np.sum(d * d, axis=-1)
    dy = np.sum(d * sigma_y, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(dd > 0.0, np.maximum(0.0, -dy / np.where(dd > 0.0, dd, 1.0)), 0.0)
    return lam if lam.size > 1 else float(lam[0])


def cfg_combine(model, x, t, cond, lambda_max, fixed_lambda=None):
    """Guided mean and variance from conditional/null extrapolation.

    The scale is min(lambda_opt, lambda_max), or the given fixed scale.  The
    extrapolated standard deviation is squared and floored at a small
    positive constant so the output variance stays strictly positive.
    """
    out_y = model.forward(x, t, cond)
    out_null = model.forward(x, t, None)
    mean_y = np.atleast_2d(out_y.mean)
    mean_null = np.atleast_2d(out_null.mean)
    sigma_y = np.sqrt(np.atleast_2d(out_y.var))
    sigma_null = np.sqrt(np.atleast_2d(out_null.var))
    if fixed_lambda is not None:
        lam = np.full(mean_y.shape[0], float(fixed_lambda))
    else:
        lam = np.minimum(np.atleast_1d(lambda_opt(sigma_y, sigma_null)), lambda_max)
    lam_col = lam[:, None]
    mean = (1.0 + lam_col) * mean_y - lam_col * mean_null
    sd = (1.0 + lam_col) * sigma_y - lam_col * sigma_null
    var = np.maximum(sd**2, VAR_FLOOR)
    if np.ndim(x) == 1:
        return GuidedOutput(mean=mean[0], var=var[0], lambda_used=float(lam[0]))
    return GuidedOutput(mean=mean, var=var, lambda_used=lam)


@dataclass
class GuidanceTrace:
    """Per-step logs emitted while sampling with guidance.

    ``sigma_stats`` holds per-step sufficient statistics
    (step, t, count, sum_y, sum_n, sum_yy, sum_nn, sum_yn) over the flattened
    conditional/null standard deviations, so correlations can be merged
    exactly across sample chunks.
    """

    lambda_rows: list = field(default_factory=list)  # (step, t, sample, lam_opt, lam_used)
    sigma_stats: list = field(default_factory=list)


class GuidedVelocity:
    """Velocity provider applying both guidance mechanisms in one step.

    Wraps a frozen model and is usable wherever a plain velocity field is;
    evaluation itself is stateless.  The classifier-free extrapolation runs
    at every step when enabled, the classifier-style variance correction
    only on steps matching its cadence (skipped steps receive no
    correction).  Call :meth:`record_trace` once per step to log per-sample
    guidance scales and the conditional/null sigma correlation.
    """

    def __init__(self, model, path: AffinePath, cond, config: GuidanceConfig,
                 trace: GuidanceTrace | None = None, sample_ids=None):
        config.validate()
        if (config.cfg_enabled or config.fixed_lambda is not None) and model.n_classes == 0:
            raise ValueError("classifier-free guidance requires a conditional model")
        self.model = model
        self.path = path
        self.cond = cond
        self.config = config
        self.trace = trace
        self.sample_ids = sample_ids

    def evaluate(self, x, t, step):
        """Guided (mean, var) at x for the given sampling step."""
        cfg = self.config
        lambda_used = None
        if cfg.cfg_enabled or cfg.fixed_lambda is not None:
            guided = cfg_combine(
                self.model, x, t, self.cond, cfg.lambda_max, fixed_lambda=cfg.fixed_lambda
            )
            mean, var, lambda_used = guided.mean, guided.var, guided.lambda_used
        else:
            out = self.model.forward(x, t, self.cond)
            mean, var = out.mean, out.var
        if cfg.cg_enabled and cfg.w > 0.0 and step % cfg.cg_cadence == 0:
            try:
                mean = cg_correct(
                    mean, x, t, self.model, self.cond, self.path, cfg.w,
                    lambda_used=lambda_used,
                )
            except SingularTimeError:
                pass  # alpha_t = 0: guidance undefined, leave the mean alone
        return mean, var

    def __call__(self, x, t, step):
        return self.evaluate(x, t, step)[0]

    def record_trace(self, x, t, step):
        """Log per-sample (lambda_opt, lambda_used) and sigma statistics."""
        if self.trace is None:
            return
        if not (self.config.cfg_enabled or self.config.fixed_lambda is not None):
            return
        out_y = self.model.forward(x, t, self.cond)
        out_null = self.model.forward(x, t, None)
        sigma_y = np.sqrt(np.atleast_2d(out_y.var))
        sigma_null = np.sqrt(np.atleast_2d(out_null.var))
        lam_opt = np.atleast_1d(lambda_opt(sigma_y, sigma_null))
        if self.config.fixed_lambda is not None:
            lam_used = np.full_like(lam_opt, self.config.fixed_lambda)
        else:
            lam_used = np.minimum(lam_opt, self.config.lambda_max)
        ids = self.sample_ids if self.sample_ids is not None else range(len(lam_opt))
        for sample_id, lo, lu in zip(ids, lam_opt, lam_used):
            self.trace.lambda_rows.append(
                (step, float(t), int(sample_id), float(lo), float(lu))
            )
        flat_y = sigma_y.ravel()
        flat_null = sigma_null.ravel()
        self.trace.sigma_stats.append(
            (
                step,
                float(t),
                flat_y.size,
                float(flat_y.sum()),
                float(flat_null.sum()),
                float((flat_y * flat_y).sum()),
                float((flat_null * flat_null).sum()),
                float((flat_y * flat_null).sum()),
            )
        )


def merge_sigma_correlations(sigma_stats):
    """Combine per-chunk sigma statistics into per-step Pearson correlations.

    Returns rows (step, t, pearson_r); chunks contribute exact sums, so the
    result does not depend on how samples were partitioned.
    """
    grouped = {}
    for step, t, count, sy, sn, syy, snn, syn in sigma_stats:
        acc = grouped.setdefault(step, [t, 0, 0.0, 0.0, 0.0, 0.0, 0.0])
        acc[1] += count
        acc[2] += sy
        acc[3] += sn
        acc[4] += syy
        acc[5] += snn
        acc[6] += syn
    rows = []
    for step in sorted(grouped):
        t, count, sy, sn, syy, snn, syn = grouped[step]
        cov = syn / count - (sy / count) * (sn / count)
        var_y = syy / count - (sy / count) ** 2
        var_n = snn / count - (sn / count) ** 2
        if count >= 2 and var_y > 0.0 and var_n > 0.0:
            r = cov / np.sqrt(var_y * var_n)
        else:
            r = float("nan")
        rows.append((step, t, float(r)))
    return rows
